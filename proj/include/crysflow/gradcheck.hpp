#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "crysflow/field_net.hpp"

namespace crysflow {

struct GradcheckOptions {
  NetworkConfig network = small_network();
  int n_atoms = 2;
  int batch_size = 2;
  int n_tokens = 3;     // the last token repeats the first bucket
  double eps = 1e-4;    // central-difference step
  double tolerance = 1e-4;

  static NetworkConfig small_network() {
    NetworkConfig c;
    c.n_layers = 2;
    c.hidden_dim = 8;
    c.n_fourier_freq = 3;
    c.n_time_freq = 3;
    c.attn_dim = 8;
    c.n_heads = 2;
    c.n_buckets = 16;
    return c;
  }
};

struct TensorCheck {
  std::string name;
  // max |analytic - numeric| / max(max |numeric|, max |analytic|, 1e-8) over the
  // checked entries of the tensor
  double rel_error = 0.0;
  std::size_t n_checked = 0;
};

struct GradcheckReport {
  std::uint64_t seed = 0;
  std::vector<TensorCheck> tensors;
  std::string worst_tensor;
  double worst_error = 0.0;
  bool passed = false;
};

// Lets tests tamper with the analytic gradient before comparison.
using GradientHook = std::function<void(ModelParams& grads)>;

// Random params and a random batch from `seed`; compares loss_and_gradient
// against central differences of batch_loss. Embedding tables are only
// differenced on referenced rows; all other rows must have exactly zero gradient.
GradcheckReport gradient_check(const GradcheckOptions& opts, std::uint64_t seed, const GradientHook& hook = {});

}  // namespace crysflow
