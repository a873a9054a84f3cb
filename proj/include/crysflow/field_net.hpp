#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crysflow/flow.hpp"
#include "crysflow/structure.hpp"

namespace crysflow {

struct NetworkConfig {
  int n_layers = 3;
  int hidden_dim = 64;
  int n_fourier_freq = 8;  // K: edge features use frequencies 1..K per axis
  int n_time_freq = 8;     // time embedding uses frequencies 2^0 .. 2^(n-1)
  int attn_dim = 64;       // width of text tokens and attention projections
  int n_heads = 1;
  int max_z = 100;
  int n_buckets = 1024;    // rows of the hashed token table

  int edge_feature_dim() const { return 6 * n_fourier_freq; }
  // [z-scored lattice (6), t, sin/cos time embedding]
  int global_feature_dim() const { return 7 + 2 * n_time_freq; }

  bool operator==(const NetworkConfig&) const = default;
};

// Throws InvalidArgument for non-positive sizes or attn_dim not divisible by n_heads.
void validate(const NetworkConfig& cfg);

// Text condition in embedded form. `buckets` records which token-table row
// produced each token so gradients can flow back into the table.
struct ConditionEmbedding {
  Eigen::MatrixXd tokens;  // T x attn_dim, T may be 0
  std::vector<std::size_t> buckets;

  Eigen::Index length() const { return tokens.rows(); }
};

struct LayerParams {
  Eigen::MatrixXd edge_w1;  // (2H + 6K) x H, rows: receiver | sender | edge features
  Eigen::MatrixXd edge_b1;  // 1 x H
  Eigen::MatrixXd edge_w2;  // H x H
  Eigen::MatrixXd edge_b2;  // 1 x H
  Eigen::MatrixXd node_w;   // (2H + G) x H, rows: state | mean message | global
  Eigen::MatrixXd node_b;   // 1 x H
  Eigen::MatrixXd attn_q;   // H x A
  Eigen::MatrixXd attn_k;   // A x A
  Eigen::MatrixXd attn_v;   // A x A
  Eigen::MatrixXd attn_o;   // A x H
};

struct ModelParams {
  NetworkConfig config;
  // Not trained: lattice inputs are z-scored with these and the lattice head is
  // scaled by `std`.
  LatticeStats lattice_stats;

  Eigen::MatrixXd species_embed;  // (max_z + 1) x H
  Eigen::MatrixXd token_embed;    // n_buckets x A
  Eigen::MatrixXd global_w;       // G x H
  Eigen::MatrixXd global_b;       // 1 x H
  std::vector<LayerParams> layers;
  Eigen::MatrixXd coord_w;        // H x 3
  Eigen::MatrixXd coord_b;        // 1 x 3
  Eigen::MatrixXd lattice_w;      // H x 6
  Eigen::MatrixXd lattice_b;      // 1 x 6

  // Visits every trainable tensor in a fixed order with a stable name.
  template <class Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <class Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  std::size_t n_values() const;

 private:
  template <class Self, class Fn>
  static void visit(Self& self, Fn& fn) {
    fn(std::string("species_embed"), self.species_embed);
    fn(std::string("token_embed"), self.token_embed);
    fn(std::string("global_w"), self.global_w);
    fn(std::string("global_b"), self.global_b);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      fn(p + "edge_w1", L.edge_w1);
      fn(p + "edge_b1", L.edge_b1);
      fn(p + "edge_w2", L.edge_w2);
      fn(p + "edge_b2", L.edge_b2);
      fn(p + "node_w", L.node_w);
      fn(p + "node_b", L.node_b);
      fn(p + "attn_q", L.attn_q);
      fn(p + "attn_k", L.attn_k);
      fn(p + "attn_v", L.attn_v);
      fn(p + "attn_o", L.attn_o);
    }
    fn(std::string("coord_w"), self.coord_w);
    fn(std::string("coord_b"), self.coord_b);
    fn(std::string("lattice_w"), self.lattice_w);
    fn(std::string("lattice_b"), self.lattice_b);
  }
};

// All tensors zero, shapes from cfg.
ModelParams zero_params(const NetworkConfig& cfg);

// Weights ~ N(0, 1/fan_in), biases zero, embedding tables ~ N(0, 1).
// Reproducible from seed.
ModelParams init_params(const NetworkConfig& cfg, std::uint64_t seed);

// [sin(2 pi f_k t)..., cos(2 pi f_k t)...] with f_k = 2^k, k = 0..n_freq-1.
Eigen::RowVectorXd time_embed(double t, int n_freq);

// [sin(2 pi k d_x)..(k=1..K), same for y, z, then the cos block] with d = f_j - f_i.
Eigen::RowVectorXd edge_features(const Eigen::RowVector3d& f_i, const Eigen::RowVector3d& f_j, int n_freq);

struct FieldInput {
  const Eigen::MatrixX3d& F;
  Row6 L;
  double t;
  const Composition& composition;
  const ConditionEmbedding& cond;
};

// Intermediate values kept by the traced forward pass.
struct LayerTrace {
  Eigen::MatrixXd h_in, z1, z2, m, mean_msg, node_in, z3, h_mid;
  Eigen::MatrixXd q, k, v, attn_out;
  std::vector<Eigen::MatrixXd> probs;  // per head, N x T
};

struct ForwardTrace {
  Eigen::RowVectorXd global;
  Eigen::MatrixXd edge_feat;  // E x 6K
  std::vector<LayerTrace> layers;
  Eigen::MatrixXd h_final;
  Eigen::RowVectorXd pooled;
};

struct ForwardResult {
  VelocityTarget out;
  ForwardTrace trace;
};

// Throws ShapeMismatch when F rows differ from the atom count or the token
// width differs from attn_dim.
VelocityTarget forward(const ModelParams& params, const FieldInput& in);
ForwardResult forward_traced(const ModelParams& params, const FieldInput& in);

// Standalone single-block cross-attention with residual; returns node_states
// unchanged when there are no tokens. Used by forward for every layer.
Eigen::MatrixXd cross_attention(const Eigen::MatrixXd& node_states, const Eigen::MatrixXd& cond_tokens,
                                const LayerParams& layer, int n_heads);

// Accumulates d loss / d params into `grads` given d loss / d outputs.
// Token-table gradients are scattered through in.cond.buckets.
void backward(const ModelParams& params, const FieldInput& in, const ForwardTrace& trace,
              const VelocityTarget& d_out, ModelParams& grads);

// One flow-matching training pair evaluated at a single time. When cond.buckets
// is set, the loss functions re-read token rows from params.token_embed.
struct TrainingExample {
  Composition composition;
  PathState state;  // F_t, L_t
  double t = 0.0;
  ConditionEmbedding cond;
  VelocityTarget target;
};

struct BatchLoss {
  double loss = 0.0;
  double loss_F = 0.0;
  double loss_L = 0.0;
  ModelParams grads;
};

// Mean flow-matching loss over the batch and its exact gradient. Examples are
// split into contiguous shards evaluated by up to `threads` workers; shard
// gradients are summed in shard order. Throws NonFiniteGradient.
BatchLoss loss_and_gradient(const ModelParams& params, std::span<const TrainingExample> batch,
                            const PathConfig& path, int threads = 1);

// Loss only (no gradient), used by finite-difference checks.
double batch_loss(const ModelParams& params, std::span<const TrainingExample> batch, const PathConfig& path);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  ModelParams m;
  ModelParams v;
};

AdamState make_adam(const ModelParams& params);

void optimizer_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr);

}  // namespace crysflow
