#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "crysflow/sampler.hpp"

namespace crysflow {

struct TrainConfig {
  double lr = 1e-3;
  int steps = 2000;
  int batch_size = 16;
  int log_every = 50;
  // Probability of conditioning an example on the composition-only template
  // instead of its stored structural description.
  double conditional_text_prob = 0.5;
  // Shift each target structure by a random global translation.
  bool translate_augment = true;
  // Re-pair same-species target atoms with prior atoms by a minimum total
  // torus distance assignment before building the path.
  bool align_prior = true;
  // Cosine decay of the learning rate down to lr * lr_floor.
  bool cosine_decay = true;
  double lr_floor = 0.1;
};

// Throws InvalidArgument.
void validate(const TrainConfig& cfg);

struct TrainingItem {
  CrystalStructure structure;
  SpaceGroup space_group;
  std::string description;  // structural description; generated when empty
};

struct LossRecord {
  int step = 0;
  double loss = 0.0;
  double loss_F = 0.0;
  double loss_L = 0.0;
  double lr = 0.0;
};

struct TrainOutcome {
  FlowModel final_model;
  FlowModel best_model;  // lowest logged window loss
  double best_loss = 0.0;
  std::vector<LossRecord> log;
  std::string rng_state;
};

using LossCallback = std::function<void(const LossRecord&)>;

// Lattice statistics of `items` set the prior and the network's lattice
// normalization. Each record averages the losses since the previous record.
// steps == 0 returns the initialized model. Throws EmptyInput, NonFiniteGradient.
TrainOutcome train_flow_model(std::span<const TrainingItem> items, const NetworkConfig& net, const PathConfig& path,
                              const TrainConfig& cfg, std::uint64_t seed, int threads = 1,
                              const LossCallback& on_log = {});

// Reorders the rows of `target` within each species so that the summed squared
// torus distance to `prior` is minimal. The result describes the same crystal.
Eigen::MatrixX3d align_to_prior(const Eigen::MatrixX3d& prior, const Eigen::MatrixX3d& target,
                                const Composition& composition);

// Draws one flow-matching example for `item` (used by training and tests).
TrainingExample make_example(const TrainingItem& item, const std::vector<std::size_t>& buckets,
                             const PathConfig& path, bool translate, bool align, Rng& rng);

}  // namespace crysflow
