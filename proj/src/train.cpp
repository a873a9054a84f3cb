#include "crysflow/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "crysflow/errors.hpp"
#include "crysflow/metrics.hpp"

namespace crysflow {
namespace {

std::vector<std::size_t> buckets_of(const std::string& text, int n_buckets) {
  std::vector<std::size_t> out;
  for (const auto& tok : tokenize(text)) out.push_back(token_bucket(tok, static_cast<std::size_t>(n_buckets)));
  return out;
}

}  // namespace

Eigen::MatrixX3d align_to_prior(const Eigen::MatrixX3d& prior, const Eigen::MatrixX3d& target,
                                const Composition& composition) {
  if (prior.rows() != target.rows() || static_cast<std::size_t>(target.rows()) != composition.species.size()) {
    throw ShapeMismatch("alignment needs matching atom counts");
  }
  Eigen::MatrixX3d out = target;
  std::map<int, std::vector<Eigen::Index>> groups;
  for (std::size_t i = 0; i < composition.species.size(); ++i) {
    groups[composition.species[i]].push_back(static_cast<Eigen::Index>(i));
  }
  for (const auto& [z, idx] : groups) {
    const auto n = static_cast<Eigen::Index>(idx.size());
    if (n == 1) continue;
    Eigen::MatrixXd cost(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
      for (Eigen::Index b = 0; b < n; ++b) {
        double d = 0.0;
        for (int k = 0; k < 3; ++k) {
          const double dk = torus_delta(prior(idx[a], k), target(idx[b], k));
          d += dk * dk;
        }
        cost(a, b) = d;
      }
    }
    const std::vector<int> assign = hungarian(cost);
    for (Eigen::Index a = 0; a < n; ++a) out.row(idx[a]) = target.row(idx[assign[a]]);
  }
  return out;
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw InvalidArgument("learning rate must be > 0");
  if (cfg.steps < 0) throw InvalidArgument("step count must be >= 0");
  if (cfg.batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  if (cfg.log_every < 1) throw InvalidArgument("log interval must be >= 1");
  if (!(cfg.conditional_text_prob >= 0.0 && cfg.conditional_text_prob <= 1.0)) {
    throw InvalidArgument("conditional_text_prob must lie in [0, 1]");
  }
  if (!(cfg.lr_floor > 0.0 && cfg.lr_floor <= 1.0)) throw InvalidArgument("lr_floor must lie in (0, 1]");
}

TrainingExample make_example(const TrainingItem& item, const std::vector<std::size_t>& buckets,
                             const PathConfig& path, bool translate, bool align, Rng& rng) {
  const CrystalStructure& s = item.structure;
  TrainingExample ex;
  ex.composition = s.composition;
  const double t = sample_time(path, rng);
  PathState end;
  end.F = s.frac;
  end.L = s.lattice.to_row();
  if (translate) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Eigen::RowVector3d tau(u(rng), u(rng), u(rng));
    end.F = (end.F.rowwise() + tau).unaryExpr([](double x) { return wrap(x); });
  }
  const PathState start = sample_prior(s.natoms(), path, rng);
  if (align) end.F = align_to_prior(start.F, end.F, s.composition);
  ex.state = interpolate_state(start, end, t, path, rng);
  ex.t = t;
  ex.target = target_velocity(start, end);
  ex.cond.buckets = buckets;
  return ex;
}

TrainOutcome train_flow_model(std::span<const TrainingItem> items, const NetworkConfig& net, const PathConfig& path_in,
                              const TrainConfig& cfg, std::uint64_t seed, int threads, const LossCallback& on_log) {
  if (items.empty()) throw EmptyInput("no training structures");
  validate(cfg);
  std::vector<CrystalStructure> structures;
  structures.reserve(items.size());
  for (const auto& it : items) structures.push_back(it.structure);
  const LatticeStats stats = lattice_statistics(structures);

  PathConfig path = path_in;
  path.mu0_L = stats.mean;
  path.sigma0_L = stats.std;
  validate(path);

  TrainOutcome out;
  out.final_model.path = path;
  out.final_model.params = init_params(net, seed);
  out.final_model.params.lattice_stats = stats;
  ModelParams& params = out.final_model.params;

  // token buckets for the structural and the composition-only text of each item
  std::vector<std::vector<std::size_t>> structural(items.size()), templated(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    const std::string text = it.description.empty()
                                 ? describe_structure(it.structure, it.space_group, DescriptorMode::Oracle).text
                                 : it.description;
    structural[i] = buckets_of(text, net.n_buckets);
    templated[i] = buckets_of(describe_composition(it.structure.composition, it.space_group).text, net.n_buckets);
  }

  Rng rng(seed);
  AdamState adam = make_adam(params);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::bernoulli_distribution use_template(cfg.conditional_text_prob);

  out.best_model = out.final_model;
  out.best_loss = std::numeric_limits<double>::infinity();
  double acc = 0.0, acc_F = 0.0, acc_L = 0.0;
  int acc_n = 0;

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<TrainingExample> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      const auto& buckets = use_template(rng) ? templated[i] : structural[i];
      batch.push_back(make_example(items[i], buckets, path, cfg.translate_augment, cfg.align_prior, rng));
    }
    double lr = cfg.lr;
    if (cfg.cosine_decay && cfg.steps > 1) {
      const double progress = static_cast<double>(step - 1) / static_cast<double>(cfg.steps - 1);
      lr = cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    }
    const BatchLoss bl = loss_and_gradient(params, batch, path, threads);
    optimizer_step(params, bl.grads, adam, lr);
    acc += bl.loss;
    acc_F += bl.loss_F;
    acc_L += bl.loss_L;
    ++acc_n;
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      LossRecord rec{step, acc / acc_n, acc_F / acc_n, acc_L / acc_n, lr};
      out.log.push_back(rec);
      if (on_log) on_log(rec);
      if (rec.loss < out.best_loss) {
        out.best_loss = rec.loss;
        out.best_model.params = params;
      }
      acc = acc_F = acc_L = 0.0;
      acc_n = 0;
    }
  }
  if (cfg.steps == 0) out.best_loss = std::numeric_limits<double>::quiet_NaN();
  std::ostringstream os;
  os << rng;
  out.rng_state = os.str();
  return out;
}

}  // namespace crysflow
