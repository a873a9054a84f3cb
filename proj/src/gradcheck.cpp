#include "crysflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace crysflow {
namespace {

std::vector<TrainingExample> random_batch(const GradcheckOptions& o, const ModelParams& params, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> species(1, o.network.max_z);
  std::uniform_int_distribution<std::size_t> bucket(0, static_cast<std::size_t>(o.network.n_buckets) - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<TrainingExample> batch;
  for (int b = 0; b < o.batch_size; ++b) {
    TrainingExample ex;
    for (int i = 0; i < o.n_atoms; ++i) ex.composition.species.push_back(species(rng));
    ex.state.F.resize(o.n_atoms, 3);
    ex.target.uF.resize(o.n_atoms, 3);
    for (int i = 0; i < o.n_atoms; ++i) {
      for (int k = 0; k < 3; ++k) {
        ex.state.F(i, k) = u(rng);
        ex.target.uF(i, k) = u(rng) - 0.5;
      }
    }
    for (int k = 0; k < 6; ++k) {
      ex.state.L(k) = params.lattice_stats.mean(k) + normal(rng);
      ex.target.uL(k) = normal(rng);
    }
    ex.t = u(rng);
    for (int k = 0; k < o.n_tokens; ++k) {
      ex.cond.buckets.push_back(k + 1 == o.n_tokens && k > 0 ? ex.cond.buckets.front() : bucket(rng));
    }
    ex.cond.tokens.resize(o.n_tokens, o.network.attn_dim);
    batch.push_back(std::move(ex));
  }
  return batch;
}

}  // namespace

GradcheckReport gradient_check(const GradcheckOptions& o, std::uint64_t seed, const GradientHook& hook) {
  Rng rng(seed);
  ModelParams params = init_params(o.network, seed);
  // biases start at zero; randomize them so their gradients are generic
  std::normal_distribution<double> normal(0.0, 0.3);
  params.for_each([&](const std::string&, Eigen::MatrixXd& m) {
    if (m.rows() == 1) m = m.unaryExpr([&](double) { return normal(rng); });
  });
  params.lattice_stats.mean << 5.0, 6.0, 7.0, 90.0, 95.0, 100.0;
  params.lattice_stats.std << 0.5, 0.6, 0.7, 2.0, 3.0, 4.0;

  const std::vector<TrainingExample> batch = random_batch(o, params, rng);
  PathConfig path;
  path.lattice_weight = 0.7;

  BatchLoss analytic = loss_and_gradient(params, batch, path, 1);
  if (hook) hook(analytic.grads);

  std::set<Eigen::Index> species_rows;
  std::set<Eigen::Index> token_rows;
  for (const auto& ex : batch) {
    for (int z : ex.composition.species) species_rows.insert(z);
    for (std::size_t b : ex.cond.buckets) token_rows.insert(static_cast<Eigen::Index>(b));
  }

  std::vector<Eigen::MatrixXd*> analytic_tensors;
  analytic.grads.for_each([&](const std::string&, Eigen::MatrixXd& m) { analytic_tensors.push_back(&m); });

  GradcheckReport report;
  report.seed = seed;
  report.passed = true;
  std::size_t idx = 0;
  params.for_each([&](const std::string& name, Eigen::MatrixXd& w) {
    const Eigen::MatrixXd& ga = *analytic_tensors[idx++];
    const std::set<Eigen::Index>* rows = nullptr;
    if (name == "species_embed") rows = &species_rows;
    if (name == "token_embed") rows = &token_rows;

    double max_diff = 0.0, max_num = 0.0, max_ana = 0.0;
    TensorCheck tc;
    tc.name = name;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      const bool referenced = rows == nullptr || rows->count(r) > 0;
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        if (!referenced) {
          max_diff = std::max(max_diff, std::abs(ga(r, c)));
          continue;
        }
        const double orig = w(r, c);
        w(r, c) = orig + o.eps;
        const double lp = batch_loss(params, batch, path);
        w(r, c) = orig - o.eps;
        const double lm = batch_loss(params, batch, path);
        w(r, c) = orig;
        const double num = (lp - lm) / (2.0 * o.eps);
        max_diff = std::max(max_diff, std::abs(num - ga(r, c)));
        max_num = std::max(max_num, std::abs(num));
        max_ana = std::max(max_ana, std::abs(ga(r, c)));
        ++tc.n_checked;
      }
    }
    tc.rel_error = max_diff / std::max({max_num, max_ana, 1e-8});
    if (!(tc.rel_error < o.tolerance)) report.passed = false;
    if (report.worst_tensor.empty() || !(tc.rel_error <= report.worst_error)) {
      report.worst_error = tc.rel_error;
      report.worst_tensor = name;
    }
    report.tensors.push_back(std::move(tc));
  });
  return report;
}

}  // namespace crysflow
