#include "crysflow/flow.hpp"

#include <cmath>

#include "crysflow/errors.hpp"

namespace crysflow {

LatticeStats lattice_statistics(std::span<const CrystalStructure> structures) {
  if (structures.empty()) throw EmptyInput("no structures for lattice statistics");
  LatticeStats st;
  st.mean.setZero();
  for (const auto& s : structures) st.mean += s.lattice.to_row();
  st.mean /= static_cast<double>(structures.size());
  Row6 var = Row6::Zero();
  for (const auto& s : structures) var += (s.lattice.to_row() - st.mean).array().square().matrix();
  var /= static_cast<double>(structures.size());
  st.std = var.array().sqrt().max(kMinLatticeStd).matrix();
  return st;
}

void validate(const PathConfig& cfg) {
  if (!(cfg.sigma_L >= 0.0)) throw InvalidArgument("sigma_L must be >= 0");
  if (!(cfg.sigma0_L.array() > 0.0).all()) throw InvalidArgument("sigma0_L entries must be > 0");
  if (!(cfg.time_beta_a > 0.0 && cfg.time_beta_b > 0.0)) {
    throw InvalidArgument("time Beta shape parameters must be > 0");
  }
}

Eigen::MatrixX3d torus_velocity(const Eigen::MatrixX3d& f0, const Eigen::MatrixX3d& f1) {
  if (f0.rows() != f1.rows()) throw ShapeMismatch("coordinate row counts differ");
  return f0.binaryExpr(f1, [](double a, double b) { return torus_velocity(a, b); });
}

Row6 lattice_velocity(const Row6& l0, const Row6& l1) { return l1 - l0; }

VelocityTarget target_velocity(const PathState& start, const PathState& end) {
  return {torus_velocity(start.F, end.F), lattice_velocity(start.L, end.L)};
}

PathState interpolate_state(const PathState& start, const PathState& end, double t,
                            const PathConfig& cfg, Rng& rng) {
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("flow time outside [0, 1]");
  PathState out;
  const Eigen::MatrixX3d u = torus_velocity(start.F, end.F);
  if (t == 1.0) {
    out.F = end.F.unaryExpr([](double x) { return wrap(x); });
  } else {
    out.F = (start.F + t * u).unaryExpr([](double x) { return wrap(x); });
  }
  out.L = t * end.L + (1.0 - t) * start.L;
  if (cfg.sigma_L > 0.0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int k = 0; k < 6; ++k) out.L(k) += cfg.sigma_L * normal(rng);
  }
  return out;
}

PathState sample_prior(std::size_t n_atoms, const PathConfig& cfg, Rng& rng) {
  if (n_atoms == 0) throw InvalidArgument("prior needs at least one atom");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  PathState out;
  out.F.resize(static_cast<Eigen::Index>(n_atoms), 3);
  for (Eigen::Index i = 0; i < out.F.rows(); ++i) {
    for (int k = 0; k < 3; ++k) out.F(i, k) = wrap(uniform(rng));
  }
  for (int k = 0; k < 6; ++k) {
    const double z = normal(rng);
    out.L(k) = cfg.sigma0_L(k) == 0.0 ? cfg.mu0_L(k) : cfg.mu0_L(k) + cfg.sigma0_L(k) * z;
  }
  return out;
}

double sample_time(const PathConfig& cfg, Rng& rng) {
  if (cfg.time_beta_a == 1.0 && cfg.time_beta_b == 1.0) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  }
  std::gamma_distribution<double> ga(cfg.time_beta_a, 1.0);
  std::gamma_distribution<double> gb(cfg.time_beta_b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}

FlowLoss fm_loss(const VelocityTarget& pred, const VelocityTarget& target, const PathConfig& cfg) {
  if (pred.uF.rows() != target.uF.rows()) throw ShapeMismatch("uF row counts differ");
  FlowLoss out;
  const Eigen::MatrixX3d dF = pred.uF - target.uF;
  const Row6 dL = pred.uL - target.uL;
  const double nF = static_cast<double>(dF.size());
  if (nF > 0) {
    out.loss_F = dF.squaredNorm() / nF;
    out.grad.uF = 2.0 * dF / nF;
  } else {
    out.grad.uF = Eigen::MatrixX3d::Zero(0, 3);
  }
  out.loss_L = dL.squaredNorm() / 6.0;
  out.grad.uL = cfg.lattice_weight * 2.0 * dL / 6.0;
  out.total = out.loss_F + cfg.lattice_weight * out.loss_L;
  return out;
}

}  // namespace crysflow
