#pragma once

#include <random>
#include <span>

#include <Eigen/Core>

#include "crysflow/lattice.hpp"
#include "crysflow/structure.hpp"
#include "crysflow/torus.hpp"

namespace crysflow {

using Row6 = Eigen::Matrix<double, 1, 6>;
using Rng = std::mt19937_64;

// Per-dimension mean and standard deviation of training lattice parameters.
struct LatticeStats {
  Row6 mean = (Row6() << 5.0, 5.0, 5.0, 90.0, 90.0, 90.0).finished();
  Row6 std = Row6::Ones();
};

// Dimensions with (near) zero spread get this floor so the prior stays proper.
inline constexpr double kMinLatticeStd = 1e-2;

// Throws EmptyInput for an empty set.
LatticeStats lattice_statistics(std::span<const CrystalStructure> structures);

struct PathConfig {
  double sigma_L = 0.0;         // noise of the lattice path around the straight line
  Row6 mu0_L = LatticeStats{}.mean;
  Row6 sigma0_L = LatticeStats{}.std;
  double lattice_weight = 1.0;  // weight of the lattice term in the loss
  // Training time distribution Beta(a, b); (1, 1) is uniform.
  double time_beta_a = 1.0;
  double time_beta_b = 1.0;

  static PathConfig from_stats(const LatticeStats& stats) {
    PathConfig cfg;
    cfg.mu0_L = stats.mean;
    cfg.sigma0_L = stats.std;
    return cfg;
  }
};

// Throws InvalidArgument when sigma_L < 0, any sigma0 entry <= 0 or Beta shapes are not positive.
void validate(const PathConfig& cfg);

struct VelocityTarget {
  Eigen::MatrixX3d uF;  // per-atom fractional velocity
  Row6 uL = Row6::Zero();
};

struct PathState {
  Eigen::MatrixX3d F;
  Row6 L = Row6::Zero();
};

Eigen::MatrixX3d torus_velocity(const Eigen::MatrixX3d& f0, const Eigen::MatrixX3d& f1);

// Straight-line lattice velocity l1 - l0, constant in t.
Row6 lattice_velocity(const Row6& l0, const Row6& l1);

VelocityTarget target_velocity(const PathState& start, const PathState& end);

// F_t = wrap(f0 + t u_F); L_t ~ N(t l1 + (1 - t) l0, sigma_L^2 I). rng is only
// drawn from when sigma_L > 0.
PathState interpolate_state(const PathState& start, const PathState& end, double t,
                            const PathConfig& cfg, Rng& rng);

// F_0 uniform on the torus, L_0 = mu0 + sigma0 * z. Coordinates are drawn
// before lattice noise.
PathState sample_prior(std::size_t n_atoms, const PathConfig& cfg, Rng& rng);

double sample_time(const PathConfig& cfg, Rng& rng);

struct FlowLoss {
  double total = 0.0;
  double loss_F = 0.0;  // mean squared error over the 3N coordinate entries
  double loss_L = 0.0;  // mean squared error over the 6 lattice entries (unweighted)
  VelocityTarget grad;  // d total / d pred
};

// total = loss_F + lattice_weight * loss_L with uniform time weighting.
// Throws ShapeMismatch when the coordinate blocks disagree.
FlowLoss fm_loss(const VelocityTarget& pred, const VelocityTarget& target, const PathConfig& cfg);

}  // namespace crysflow
