#pragma once

#include <random>

#include <Eigen/QR>

#include "crysflow/flow.hpp"
#include "crysflow/lattice.hpp"
#include "crysflow/structure.hpp"

namespace testing {

using crysflow::Rng;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Random cell that is comfortably non-degenerate.
inline crysflow::Lattice6 random_lattice(Rng& rng) {
  for (;;) {
    crysflow::Lattice6 l{uniform(rng, 2.5, 7.0), uniform(rng, 2.5, 7.0), uniform(rng, 2.5, 7.0),
                         uniform(rng, 60.0, 120.0), uniform(rng, 60.0, 120.0), uniform(rng, 60.0, 120.0)};
    if (crysflow::volume_term(l) > 0.2) return l;
  }
}

inline crysflow::CrystalStructure random_structure(Rng& rng, int n_atoms, std::vector<int> pool = {11, 17, 8, 12}) {
  crysflow::CrystalStructure s;
  s.lattice = random_lattice(rng);
  s.frac.resize(n_atoms, 3);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (int i = 0; i < n_atoms; ++i) {
    s.composition.species.push_back(pool[pick(rng)]);
    for (int k = 0; k < 3; ++k) s.frac(i, k) = uniform(rng, 0.0, 1.0);
  }
  return s;
}

// Rotation (det +1) or roto-reflection from QR of a Gaussian matrix.
inline Eigen::Matrix3d random_orthogonal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Matrix3d a;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = n(rng);
  Eigen::HouseholderQR<Eigen::Matrix3d> qr(a);
  Eigen::Matrix3d q = qr.householderQ();
  // QR alone fixes the determinant sign, so flip a column half the time
  if (std::bernoulli_distribution(0.5)(rng)) q.col(0) *= -1.0;
  return q;
}

inline Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Matrix3d q = random_orthogonal(rng);
  if (q.determinant() < 0) q.col(0) *= -1.0;
  return q;
}

}  // namespace testing
