#pragma once

#include <array>

#include <Eigen/Core>
#include <Eigen/LU>

namespace crysflow {

// Cell lengths in Angstrom, angles in degrees.
struct Lattice6 {
  double a = 1.0;
  double b = 1.0;
  double c = 1.0;
  double alpha = 90.0;
  double beta = 90.0;
  double gamma = 90.0;

  std::array<double, 6> to_array() const { return {a, b, c, alpha, beta, gamma}; }
  static Lattice6 from_array(const std::array<double, 6>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
  }
  Eigen::Matrix<double, 1, 6> to_row() const;
  static Lattice6 from_row(const Eigen::Matrix<double, 1, 6>& v);

  bool operator==(const Lattice6&) const = default;
};

// Lattice vectors a, b, c as matrix rows. Cartesian row vectors satisfy X = F * rows.
struct LatticeMatrix {
  Eigen::Matrix3d rows = Eigen::Matrix3d::Identity();

  double det() const { return rows.determinant(); }
  Eigen::Matrix3d gram() const { return rows * rows.transpose(); }
};

// 1 - cos^2(alpha) - cos^2(beta) - cos^2(gamma) + 2 cos(alpha) cos(beta) cos(gamma);
// the cell volume is a*b*c*sqrt(term).
double volume_term(const Lattice6& l);

// True when lengths are positive, angles lie in (0, 180) and the volume term is positive.
bool is_valid(const Lattice6& l);

double cell_volume(const Lattice6& l);

// a along x, b in the xy plane, c completing a right-handed cell.
// Throws DegenerateCell if the volume term is not positive.
LatticeMatrix lattice_to_matrix(const Lattice6& l);

// Throws DegenerateCell if det <= 1e-12.
Lattice6 matrix_to_lattice(const LatticeMatrix& m);

// Solves X = F * m for F. The result is not wrapped.
Eigen::MatrixX3d to_fractional(const LatticeMatrix& m, const Eigen::MatrixX3d& cart);
Eigen::MatrixX3d to_cartesian(const LatticeMatrix& m, const Eigen::MatrixX3d& frac);

}  // namespace crysflow
