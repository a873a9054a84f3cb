#include "crysflow/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/LU>

#include "crysflow/errors.hpp"

namespace crysflow {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kMinDet = 1e-12;

double angle_between(const Eigen::Vector3d& u, const Eigen::Vector3d& v) {
  double c = u.dot(v) / (u.norm() * v.norm());
  return std::acos(std::clamp(c, -1.0, 1.0)) / kDegToRad;
}

}  // namespace

Eigen::Matrix<double, 1, 6> Lattice6::to_row() const {
  Eigen::Matrix<double, 1, 6> r;
  r << a, b, c, alpha, beta, gamma;
  return r;
}

Lattice6 Lattice6::from_row(const Eigen::Matrix<double, 1, 6>& v) {
  return {v(0), v(1), v(2), v(3), v(4), v(5)};
}

double volume_term(const Lattice6& l) {
  const double ca = std::cos(l.alpha * kDegToRad);
  const double cb = std::cos(l.beta * kDegToRad);
  const double cg = std::cos(l.gamma * kDegToRad);
  return 1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg;
}

bool is_valid(const Lattice6& l) {
  for (double len : {l.a, l.b, l.c}) {
    if (!std::isfinite(len) || len <= 0.0) return false;
  }
  for (double ang : {l.alpha, l.beta, l.gamma}) {
    if (!std::isfinite(ang) || ang <= 0.0 || ang >= 180.0) return false;
  }
  // exactly flat cells can leave a rounding residue of order 1e-16
  return volume_term(l) > 1e-12;
}

double cell_volume(const Lattice6& l) {
  const double term = volume_term(l);
  if (!(term > 0.0)) throw DegenerateCell("cell volume term is not positive");
  return l.a * l.b * l.c * std::sqrt(term);
}

LatticeMatrix lattice_to_matrix(const Lattice6& l) {
  if (!is_valid(l)) throw DegenerateCell("lattice parameters do not describe a valid cell");
  const double ca = std::cos(l.alpha * kDegToRad);
  const double cb = std::cos(l.beta * kDegToRad);
  const double cg = std::cos(l.gamma * kDegToRad);
  const double sg = std::sin(l.gamma * kDegToRad);
  const double cy = (ca - cb * cg) / sg;
  const double cz2 = 1.0 - cb * cb - cy * cy;
  if (!(cz2 > 0.0)) throw DegenerateCell("cell volume term is not positive");
  LatticeMatrix m;
  m.rows << l.a, 0.0, 0.0,
            l.b * cg, l.b * sg, 0.0,
            l.c * cb, l.c * cy, l.c * std::sqrt(cz2);
  return m;
}

Lattice6 matrix_to_lattice(const LatticeMatrix& m) {
  if (!(m.det() > kMinDet)) throw DegenerateCell("lattice matrix determinant <= 1e-12");
  const Eigen::Vector3d a = m.rows.row(0).transpose();
  const Eigen::Vector3d b = m.rows.row(1).transpose();
  const Eigen::Vector3d c = m.rows.row(2).transpose();
  return {a.norm(), b.norm(), c.norm(), angle_between(b, c), angle_between(a, c), angle_between(a, b)};
}

Eigen::MatrixX3d to_fractional(const LatticeMatrix& m, const Eigen::MatrixX3d& cart) {
  if (!(std::abs(m.det()) > kMinDet)) throw DegenerateCell("singular lattice matrix");
  // X = F m  <=>  m^T F^T = X^T
  Eigen::PartialPivLU<Eigen::Matrix3d> lu(m.rows.transpose());
  Eigen::MatrixX3d out = lu.solve(cart.transpose()).transpose();
  return out;
}

Eigen::MatrixX3d to_cartesian(const LatticeMatrix& m, const Eigen::MatrixX3d& frac) {
  return frac * m.rows;
}

}  // namespace crysflow
