#include "crysflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <Eigen/Geometry>
#include <Eigen/LU>
#include "json.hpp"

#include "crysflow/elements.hpp"
#include "crysflow/errors.hpp"
#include "crysflow/torus.hpp"

namespace crysflow {
namespace {

using Eigen::Matrix3d;
using Eigen::Matrix3i;

Matrix3i make_m(int a, int b, int c, int d, int e, int f, int g, int h, int i) {
  Matrix3i m;
  m << a, b, c, d, e, f, g, h, i;
  return m;
}

int sign_of(double x, double eps) {
  if (std::abs(x) < eps) return 0;
  return x > 0 ? 1 : -1;
}

Eigen::RowVector3d wrapped_delta(const Eigen::RowVector3d& a, const Eigen::RowVector3d& b) {
  return {torus_delta(a(0), b(0)), torus_delta(a(1), b(1)), torus_delta(a(2), b(2))};
}

}  // namespace

LatticeMatrix niggli_reduce(const LatticeMatrix& m, Matrix3i* transform, double eps_rel) {
  const double vol = m.det();
  if (!(vol > 1e-12)) throw DegenerateCell("cell volume is not positive");
  const double e = eps_rel * std::cbrt(vol);
  Matrix3d G = m.gram();
  // column convention: new basis columns = old columns * total
  Matrix3i total = Matrix3i::Identity();
  auto apply = [&](const Matrix3i& M) {
    const Matrix3d Md = M.cast<double>();
    G = Md.transpose() * G * Md;
    total = total * M;
  };

  for (int iter = 0; iter < 100; ++iter) {
    double A = G(0, 0), B = G(1, 1), C = G(2, 2);
    double E = 2 * G(1, 2), N = 2 * G(0, 2), Y = 2 * G(0, 1);
    if (B + e < A || (std::abs(A - B) < e && std::abs(E) > std::abs(N) + e)) {
      apply(make_m(0, -1, 0, -1, 0, 0, 0, 0, -1));
      A = G(0, 0), B = G(1, 1), C = G(2, 2);
      E = 2 * G(1, 2), N = 2 * G(0, 2), Y = 2 * G(0, 1);
    }
    if (C + e < B || (std::abs(B - C) < e && std::abs(N) > std::abs(Y) + e)) {
      apply(make_m(-1, 0, 0, 0, 0, -1, 0, -1, 0));
      continue;
    }
    const int l = sign_of(E, e), mm = sign_of(N, e), n = sign_of(Y, e);
    if (l * mm * n == 1) {
      apply(make_m(l == -1 ? -1 : 1, 0, 0, 0, mm == -1 ? -1 : 1, 0, 0, 0, n == -1 ? -1 : 1));
    } else {
      int i = l == 1 ? -1 : 1;
      int j = mm == 1 ? -1 : 1;
      int k = n == 1 ? -1 : 1;
      if (i * j * k == -1) {
        if (n == 0) k = -1;
        else if (mm == 0) j = -1;
        else if (l == 0) i = -1;
      }
      apply(make_m(i, 0, 0, 0, j, 0, 0, 0, k));
    }
    A = G(0, 0), B = G(1, 1), C = G(2, 2);
    E = 2 * G(1, 2), N = 2 * G(0, 2), Y = 2 * G(0, 1);
    if (std::abs(E) > B + e || (std::abs(E - B) < e && 2 * N < Y - e) || (std::abs(E + B) < e && Y < -e)) {
      apply(make_m(1, 0, 0, 0, 1, E > 0 ? -1 : 1, 0, 0, 1));
      continue;
    }
    if (std::abs(N) > A + e || (std::abs(A - N) < e && 2 * E < Y - e) || (std::abs(A + N) < e && Y < -e)) {
      apply(make_m(1, 0, N > 0 ? -1 : 1, 0, 1, 0, 0, 0, 1));
      continue;
    }
    if (std::abs(Y) > A + e || (std::abs(A - Y) < e && 2 * E < N - e) || (std::abs(A + Y) < e && N < -e)) {
      apply(make_m(1, Y > 0 ? -1 : 1, 0, 0, 1, 0, 0, 0, 1));
      continue;
    }
    const double s = E + N + Y + A + B;
    if (s < -e || (std::abs(s) < e && 2 * (A + N) + Y > e)) {
      apply(make_m(1, 0, 1, 0, 1, 1, 0, 0, 1));
      continue;
    }
    break;
  }
  const Matrix3i T = total.transpose();
  if (transform != nullptr) *transform = T;
  LatticeMatrix out;
  out.rows = T.cast<double>() * m.rows;
  return out;
}

CrystalStructure change_basis(const CrystalStructure& s, const Matrix3i& T) {
  const LatticeMatrix m = lattice_to_matrix(s.lattice);
  LatticeMatrix nm;
  nm.rows = T.cast<double>() * m.rows;
  const Matrix3d inv = T.cast<double>().inverse().array().round().matrix();
  CrystalStructure out;
  out.composition = s.composition;
  out.lattice = matrix_to_lattice(nm);
  out.frac = (s.frac * inv).unaryExpr([](double x) { return wrap(x); });
  return out;
}

ReducedCell niggli_reduce(const CrystalStructure& s, double eps) {
  ReducedCell r;
  niggli_reduce(lattice_to_matrix(s.lattice), &r.transform, eps);
  r.structure = change_basis(s, r.transform);
  return r;
}

const std::array<Matrix3i, 24>& axis_rotations() {
  static const std::array<Matrix3i, 24> rots = [] {
    std::array<Matrix3i, 24> out;
    std::size_t k = 0;
    std::array<int, 3> perm{0, 1, 2};
    do {
      for (int signs = 0; signs < 8; ++signs) {
        Matrix3i m = Matrix3i::Zero();
        for (int r = 0; r < 3; ++r) m(r, perm[static_cast<std::size_t>(r)]) = (signs >> r) & 1 ? -1 : 1;
        if (m.cast<double>().determinant() > 0) out[k++] = m;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
  }();
  return rots;
}

double min_image_sq(const Eigen::RowVector3d& df, const Matrix3d& gram) {
  const Eigen::RowVector3d d(torus_delta(0.0, df(0)), torus_delta(0.0, df(1)), torus_delta(0.0, df(2)));
  double best = std::numeric_limits<double>::infinity();
  for (int a = -1; a <= 1; ++a) {
    for (int b = -1; b <= 1; ++b) {
      for (int c = -1; c <= 1; ++c) {
        const Eigen::RowVector3d v = d + Eigen::RowVector3d(a, b, c);
        best = std::min(best, (v * gram * v.transpose())(0, 0));
      }
    }
  }
  return best;
}

double min_interatomic_distance(const CrystalStructure& s) {
  const Matrix3d gram = lattice_to_matrix(s.lattice).gram();
  const auto n = s.frac.rows();
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const Eigen::RowVector3d d = wrapped_delta(s.frac.row(i), s.frac.row(j));
      for (int a = -1; a <= 1; ++a) {
        for (int b = -1; b <= 1; ++b) {
          for (int c = -1; c <= 1; ++c) {
            if (i == j && a == 0 && b == 0 && c == 0) continue;
            const Eigen::RowVector3d v = d + Eigen::RowVector3d(a, b, c);
            best = std::min(best, (v * gram * v.transpose())(0, 0));
          }
        }
      }
    }
  }
  return std::sqrt(best);
}

bool structural_validity(const CrystalStructure& s) { return min_interatomic_distance(s) >= kMinBondLength; }

ChargeBalance charge_balance(const Composition& c, std::size_t budget) {
  ChargeBalance r;
  if (c.empty()) return r;
  std::vector<std::pair<int, std::span<const int>>> items;
  for (const auto& [z, count] : c.counts()) items.emplace_back(count, oxidation_states(element(z)));
  std::vector<std::size_t> pick(items.size(), 0);
  while (true) {
    if (r.assignments_tried >= budget) {
      r.budget_exceeded = true;
      return r;
    }
    ++r.assignments_tried;
    long total = 0;
    for (std::size_t k = 0; k < items.size(); ++k) total += static_cast<long>(items[k].first) * items[k].second[pick[k]];
    if (total == 0) {
      r.valid = true;
      return r;
    }
    std::size_t k = 0;
    while (k < items.size() && ++pick[k] == items[k].second.size()) pick[k++] = 0;
    if (k == items.size()) return r;
  }
}

void validate(const MatchConfig& cfg) {
  if (!(cfg.ltol > 0 && cfg.stol > 0 && cfg.angle_tol > 0)) throw InvalidArgument("match tolerances must be positive");
}

std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw ShapeMismatch("assignment cost must be square");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials formulation
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assign(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j) assign[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return assign;
}

bool lattices_compatible(const Lattice6& a, const Lattice6& b, const MatchConfig& cfg) {
  const auto x = a.to_array();
  const auto y = b.to_array();
  for (int k = 0; k < 3; ++k) {
    if (std::max(x[k] / y[k], y[k] / x[k]) - 1.0 > cfg.ltol) return false;
  }
  for (int k = 3; k < 6; ++k) {
    if (std::abs(x[k] - y[k]) > cfg.angle_tol) return false;
  }
  return true;
}

double anchored_rmsd(const CrystalStructure& a, const CrystalStructure& b) {
  if (!(a.composition.counts() == b.composition.counts())) throw InvalidArgument("compositions differ");
  const auto n = static_cast<Eigen::Index>(a.natoms());
  Lattice6 avg = Lattice6::from_row(0.5 * (a.lattice.to_row() + b.lattice.to_row()));
  const LatticeMatrix m = lattice_to_matrix(avg);
  const Matrix3d gram = m.gram();
  const double scale = std::cbrt(m.det() / static_cast<double>(n));

  std::map<int, std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>>> blocks;
  for (Eigen::Index i = 0; i < n; ++i) {
    blocks[a.composition.species[static_cast<std::size_t>(i)]].first.push_back(i);
    blocks[b.composition.species[static_cast<std::size_t>(i)]].second.push_back(i);
  }

  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j : blocks[a.composition.species[static_cast<std::size_t>(i)]].second) {
      const Eigen::RowVector3d tau = a.frac.row(i) - b.frac.row(j);
      double total = 0.0;
      for (const auto& [z, blk] : blocks) {
        const auto& [ia, ib] = blk;
        const auto k = static_cast<Eigen::Index>(ia.size());
        Eigen::MatrixXd cost(k, k);
        for (Eigen::Index p = 0; p < k; ++p) {
          for (Eigen::Index q = 0; q < k; ++q) {
            cost(p, q) = min_image_sq(b.frac.row(ib[static_cast<std::size_t>(q)]) + tau -
                                          a.frac.row(ia[static_cast<std::size_t>(p)]),
                                      gram);
          }
        }
        const std::vector<int> asg = hungarian(cost);
        for (Eigen::Index p = 0; p < k; ++p) total += cost(p, asg[static_cast<std::size_t>(p)]);
        if (total >= best) break;
      }
      best = std::min(best, total);
    }
  }
  return std::sqrt(best / static_cast<double>(n)) / scale;
}

std::optional<double> match_structures(const CrystalStructure& a, const CrystalStructure& b, const MatchConfig& cfg) {
  validate(cfg);
  if (a.natoms() != b.natoms()) return std::nullopt;
  if (reduced_formula(a.composition) != reduced_formula(b.composition)) return std::nullopt;
  const ReducedCell ra = niggli_reduce(a);
  const ReducedCell rb = niggli_reduce(b);
  double best = std::numeric_limits<double>::infinity();
  for (const Matrix3i& rot : axis_rotations()) {
    const CrystalStructure cand = change_basis(rb.structure, rot);
    if (!lattices_compatible(ra.structure.lattice, cand.lattice, cfg)) continue;
    best = std::min(best, anchored_rmsd(ra.structure, cand));
  }
  if (best <= cfg.stol) return best;
  return std::nullopt;
}

MatchSummary match_rate_and_rmsd(std::span<const CrystalStructure> gen, std::span<const CrystalStructure> ref,
                                 const MatchConfig& cfg) {
  if (gen.size() != ref.size()) throw LengthMismatch("generated and reference sets differ in length");
  MatchSummary s;
  double sum = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    s.per_pair.push_back(match_structures(gen[i], ref[i], cfg));
    if (s.per_pair.back()) {
      ++s.n_matched;
      sum += *s.per_pair.back();
    }
  }
  s.match_rate = gen.empty() ? 0.0 : 100.0 * static_cast<double>(s.n_matched) / static_cast<double>(gen.size());
  s.rmsd_defined = s.n_matched > 0;
  s.mean_rmsd = s.rmsd_defined ? sum / static_cast<double>(s.n_matched) : std::numeric_limits<double>::quiet_NaN();
  return s;
}

Eigen::VectorXd structure_fingerprint(const CrystalStructure& s) {
  const LatticeMatrix m = lattice_to_matrix(s.lattice);
  const Matrix3d gram = m.gram();
  const double vol = m.det();
  const auto& r = m.rows;
  // interplanar spacings bound how many images can fall inside the cutoff
  std::array<int, 3> reach{};
  for (int k = 0; k < 3; ++k) {
    const double spacing = vol / r.row((k + 1) % 3).cross(r.row((k + 2) % 3)).norm();
    reach[static_cast<std::size_t>(k)] = std::min(50, static_cast<int>(std::ceil(kRdfCutoff / spacing)) + 1);
  }
  const int n_bins = static_cast<int>(std::lround(kRdfCutoff / kRdfBin));
  Eigen::VectorXd hist = Eigen::VectorXd::Zero(n_bins);
  const auto n = s.frac.rows();
  const double cut2 = kRdfCutoff * kRdfCutoff;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const Eigen::RowVector3d d = wrapped_delta(s.frac.row(i), s.frac.row(j));
      for (int a = -reach[0]; a <= reach[0]; ++a) {
        for (int b = -reach[1]; b <= reach[1]; ++b) {
          for (int c = -reach[2]; c <= reach[2]; ++c) {
            if (i == j && a == 0 && b == 0 && c == 0) continue;
            const Eigen::RowVector3d v = d + Eigen::RowVector3d(a, b, c);
            const double d2 = (v * gram * v.transpose())(0, 0);
            if (d2 >= cut2) continue;
            const int bin = std::min(n_bins - 1, static_cast<int>(std::sqrt(d2) / kRdfBin));
            hist(bin) += 1.0;
          }
        }
      }
    }
  }
  const double norm = hist.norm();
  if (norm > 0) hist /= norm;
  return hist;
}

Eigen::VectorXd composition_features(const Composition& c) {
  validate(c);
  Eigen::VectorXd out(12);
  const double n = static_cast<double>(c.size());
  for (int p = 0; p < 3; ++p) {
    Eigen::VectorXd vals(static_cast<Eigen::Index>(c.size()));
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto& e = element(c.species[i]);
      vals(static_cast<Eigen::Index>(i)) = p == 0 ? e.z : (p == 1 ? e.electronegativity : e.covalent_radius);
    }
    const double mean = vals.mean();
    out(4 * p) = mean;
    out(4 * p + 1) = std::sqrt((vals.array() - mean).square().sum() / n);
    out(4 * p + 2) = vals.minCoeff();
    out(4 * p + 3) = vals.maxCoeff();
  }
  return out;
}

CoverageResult coverage_from_fingerprints(const Eigen::MatrixXd& gs, const Eigen::MatrixXd& gc,
                                          const Eigen::MatrixXd& ts, const Eigen::MatrixXd& tc,
                                          const CoverageConfig& cfg) {
  if (gs.rows() == 0 || ts.rows() == 0) throw EmptyInput("coverage needs non-empty sets");
  std::vector<char> test_hit(static_cast<std::size_t>(ts.rows()), 0), gen_hit(static_cast<std::size_t>(gs.rows()), 0);
  for (Eigen::Index t = 0; t < ts.rows(); ++t) {
    for (Eigen::Index g = 0; g < gs.rows(); ++g) {
      const bool close = (ts.row(t) - gs.row(g)).norm() <= cfg.struct_threshold &&
                         (tc.row(t) - gc.row(g)).norm() <= cfg.comp_threshold;
      if (close) {
        test_hit[static_cast<std::size_t>(t)] = 1;
        gen_hit[static_cast<std::size_t>(g)] = 1;
      }
    }
  }
  CoverageResult r;
  r.recall = 100.0 * static_cast<double>(std::count(test_hit.begin(), test_hit.end(), 1)) / static_cast<double>(ts.rows());
  r.precision = 100.0 * static_cast<double>(std::count(gen_hit.begin(), gen_hit.end(), 1)) / static_cast<double>(gs.rows());
  return r;
}

CoverageResult coverage(std::span<const CrystalStructure> gen, std::span<const CrystalStructure> test,
                        const CoverageConfig& cfg) {
  if (gen.empty() || test.empty()) throw EmptyInput("coverage needs non-empty sets");
  auto build = [](std::span<const CrystalStructure> set, Eigen::MatrixXd& st, Eigen::MatrixXd& co) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      const Eigen::VectorXd f = structure_fingerprint(set[i]);
      const Eigen::VectorXd c = composition_features(set[i].composition);
      if (i == 0) {
        st.resize(static_cast<Eigen::Index>(set.size()), f.size());
        co.resize(static_cast<Eigen::Index>(set.size()), c.size());
      }
      st.row(static_cast<Eigen::Index>(i)) = f.transpose();
      co.row(static_cast<Eigen::Index>(i)) = c.transpose();
    }
  };
  Eigen::MatrixXd gs, gc, ts, tc;
  build(gen, gs, gc);
  build(test, ts, tc);
  return coverage_from_fingerprints(gs, gc, ts, tc, cfg);
}

double wasserstein1(std::span<const double> xs, std::span<const double> ys) {
  if (xs.empty() || ys.empty()) throw EmptyInput("wasserstein1 needs non-empty samples");
  std::vector<double> a(xs.begin(), xs.end()), b(ys.begin(), ys.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> all(a);
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double total = 0.0;
  std::size_t ia = 0, ib = 0;
  for (std::size_t k = 0; k + 1 < all.size(); ++k) {
    while (ia < a.size() && a[ia] <= all[k]) ++ia;
    while (ib < b.size() && b[ib] <= all[k]) ++ib;
    total += std::abs(static_cast<double>(ia) / na - static_cast<double>(ib) / nb) * (all[k + 1] - all[k]);
  }
  return total;
}

PropertyStats property_stats(std::span<const CrystalStructure> gen, std::span<const CrystalStructure> test) {
  if (gen.empty() || test.empty()) throw EmptyInput("property statistics need non-empty sets");
  auto collect = [](std::span<const CrystalStructure> set, std::vector<double>& dens, std::vector<double>& nel) {
    for (const auto& s : set) {
      dens.push_back(volume_and_density(s).density);
      nel.push_back(static_cast<double>(s.composition.counts().size()));
    }
  };
  std::vector<double> gd, gn, td, tn;
  collect(gen, gd, gn);
  collect(test, td, tn);
  return {wasserstein1(gd, td), wasserstein1(gn, tn)};
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j = nlohmann::json::object();
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("struct_validity", r.struct_validity);
  put("comp_validity", r.comp_validity);
  put("cov_recall", r.cov_recall);
  put("cov_precision", r.cov_precision);
  put("wdist_density", r.wdist_density);
  put("wdist_nel", r.wdist_nel);
  if (r.match_rate) {
    j["match_rate"] = *r.match_rate;
    j["rmsd_defined"] = r.mean_rmsd.has_value();
    j["mean_rmsd"] = r.mean_rmsd ? nlohmann::json(*r.mean_rmsd) : nlohmann::json(nullptr);
  }
  j["n_generated"] = r.n_generated;
  j["n_reference"] = r.n_reference;
  return j;
}

}  // namespace crysflow
