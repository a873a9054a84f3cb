#include <cmath>
#include <vector>

#include "crysflow/errors.hpp"
#include "crysflow/metrics.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace crysflow;

namespace {

CrystalStructure cubic(double a, std::vector<int> species, std::vector<Eigen::RowVector3d> rows) {
  CrystalStructure s;
  s.composition.species = std::move(species);
  s.lattice = {a, a, a, 90, 90, 90};
  s.frac.resize(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) s.frac.row(static_cast<Eigen::Index>(i)) = rows[i];
  return s;
}

CrystalStructure rock_salt_pair(double a, int cation = 11, int anion = 17) {
  return cubic(a, {cation, anion}, {{0, 0, 0}, {0.5, 0.5, 0.5}});
}

CrystalStructure translated(CrystalStructure s, const Eigen::RowVector3d& t) {
  for (Eigen::Index i = 0; i < s.frac.rows(); ++i) s.frac.row(i) += t;
  return wrap_structure(s);
}

}  // namespace

TEST_CASE("structural validity") {
  CHECK(structural_validity(rock_salt_pair(4.0)));  // closest pair 3.46
  CHECK(min_interatomic_distance(rock_salt_pair(4.0)) == doctest::Approx(2.0 * std::sqrt(3.0)));
  CHECK_FALSE(structural_validity(cubic(4.0, {11, 17}, {{0.1, 0.1, 0.1}, {0.1, 0.1, 0.1}})));
  CHECK_FALSE(structural_validity(cubic(0.4, {11}, {{0, 0, 0}})));  // self image at 0.4
  CHECK(structural_validity(cubic(0.6, {11}, {{0, 0, 0}})));
  // images across the boundary count
  CHECK(min_interatomic_distance(cubic(5.0, {11, 17}, {{0.02, 0, 0}, {0.98, 0, 0}})) == doctest::Approx(0.2));
}

TEST_CASE("compositional validity") {
  CHECK(compositional_validity(parse_formula("NaCl")));
  CHECK(compositional_validity(parse_formula("TiO2")));
  CHECK(compositional_validity(parse_formula("Fe2O3")));
  CHECK_FALSE(compositional_validity(parse_formula("Na2")));
  CHECK_FALSE(compositional_validity(parse_formula("NaCl2")));
  const ChargeBalance tiny = charge_balance(parse_formula("NaCl2"), 1);
  CHECK(tiny.budget_exceeded);
  CHECK_FALSE(tiny.valid);
}

TEST_CASE("hungarian matches brute force") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 6;
    Eigen::MatrixXd cost(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) cost(i, j) = testing::uniform(rng, 0, 10);
    const auto asg = hungarian(cost);
    double got = 0;
    for (int i = 0; i < n; ++i) got += cost(i, asg[static_cast<std::size_t>(i)]);
    std::vector<int> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    double best = 1e300;
    do {
      double s = 0;
      for (int i = 0; i < n; ++i) s += cost(i, p[static_cast<std::size_t>(i)]);
      best = std::min(best, s);
    } while (std::next_permutation(p.begin(), p.end()));
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("Niggli reduction") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const LatticeMatrix m = lattice_to_matrix(testing::random_lattice(rng));
    // skew the basis with a random unimodular matrix
    Eigen::Matrix3i u = Eigen::Matrix3i::Identity();
    u(0, 1) = static_cast<int>(trial % 3) - 1;
    u(2, 0) = static_cast<int>(trial % 5) - 2;
    LatticeMatrix skew;
    skew.rows = u.cast<double>() * m.rows;
    Eigen::Matrix3i t;
    const LatticeMatrix r1 = niggli_reduce(m);
    const LatticeMatrix r2 = niggli_reduce(skew, &t);
    CHECK(std::abs(t.cast<double>().determinant()) == doctest::Approx(1.0));
    CHECK((t.cast<double>() * skew.rows - r2.rows).norm() < 1e-9);
    const Eigen::Matrix3d g1 = r1.gram(), g2 = r2.gram();
    // same lattice reduces to the same metric up to sign conventions on off-diagonals
    CHECK((g1.diagonal() - g2.diagonal()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(g1(0, 0) <= g1(1, 1) + 1e-9);
    CHECK(g1(1, 1) <= g1(2, 2) + 1e-9);
    CHECK(r1.det() == doctest::Approx(m.det()));
  }
  LatticeMatrix flat;
  flat.rows << 1, 0, 0, 0, 1, 0, 1, 1, 0;
  CHECK_THROWS_AS(niggli_reduce(flat), DegenerateCell);
}

TEST_CASE("axis rotations") {
  const auto& rots = axis_rotations();
  CHECK(rots[0] == Eigen::Matrix3i::Identity());
  for (const auto& r : rots) CHECK(r.cast<double>().determinant() == doctest::Approx(1.0));
  CHECK(oracle::proper_axis_maps().size() == 24);
}

TEST_CASE("matching basics") {
  const CrystalStructure s = rock_salt_pair(5.0);
  REQUIRE(match_structures(s, s));
  CHECK(*match_structures(s, s) < 1e-12);
  const auto t = match_structures(s, translated(s, {0.31, -0.2, 0.77}));
  REQUIRE(t);
  CHECK(*t < 1e-12);
  CHECK_FALSE(match_structures(s, rock_salt_pair(5.0, 19, 17)));  // NaCl vs KCl
  CHECK_FALSE(match_structures(s, rock_salt_pair(8.0)));           // lattice gate
  CHECK_FALSE(match_structures(s, cubic(5.0, {11, 11, 17, 17}, {{0, 0, 0}, {.5, .5, 0}, {.5, .5, .5}, {0, 0, .5}})));
  MatchConfig bad;
  bad.stol = -1;
  CHECK_THROWS_AS(match_structures(s, s, bad), InvalidArgument);
}

TEST_CASE("matcher agrees with the brute-force oracle") {
  Rng rng(2024);
  std::normal_distribution<double> jitter(0.0, 0.04);
  for (int trial = 0; trial < 150; ++trial) {
    const int n = 1 + trial % 4;
    const CrystalStructure a = testing::random_structure(rng, n, {11, 17});
    CrystalStructure b = a;
    for (Eigen::Index i = 0; i < b.frac.rows(); ++i)
      for (int k = 0; k < 3; ++k) b.frac(i, k) += jitter(rng) + 0.3;
    b = wrap_structure(b);
    if (trial % 3 == 0) b = testing::random_structure(rng, n, {11, 17});
    const auto got = match_structures(a, b);
    const auto want = oracle::match(a, b);
    REQUIRE(got.has_value() == want.has_value());
    if (got) CHECK(std::abs(*got - *want) < 1e-9);
  }
}

TEST_CASE("match rate and mean RMSD") {
  const CrystalStructure s = rock_salt_pair(5.0);
  const CrystalStructure k = rock_salt_pair(5.0, 19, 17);
  std::vector<CrystalStructure> gen{s, s, k}, ref{s, translated(s, {0.1, 0, 0}), s};
  const MatchSummary m = match_rate_and_rmsd(gen, ref);
  CHECK(m.n_matched == 2);
  CHECK(m.match_rate == doctest::Approx(200.0 / 3.0));
  CHECK(m.rmsd_defined);
  CHECK(m.mean_rmsd < 1e-12);
  CHECK_FALSE(m.per_pair[2]);

  std::vector<CrystalStructure> none_gen{k}, none_ref{s};
  const MatchSummary z = match_rate_and_rmsd(none_gen, none_ref);
  CHECK(z.match_rate == 0.0);
  CHECK_FALSE(z.rmsd_defined);
  CHECK(std::isnan(z.mean_rmsd));
  std::vector<CrystalStructure> one{s};
  CHECK_THROWS_AS(match_rate_and_rmsd(gen, one), LengthMismatch);
}

TEST_CASE("coverage") {
  const CrystalStructure a = rock_salt_pair(5.0);
  const CrystalStructure far = cubic(3.0, {8}, {{0, 0, 0}});
  std::vector<CrystalStructure> same{a}, both{a, far}, only_far{far};
  CoverageResult r = coverage(same, same);
  CHECK(r.recall == 100.0);
  CHECK(r.precision == 100.0);
  r = coverage(both, same);
  CHECK(r.recall == 100.0);
  CHECK(r.precision == 50.0);
  r = coverage(only_far, same);
  CHECK(r.recall == 0.0);
  CHECK(r.precision == 0.0);
  std::vector<CrystalStructure> empty;
  CHECK_THROWS_AS(coverage(empty, same), EmptyInput);
  CHECK(structure_fingerprint(a).size() == 80);
  CHECK(structure_fingerprint(a).norm() == doctest::Approx(1.0));
}

TEST_CASE("Wasserstein distance") {
  std::vector<double> p0{0.0}, p2{2.0};
  CHECK(wasserstein1(p0, p2) == doctest::Approx(2.0));
  std::vector<double> x{0, 1}, y{0, 1, 2};
  CHECK(std::abs(wasserstein1(x, y) - oracle::transport_w1(x, y)) < 1e-12);
  CHECK(wasserstein1(x, y) == doctest::Approx(0.5));
  CHECK(wasserstein1(x, x) == 0.0);
  std::vector<double> empty;
  CHECK_THROWS_AS(wasserstein1(empty, x), EmptyInput);

  Rng rng(9);
  std::uniform_int_distribution<int> size(1, 5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> a(static_cast<std::size_t>(size(rng))), b(static_cast<std::size_t>(size(rng)));
    for (auto& v : a) v = testing::uniform(rng, -3, 3);
    for (auto& v : b) v = testing::uniform(rng, -3, 3);
    CHECK(std::abs(wasserstein1(a, b) - oracle::transport_w1(a, b)) < 1e-9);
    CHECK(std::abs(wasserstein1(a, b) - wasserstein1(b, a)) < 1e-12);
  }
}

TEST_CASE("property statistics") {
  const CrystalStructure a = rock_salt_pair(5.0);
  const CrystalStructure big = rock_salt_pair(10.0);  // density falls by 8x
  std::vector<CrystalStructure> g{a}, t{big};
  const PropertyStats ps = property_stats(g, t);
  const double d = volume_and_density(a).density;
  CHECK(ps.wdist_density == doctest::Approx(d - d / 8.0));
  CHECK(ps.wdist_nel == 0.0);
  CrystalStructure ternary = cubic(5.0, {11, 17, 8}, {{0, 0, 0}, {.5, .5, .5}, {.5, 0, 0}});
  std::vector<CrystalStructure> tt{ternary};
  CHECK(property_stats(g, tt).wdist_nel == doctest::Approx(1.0));
}

TEST_CASE("metrics report serialization") {
  MetricsReport r;
  r.struct_validity = 100.0;
  r.match_rate = 0.0;
  r.n_generated = 3;
  const auto j = to_json(r);
  CHECK(j["struct_validity"] == 100.0);
  CHECK_FALSE(j.contains("cov_recall"));
  CHECK(j["rmsd_defined"] == false);
  CHECK(j["mean_rmsd"].is_null());
  r.mean_rmsd = 0.02;
  CHECK(to_json(r)["mean_rmsd"] == 0.02);
}
