#include <algorithm>

#include "crysflow/errors.hpp"
#include "crysflow/gradcheck.hpp"
#include "crysflow/sampler.hpp"
#include "crysflow/train.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace crysflow;

namespace {

// Zero network: every velocity vanishes, so a sample is its prior draw.
FlowModel zero_model() {
  FlowModel m;
  m.params = zero_params(GradcheckOptions::small_network());
  m.path = PathConfig::from_stats(LatticeStats{});
  return m;
}

SamplerConfig steps(int n, double gamma = 1.0) {
  SamplerConfig c;
  c.n_steps = n;
  c.step_size = 1.0 / n;
  c.anneal_gamma = gamma;
  return c;
}

SpaceGroupDatabase toy_db() {
  SpaceGroupDatabase db;
  db.add(parse_formula("NaCl"), SpaceGroup::from_number(225));
  db.add(parse_formula("CsCl"), SpaceGroup::from_number(221));
  db.add(parse_formula("TiO2"), SpaceGroup::from_number(136));
  return db;
}

bool same_structure(const CrystalStructure& a, const CrystalStructure& b) {
  return a.composition == b.composition && a.lattice == b.lattice && a.frac == b.frac;
}

}  // namespace

TEST_CASE("sampler config") {
  CHECK_NOTHROW(validate(SamplerConfig{}));
  SamplerConfig c;
  c.n_steps = 50;
  CHECK_THROWS_AS(validate(c), InvalidArgument);
  c.allow_partial = true;
  CHECK_NOTHROW(validate(c));
  c.n_steps = 0;
  CHECK_THROWS_AS(validate(c), InvalidArgument);
}

TEST_CASE("Euler integration recovers the endpoint of a constant oracle field") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const CrystalStructure target = testing::random_structure(rng, 4);
    PathState init;
    init.F = Eigen::MatrixX3d::Random(4, 3).cwiseAbs();
    init.L = testing::random_lattice(rng).to_row();
    const VelocityTarget v = target_velocity(init, {target.frac, target.lattice.to_row()});
    const VelocityField oracle = [&](const Eigen::MatrixX3d&, const Row6&, double) { return v; };
    for (int n : {1, 10, 100, 1000}) {
      const CrystalStructure out = euler_integrate(oracle, init, target.composition, steps(n));
      for (Eigen::Index i = 0; i < 4; ++i) {
        for (int k = 0; k < 3; ++k) CHECK(std::abs(torus_delta(out.frac(i, k), target.frac(i, k))) < 1e-9);
      }
      CHECK((out.lattice.to_row() - target.lattice.to_row()).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("zero field returns the wrapped initial state") {
  PathState init;
  init.F.resize(1, 3);
  init.F << 1.25, -0.25, 0.5;
  init.L << 4, 4, 4, 90, 90, 90;
  const VelocityField zero = [](const Eigen::MatrixX3d& F, const Row6&, double) {
    return VelocityTarget{Eigen::MatrixX3d::Zero(F.rows(), 3), Row6::Zero()};
  };
  const CrystalStructure out = euler_integrate(zero, init, Composition{{1}}, steps(10, 5.0));
  CHECK(out.frac(0, 0) == doctest::Approx(0.25));
  CHECK(out.frac(0, 1) == doctest::Approx(0.75));
  CHECK(out.lattice.a == 4.0);
}

TEST_CASE("Euler evaluates the field at the left endpoint and anneals only coordinates") {
  std::vector<double> times;
  const VelocityField probe = [&](const Eigen::MatrixX3d& F, const Row6&, double t) {
    times.push_back(t);
    VelocityTarget v{Eigen::MatrixX3d::Constant(F.rows(), 3, 0.01), Row6::Constant(1.0)};
    return v;
  };
  PathState init;
  init.F = Eigen::MatrixX3d::Zero(1, 3);
  init.L << 4, 4, 4, 90, 90, 90;
  const CrystalStructure out = euler_integrate(probe, init, Composition{{1}}, steps(4, 5.0));
  CHECK(times == std::vector<double>{0.0, 0.25, 0.5, 0.75});
  CHECK(out.frac(0, 0) == doctest::Approx(0.05));  // gamma * 0.01 over unit time
  CHECK(out.lattice.a == doctest::Approx(5.0));    // not annealed
}

TEST_CASE("non-finite and degenerate states are reported") {
  PathState init;
  init.F = Eigen::MatrixX3d::Zero(1, 3);
  init.L << 4, 4, 4, 90, 90, 90;
  const VelocityField nan_field = [](const Eigen::MatrixX3d& F, const Row6&, double) {
    return VelocityTarget{Eigen::MatrixX3d::Constant(F.rows(), 3, std::nan("")), Row6::Zero()};
  };
  CHECK_THROWS_AS(euler_integrate(nan_field, init, Composition{{1}}, steps(2)), NonFiniteState);
  const VelocityField crush = [](const Eigen::MatrixX3d& F, const Row6&, double) {
    VelocityTarget v{Eigen::MatrixX3d::Zero(F.rows(), 3), Row6::Zero()};
    v.uL(0) = -10.0;
    return v;
  };
  CHECK_THROWS_AS(euler_integrate(crush, init, Composition{{1}}, steps(2)), DegenerateCell);
}

TEST_CASE("CSP pipeline") {
  const FlowModel model = zero_model();
  const SpaceGroupDatabase db = toy_db();
  SamplerConfig cfg;
  cfg.seed = 4;
  const GenerationRecord r = sample_csp(parse_formula("NaCl"), db, model, cfg);
  CHECK(r.space_group.number == 225);
  CHECK(r.retrieval_similarity == doctest::Approx(1.0));
  CHECK(r.mode == DescriptorMode::Conditional);
  CHECK(r.condition_text.find("NaCl crystallizes") == 0);
  CHECK(is_canonical(r.structure));

  const GenerationRecord again = sample_csp(parse_formula("NaCl"), db, model, cfg);
  CHECK(same_structure(r.structure, again.structure));

  const GenerationRecord single = sample_csp(parse_formula("He"), db, model, cfg);
  CHECK(single.structure.natoms() == 1);
  CHECK(is_valid(single.structure.lattice));

  CHECK_THROWS_AS(sample_csp(parse_formula("NaCl"), SpaceGroupDatabase{}, model, cfg), EmptyDatabase);
}

TEST_CASE("oracle mode takes the reference's space group and description") {
  const FlowModel model = zero_model();
  LabeledStructure ref;
  ref.structure.composition = parse_formula("NaCl");
  ref.structure.lattice = {4, 4, 4, 90, 90, 90};
  ref.structure.frac.resize(2, 3);
  ref.structure.frac << 0, 0, 0, 0.5, 0.5, 0.5;
  ref.space_group = SpaceGroup::from_number(221);
  CspOptions opts;
  opts.mode = DescriptorMode::Oracle;
  CHECK_THROWS_AS(sample_csp(parse_formula("NaCl"), toy_db(), model, SamplerConfig{}, opts), InvalidArgument);
  opts.reference = &ref;
  const GenerationRecord r = sample_csp(parse_formula("NaCl"), toy_db(), model, SamplerConfig{}, opts);
  CHECK(r.space_group.number == 221);
  CHECK(std::isnan(r.retrieval_similarity));
  CHECK(r.condition_text.find("Na–Cl bond lengths are 3.46 Å.") != std::string::npos);
  CHECK_THROWS_AS(sample_csp(parse_formula("KCl"), toy_db(), model, SamplerConfig{}, opts), InvalidArgument);
}

TEST_CASE("parallel sampling reproduces sequential results") {
  const FlowModel model = zero_model();
  std::vector<CspJob> jobs;
  for (std::uint64_t i = 0; i < 9; ++i) {
    jobs.push_back({parse_formula(i % 2 ? "NaCl" : "Ti2O4"), derived_seed(77, i), std::nullopt});
  }
  const auto seq = sample_jobs(jobs, toy_db(), model, SamplerConfig{}, DescriptorMode::Conditional, 1);
  const auto par = sample_jobs(jobs, toy_db(), model, SamplerConfig{}, DescriptorMode::Conditional, 4);
  REQUIRE(seq.size() == par.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    REQUIRE(seq[i].record);
    REQUIRE(par[i].record);
    CHECK(same_structure(seq[i].record->structure, par[i].record->structure));
  }
  // duplicate compositions get different seeds and different samples
  CHECK_FALSE(same_structure(seq[1].record->structure, seq[3].record->structure));
}

TEST_CASE("ab initio sampling") {
  const FlowModel model = zero_model();
  CompositionSource explicit_src;
  explicit_src.explicit_list = {parse_formula("NaCl"), parse_formula("TiO2"), parse_formula("CsCl")};
  CHECK(sample_ab_initio(explicit_src, toy_db(), model, 0, SamplerConfig{}).empty());
  const auto recs = sample_ab_initio(explicit_src, toy_db(), model, 3, SamplerConfig{});
  REQUIRE(recs.size() == 3);
  CHECK(reduced_formula(recs[0].record->structure.composition) == "NaCl");
  CHECK(reduced_formula(recs[1].record->structure.composition) == "TiO2");
  CHECK(reduced_formula(recs[2].record->structure.composition) == "CsCl");

  CompositionSource pool;
  pool.empirical_pool = explicit_src.explicit_list;
  auto a = draw_compositions(pool, 50, 3), b = draw_compositions(pool, 50, 3);
  CHECK(a == b);
  std::set<std::string> seen;
  for (const auto& c : a) seen.insert(reduced_formula(c));
  CHECK(seen.size() == 3);
}

TEST_CASE("rejection filter") {
  const FlowModel model = zero_model();
  CompositionSource src;
  src.explicit_list = {parse_formula("NaCl"), parse_formula("KBr"), parse_formula("TiO2")};
  std::vector<GenerationRecord> recs;
  for (auto& o : sample_ab_initio(src, toy_db(), model, 3, SamplerConfig{})) recs.push_back(*o.record);

  CHECK(rejection_filter(recs, {}).kept.size() == 3);
  const FilterResult none = rejection_filter(recs, {"NaCl", "KBr", "TiO2"});
  CHECK(none.kept.empty());
  CHECK(none.rejected == 3);
  const FilterResult mixed = rejection_filter(recs, {"NaCl"});
  REQUIRE(mixed.kept.size() == 2);
  CHECK(reduced_formula(mixed.kept[0].structure.composition) == "KBr");
  CHECK(reduced_formula(mixed.kept[1].structure.composition) == "TiO2");
}

TEST_CASE("novel sampling stops at its draw budget") {
  const FlowModel model = zero_model();
  CompositionSource src;
  src.empirical_pool = {parse_formula("NaCl")};
  const NovelSampleResult r = sample_novel(src, toy_db(), model, 2, {"NaCl"}, 7, SamplerConfig{});
  CHECK(r.exhausted);
  CHECK(r.kept.empty());
  CHECK(r.draws == 7);
  CHECK(r.rejected == 7);

  src.empirical_pool.push_back(parse_formula("KBr"));
  const NovelSampleResult ok = sample_novel(src, toy_db(), model, 3, {"NaCl"}, 100, SamplerConfig{});
  CHECK_FALSE(ok.exhausted);
  CHECK(ok.kept.size() == 3);
  for (const auto& k : ok.kept) CHECK(reduced_formula(k.structure.composition) == "KBr");
}

TEST_CASE("prior alignment permutes atoms within species only") {
  Rng rng(31);
  Composition c{{11, 11, 11, 17, 17}};
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::MatrixX3d prior = Eigen::MatrixX3d::Random(5, 3).cwiseAbs();
    const Eigen::MatrixX3d target = Eigen::MatrixX3d::Random(5, 3).cwiseAbs();
    const Eigen::MatrixX3d aligned = align_to_prior(prior, target, c);
    auto cost = [&](const Eigen::MatrixX3d& t) {
      double s = 0;
      for (int i = 0; i < 5; ++i)
        for (int k = 0; k < 3; ++k) s += std::pow(torus_delta(prior(i, k), t(i, k)), 2);
      return s;
    };
    // brute force over the 3! * 2! species-preserving permutations
    std::vector<int> na{0, 1, 2}, cl{3, 4};
    double best = 1e300;
    do {
      do {
        Eigen::MatrixX3d t(5, 3);
        for (int i = 0; i < 3; ++i) t.row(i) = target.row(na[static_cast<std::size_t>(i)]);
        for (int i = 0; i < 2; ++i) t.row(3 + i) = target.row(cl[static_cast<std::size_t>(i)]);
        best = std::min(best, cost(t));
      } while (std::next_permutation(cl.begin(), cl.end()));
    } while (std::next_permutation(na.begin(), na.end()));
    CHECK(cost(aligned) == doctest::Approx(best).epsilon(1e-12));
    for (int i = 3; i < 5; ++i) {
      CHECK(((aligned.row(i) - target.row(3)).norm() == 0.0 || (aligned.row(i) - target.row(4)).norm() == 0.0));
    }
  }
}
