#include <cmath>
#include <numbers>

#include "crysflow/conditioning.hpp"
#include "crysflow/errors.hpp"
#include "crysflow/field_net.hpp"
#include "crysflow/gradcheck.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace crysflow;

namespace {

NetworkConfig small() {
  NetworkConfig c = GradcheckOptions::small_network();
  c.n_buckets = 32;
  return c;
}

ModelParams random_params(const NetworkConfig& c, std::uint64_t seed) {
  ModelParams p = init_params(c, seed);
  Rng rng(seed + 100);
  std::normal_distribution<double> n(0.0, 0.3);
  // non-zero biases so every path is exercised
  p.for_each([&](const std::string& name, Eigen::MatrixXd& m) {
    if (name.find("_b") != std::string::npos) m = m.unaryExpr([&](double) { return n(rng); });
  });
  return p;
}

ConditionEmbedding tokens_for(const ModelParams& p, const std::string& text) { return embed_text(text, p.token_embed); }

}  // namespace

TEST_CASE("time embedding") {
  const Eigen::RowVectorXd e0 = time_embed(0.0, 4);
  CHECK(e0.size() == 8);
  CHECK(e0.head(4).cwiseAbs().maxCoeff() == 0.0);
  CHECK((e0.tail(4).array() == 1.0).all());
  CHECK(time_embed(0.3, 4) == time_embed(0.3, 4));
  CHECK((time_embed(1.0, 4) - e0).cwiseAbs().maxCoeff() < 1e-12);
  // frequencies 1, 2, 4, 8
  const Eigen::RowVectorXd e = time_embed(0.1, 4);
  for (int k = 0; k < 4; ++k) CHECK(e(k) == doctest::Approx(std::sin(2 * std::numbers::pi * std::pow(2.0, k) * 0.1)));
}

TEST_CASE("edge features") {
  const int K = 3;
  const Eigen::RowVector3d a(0.1, 0.2, 0.3);
  const Eigen::RowVectorXd same = edge_features(a, a, K);
  CHECK(same.size() == 6 * K);
  CHECK(same.head(3 * K).cwiseAbs().maxCoeff() == 0.0);
  CHECK((same.tail(3 * K).array() == 1.0).all());

  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const Eigen::RowVector3d fi = Eigen::RowVector3d::Random().cwiseAbs();
    const Eigen::RowVector3d fj = Eigen::RowVector3d::Random().cwiseAbs();
    const Eigen::RowVector3d tau(testing::uniform(rng, 0, 1), testing::uniform(rng, 0, 1), testing::uniform(rng, 0, 1));
    const Eigen::RowVector3d si = (fi + tau).unaryExpr([](double x) { return wrap(x); });
    const Eigen::RowVector3d sj = (fj + tau).unaryExpr([](double x) { return wrap(x); });
    CHECK((edge_features(fi, fj, K) - edge_features(si, sj, K)).cwiseAbs().maxCoeff() < 1e-12);
  }
  // d_x = 0.25 at k = 1: sin = 1, cos = 0
  const Eigen::RowVectorXd q = edge_features({0, 0, 0}, {0.25, 0, 0}, K);
  CHECK(q(0) == doctest::Approx(1.0));
  CHECK(std::abs(q(3 * K)) < 1e-12);
}

TEST_CASE("init_params") {
  const NetworkConfig c = small();
  const ModelParams a = init_params(c, 1), b = init_params(c, 1), d = init_params(c, 2);
  bool same = true, differ = false;
  std::vector<const Eigen::MatrixXd*> bs, ds;
  b.for_each([&](const std::string&, const Eigen::MatrixXd& m) { bs.push_back(&m); });
  d.for_each([&](const std::string&, const Eigen::MatrixXd& m) { ds.push_back(&m); });
  std::size_t k = 0;
  a.for_each([&](const std::string&, const Eigen::MatrixXd& m) {
    same = same && m == *bs[k];
    differ = differ || (m.size() > 0 && m != *ds[k] && !m.isZero());
    ++k;
  });
  CHECK(same);
  CHECK(differ);

  Rng rng(4);
  const CrystalStructure s = testing::random_structure(rng, 4);
  const ConditionEmbedding none;
  const VelocityTarget out = forward(a, {s.frac, s.lattice.to_row(), 0.4, s.composition, none});
  CHECK(out.uF.allFinite());
  CHECK(out.uL.allFinite());
  NetworkConfig bad = c;
  bad.n_heads = 3;
  CHECK_THROWS_AS(validate(bad), InvalidArgument);
}

TEST_CASE("forward is permutation equivariant and translation invariant") {
  const NetworkConfig c = small();
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const ModelParams p = random_params(c, static_cast<std::uint64_t>(trial));
    const CrystalStructure s = testing::random_structure(rng, 2 + trial % 5);
    const ConditionEmbedding cond = tokens_for(p, "NaCl crystallizes in the cubic Fm-3m space group.");
    const double t = testing::uniform(rng, 0, 1);
    const VelocityTarget base = forward(p, {s.frac, s.lattice.to_row(), t, s.composition, cond});

    const auto n = static_cast<Eigen::Index>(s.natoms());
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixX3d pf(n, 3);
    Composition pc;
    for (Eigen::Index i = 0; i < n; ++i) {
      pf.row(i) = s.frac.row(perm[static_cast<std::size_t>(i)]);
      pc.species.push_back(s.composition.species[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
    }
    const VelocityTarget permuted = forward(p, {pf, s.lattice.to_row(), t, pc, cond});
    for (Eigen::Index i = 0; i < n; ++i) {
      CHECK((permuted.uF.row(i) - base.uF.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-6);
    }
    CHECK((permuted.uL - base.uL).cwiseAbs().maxCoeff() < 1e-6);

    const Eigen::RowVector3d tau(testing::uniform(rng, 0, 1), testing::uniform(rng, 0, 1), testing::uniform(rng, 0, 1));
    const Eigen::MatrixX3d shifted = (s.frac.rowwise() + tau).unaryExpr([](double x) { return wrap(x); });
    const VelocityTarget moved = forward(p, {shifted, s.lattice.to_row(), t, s.composition, cond});
    CHECK((moved.uF - base.uF).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((moved.uL - base.uL).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("forward input checks") {
  const ModelParams p = random_params(small(), 1);
  const Eigen::MatrixX3d f = Eigen::MatrixX3d::Zero(3, 3);
  const Composition c{{11, 17}};
  const ConditionEmbedding none;
  CHECK_THROWS_AS(forward(p, {f, Row6::Constant(5.0), 0.5, c, none}), ShapeMismatch);
  ConditionEmbedding wrong;
  wrong.tokens = Eigen::MatrixXd::Zero(2, 5);
  const Eigen::MatrixX3d f2 = Eigen::MatrixX3d::Zero(2, 3);
  CHECK_THROWS_AS(forward(p, {f2, Row6::Constant(5.0), 0.5, c, wrong}), ShapeMismatch);
}

TEST_CASE("cross attention") {
  const NetworkConfig c = small();
  const ModelParams p = random_params(c, 3);
  const LayerParams& layer = p.layers[0];
  const Eigen::MatrixXd h = Eigen::MatrixXd::Random(4, c.hidden_dim);
  CHECK(cross_attention(h, Eigen::MatrixXd(0, c.attn_dim), layer, c.n_heads) == h);

  // one token: every softmax weight is 1, so the update is the projected value
  const Eigen::MatrixXd tok = Eigen::MatrixXd::Random(1, c.attn_dim);
  const Eigen::RowVectorXd update = tok * layer.attn_v * layer.attn_o;
  const Eigen::MatrixXd out = cross_attention(h, tok, layer, c.n_heads);
  for (int i = 0; i < 4; ++i) CHECK((out.row(i) - h.row(i) - update).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::MatrixXd twice(2, c.attn_dim);
  twice << tok, tok;
  CHECK((cross_attention(h, twice, layer, c.n_heads) - out).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("empty condition skips attention") {
  NetworkConfig c = small();
  ModelParams p = random_params(c, 5);
  Rng rng(5);
  const CrystalStructure s = testing::random_structure(rng, 3);
  const ConditionEmbedding none;
  const VelocityTarget a = forward(p, {s.frac, s.lattice.to_row(), 0.2, s.composition, none});
  for (auto& l : p.layers) {
    l.attn_q.setRandom();
    l.attn_o.setRandom();
  }
  const VelocityTarget b = forward(p, {s.frac, s.lattice.to_row(), 0.2, s.composition, none});
  CHECK(a.uF == b.uF);
  CHECK(a.uL == b.uL);
}

TEST_CASE("analytic gradients match finite differences") {
  for (std::uint64_t seed : {1u, 2u}) {
    const GradcheckReport r = gradient_check(GradcheckOptions{}, seed);
    CHECK(r.passed);
    CHECK(r.worst_error < 1e-4);
    CHECK(r.tensors.size() == 4 + 10 * 2 + 4);
  }
  const GradcheckReport broken =
      gradient_check(GradcheckOptions{}, 1, [](ModelParams& g) { g.layers[1].node_w(0, 0) += 0.5; });
  CHECK_FALSE(broken.passed);
  CHECK(broken.worst_tensor == "layer1.node_w");
}

namespace {

std::vector<TrainingExample> batch_for(const ModelParams& p, Rng& rng) {
  std::vector<TrainingExample> batch;
  for (int b = 0; b < 2; ++b) {
    const CrystalStructure s = testing::random_structure(rng, 3);
    TrainingExample ex;
    ex.composition = s.composition;
    ex.state.F = s.frac;
    ex.state.L = s.lattice.to_row();
    ex.t = testing::uniform(rng, 0, 1);
    ex.cond = tokens_for(p, "GaTe crystallizes in the hexagonal space group");
    ex.target.uF = Eigen::MatrixX3d::Random(3, 3);
    ex.target.uL = Row6::Random();
    batch.push_back(std::move(ex));
  }
  return batch;
}

}  // namespace

TEST_CASE("zero-loss batch has zero gradient") {
  const ModelParams p = random_params(small(), 7);
  Rng rng(7);
  auto batch = batch_for(p, rng);
  for (auto& ex : batch) ex.target = forward(p, {ex.state.F, ex.state.L, ex.t, ex.composition, ex.cond});
  const BatchLoss bl = loss_and_gradient(p, batch, PathConfig{});
  CHECK(bl.loss == doctest::Approx(0.0).epsilon(1e-20));
  double worst = 0;
  bl.grads.for_each([&](const std::string&, const Eigen::MatrixXd& m) {
    if (m.size() > 0) worst = std::max(worst, m.cwiseAbs().maxCoeff());
  });
  CHECK(worst < 1e-14);
}

TEST_CASE("lattice head gradient ignores coordinate targets") {
  const ModelParams p = random_params(small(), 8);
  Rng rng(8);
  auto batch = batch_for(p, rng);
  const BatchLoss a = loss_and_gradient(p, batch, PathConfig{});
  for (auto& ex : batch) ex.target.uF.setRandom();
  const BatchLoss b = loss_and_gradient(p, batch, PathConfig{});
  CHECK((a.grads.lattice_w - b.grads.lattice_w).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((a.grads.lattice_b - b.grads.lattice_b).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((a.grads.coord_w - b.grads.coord_w).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("sharded gradients equal the single-thread gradient") {
  const ModelParams p = random_params(small(), 9);
  Rng rng(9);
  auto batch = batch_for(p, rng);
  auto more = batch_for(p, rng);
  batch.insert(batch.end(), more.begin(), more.end());
  const BatchLoss one = loss_and_gradient(p, batch, PathConfig{}, 1);
  const BatchLoss three = loss_and_gradient(p, batch, PathConfig{}, 3);
  CHECK(one.loss == doctest::Approx(three.loss).epsilon(1e-14));
  CHECK((one.grads.coord_w - three.grads.coord_w).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("Adam step") {
  const NetworkConfig c = small();
  ModelParams p = random_params(c, 4);
  const ModelParams start = p;

  ModelParams zero = zero_params(c);
  AdamState s0 = make_adam(p);
  optimizer_step(p, zero, s0, 1e-3);
  CHECK(s0.step == 1);
  CHECK(p.coord_w == start.coord_w);

  // g = 1 everywhere: m_hat = v_hat = 1, step = lr / (1 + eps)
  ModelParams ones = zero_params(c);
  ones.for_each([](const std::string&, Eigen::MatrixXd& m) { m.setOnes(); });
  ModelParams q1 = start, q2 = start;
  AdamState a1 = make_adam(q1), a2 = make_adam(q2);
  optimizer_step(q1, ones, a1, 1e-3);
  optimizer_step(q2, ones, a2, 1e-3);
  CHECK(q1.coord_w == q2.coord_w);
  const double expected = 1e-3 / (1.0 + 1e-8);
  CHECK(((start.coord_w - q1.coord_w).array() - expected).abs().maxCoeff() < 1e-15);
  CHECK(((start.species_embed - q1.species_embed).array() - expected).abs().maxCoeff() < 1e-15);
}
