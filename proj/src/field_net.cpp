#include "crysflow/field_net.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

#include "crysflow/errors.hpp"

namespace crysflow {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

MatrixXd silu(const MatrixXd& z) {
  return z.unaryExpr([](double x) { return x * sigmoid(x); });
}

MatrixXd silu_grad(const MatrixXd& z) {
  return z.unaryExpr([](double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
  });
}

// Directed edges (receiver i, sender j) for all i != j, receiver-major.
struct EdgeList {
  std::vector<Index> recv;
  std::vector<Index> send;
  Index size() const { return static_cast<Index>(recv.size()); }
};

EdgeList full_edges(Index n) {
  EdgeList e;
  e.recv.reserve(static_cast<std::size_t>(n * (n - 1)));
  e.send.reserve(static_cast<std::size_t>(n * (n - 1)));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      e.recv.push_back(i);
      e.send.push_back(j);
    }
  }
  return e;
}

RowVectorXd global_features(const ModelParams& p, const Row6& L, double t) {
  const auto& cfg = p.config;
  RowVectorXd g(cfg.global_feature_dim());
  g.head(6) = ((L - p.lattice_stats.mean).array() / p.lattice_stats.std.array()).matrix();
  g(6) = t;
  g.tail(2 * cfg.n_time_freq) = time_embed(t, cfg.n_time_freq);
  return g;
}

void softmax_rows(MatrixXd& s) {
  for (Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp().matrix();
    s.row(r) /= s.row(r).sum();
  }
}

struct AttentionTrace {
  MatrixXd q, k, v, out;  // out: N x A (before output projection)
  std::vector<MatrixXd> probs;
};

AttentionTrace attend(const MatrixXd& h, const MatrixXd& c, const LayerParams& layer, int n_heads) {
  AttentionTrace tr;
  tr.q = h * layer.attn_q;
  tr.k = c * layer.attn_k;
  tr.v = c * layer.attn_v;
  const Index a = tr.q.cols();
  const Index dk = a / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  tr.out.resize(h.rows(), a);
  tr.probs.resize(static_cast<std::size_t>(n_heads));
  for (int hd = 0; hd < n_heads; ++hd) {
    const Index c0 = hd * dk;
    MatrixXd s = scale * (tr.q.middleCols(c0, dk) * tr.k.middleCols(c0, dk).transpose());
    softmax_rows(s);
    tr.out.middleCols(c0, dk) = s * tr.v.middleCols(c0, dk);
    tr.probs[static_cast<std::size_t>(hd)] = std::move(s);
  }
  return tr;
}

void check_input(const ModelParams& p, const FieldInput& in) {
  const auto n = static_cast<Index>(in.composition.size());
  if (n == 0) throw ShapeMismatch("empty composition");
  if (in.F.rows() != n) throw ShapeMismatch("coordinate rows do not match the composition");
  if (in.cond.length() > 0 && in.cond.tokens.cols() != p.config.attn_dim) {
    throw ShapeMismatch("condition token width differs from attn_dim");
  }
  for (int z : in.composition.species) {
    if (z < 0 || z > p.config.max_z) throw ShapeMismatch("atomic number beyond the species table");
  }
}

}  // namespace

void validate(const NetworkConfig& cfg) {
  if (cfg.n_layers < 1 || cfg.hidden_dim < 1 || cfg.n_fourier_freq < 1 || cfg.n_time_freq < 1 ||
      cfg.attn_dim < 1 || cfg.n_heads < 1 || cfg.max_z < 1 || cfg.n_buckets < 1) {
    throw InvalidArgument("network sizes must be positive");
  }
  if (cfg.attn_dim % cfg.n_heads != 0) throw InvalidArgument("attn_dim must be divisible by n_heads");
}

std::size_t ModelParams::n_values() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

ModelParams zero_params(const NetworkConfig& cfg) {
  validate(cfg);
  const Index H = cfg.hidden_dim;
  const Index A = cfg.attn_dim;
  const Index G = cfg.global_feature_dim();
  const Index K6 = cfg.edge_feature_dim();
  ModelParams p;
  p.config = cfg;
  p.species_embed = MatrixXd::Zero(cfg.max_z + 1, H);
  p.token_embed = MatrixXd::Zero(cfg.n_buckets, A);
  p.global_w = MatrixXd::Zero(G, H);
  p.global_b = MatrixXd::Zero(1, H);
  p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& L : p.layers) {
    L.edge_w1 = MatrixXd::Zero(2 * H + K6, H);
    L.edge_b1 = MatrixXd::Zero(1, H);
    L.edge_w2 = MatrixXd::Zero(H, H);
    L.edge_b2 = MatrixXd::Zero(1, H);
    L.node_w = MatrixXd::Zero(2 * H + G, H);
    L.node_b = MatrixXd::Zero(1, H);
    L.attn_q = MatrixXd::Zero(H, A);
    L.attn_k = MatrixXd::Zero(A, A);
    L.attn_v = MatrixXd::Zero(A, A);
    L.attn_o = MatrixXd::Zero(A, H);
  }
  p.coord_w = MatrixXd::Zero(H, 3);
  p.coord_b = MatrixXd::Zero(1, 3);
  p.lattice_w = MatrixXd::Zero(H, 6);
  p.lattice_b = MatrixXd::Zero(1, 6);
  return p;
}

ModelParams init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  ModelParams p = zero_params(cfg);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  p.for_each([&](const std::string& name, MatrixXd& m) {
    const bool is_bias = name.ends_with("_b") || name.ends_with("_b1") || name.ends_with("_b2");
    if (is_bias) return;
    const bool is_table = name == "species_embed" || name == "token_embed";
    const double sd = is_table ? 1.0 : 1.0 / std::sqrt(static_cast<double>(m.rows()));
    for (Index c = 0; c < m.cols(); ++c) {
      for (Index r = 0; r < m.rows(); ++r) m(r, c) = sd * normal(rng);
    }
  });
  return p;
}

RowVectorXd time_embed(double t, int n_freq) {
  RowVectorXd out(2 * n_freq);
  double f = 1.0;
  for (int k = 0; k < n_freq; ++k, f *= 2.0) {
    out(k) = std::sin(kTwoPi * f * t);
    out(n_freq + k) = std::cos(kTwoPi * f * t);
  }
  return out;
}

RowVectorXd edge_features(const Eigen::RowVector3d& f_i, const Eigen::RowVector3d& f_j, int n_freq) {
  RowVectorXd out(6 * n_freq);
  const Index half = 3 * n_freq;
  for (int d = 0; d < 3; ++d) {
    // the wrapped difference keeps the phase small for large k; sin/cos are
    // 1-periodic in it either way
    const double delta = torus_delta(f_i(d), f_j(d));
    for (int k = 1; k <= n_freq; ++k) {
      const double ang = kTwoPi * k * delta;
      out(d * n_freq + k - 1) = std::sin(ang);
      out(half + d * n_freq + k - 1) = std::cos(ang);
    }
  }
  return out;
}

MatrixXd cross_attention(const MatrixXd& node_states, const MatrixXd& cond_tokens, const LayerParams& layer,
                         int n_heads) {
  if (cond_tokens.rows() == 0) return node_states;
  const AttentionTrace tr = attend(node_states, cond_tokens, layer, n_heads);
  return node_states + tr.out * layer.attn_o;
}

ForwardResult forward_traced(const ModelParams& p, const FieldInput& in) {
  check_input(p, in);
  const auto& cfg = p.config;
  const Index N = static_cast<Index>(in.composition.size());
  const Index H = cfg.hidden_dim;
  const Index K6 = cfg.edge_feature_dim();
  const Index G = cfg.global_feature_dim();
  const bool has_cond = in.cond.length() > 0;

  ForwardResult res;
  ForwardTrace& tr = res.trace;
  tr.global = global_features(p, in.L, in.t);

  const EdgeList edges = full_edges(N);
  const Index E = edges.size();
  tr.edge_feat.resize(E, K6);
  for (Index e = 0; e < E; ++e) {
    tr.edge_feat.row(e) = edge_features(in.F.row(edges.recv[static_cast<std::size_t>(e)]),
                                        in.F.row(edges.send[static_cast<std::size_t>(e)]), cfg.n_fourier_freq);
  }

  const RowVectorXd g_proj = tr.global * p.global_w + p.global_b;
  MatrixXd h(N, H);
  for (Index i = 0; i < N; ++i) {
    h.row(i) = p.species_embed.row(in.composition.species[static_cast<std::size_t>(i)]) + g_proj;
  }

  tr.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const LayerParams& L = p.layers[l];
    LayerTrace& lt = tr.layers[l];
    lt.h_in = h;
    lt.mean_msg = MatrixXd::Zero(N, H);
    if (E > 0) {
      const MatrixXd recv_proj = h * L.edge_w1.topRows(H);
      const MatrixXd send_proj = h * L.edge_w1.middleRows(H, H);
      lt.z1 = tr.edge_feat * L.edge_w1.bottomRows(K6);
      lt.z1.rowwise() += L.edge_b1.row(0);
      for (Index e = 0; e < E; ++e) {
        lt.z1.row(e) += recv_proj.row(edges.recv[static_cast<std::size_t>(e)]) +
                        send_proj.row(edges.send[static_cast<std::size_t>(e)]);
      }
      lt.z2 = silu(lt.z1) * L.edge_w2;
      lt.z2.rowwise() += L.edge_b2.row(0);
      lt.m = silu(lt.z2);
      for (Index e = 0; e < E; ++e) lt.mean_msg.row(edges.recv[static_cast<std::size_t>(e)]) += lt.m.row(e);
      lt.mean_msg /= static_cast<double>(N - 1);
    }
    lt.node_in.resize(N, 2 * H + G);
    lt.node_in.leftCols(H) = h;
    lt.node_in.middleCols(H, H) = lt.mean_msg;
    lt.node_in.rightCols(G) = tr.global.replicate(N, 1);
    lt.z3 = lt.node_in * L.node_w;
    lt.z3.rowwise() += L.node_b.row(0);
    lt.h_mid = h + silu(lt.z3);
    h = lt.h_mid;
    if (has_cond) {
      AttentionTrace at = attend(lt.h_mid, in.cond.tokens, L, cfg.n_heads);
      h.noalias() += at.out * L.attn_o;
      lt.q = std::move(at.q);
      lt.k = std::move(at.k);
      lt.v = std::move(at.v);
      lt.attn_out = std::move(at.out);
      lt.probs = std::move(at.probs);
    }
  }
  tr.h_final = h;
  tr.pooled = h.colwise().mean();

  res.out.uF = h * p.coord_w;
  res.out.uF.rowwise() += p.coord_b.row(0);
  const RowVectorXd lat = tr.pooled * p.lattice_w + p.lattice_b;
  res.out.uL = (lat.array() * p.lattice_stats.std.array()).matrix();
  return res;
}

VelocityTarget forward(const ModelParams& params, const FieldInput& in) {
  return forward_traced(params, in).out;
}

void backward(const ModelParams& p, const FieldInput& in, const ForwardTrace& tr, const VelocityTarget& d_out,
              ModelParams& gr) {
  const auto& cfg = p.config;
  const Index N = static_cast<Index>(in.composition.size());
  const Index H = cfg.hidden_dim;
  const Index K6 = cfg.edge_feature_dim();
  const bool has_cond = in.cond.length() > 0;
  if (d_out.uF.rows() != N) throw ShapeMismatch("output gradient rows do not match the composition");

  // heads
  gr.coord_w.noalias() += tr.h_final.transpose() * d_out.uF;
  gr.coord_b += d_out.uF.colwise().sum();
  MatrixXd dh = d_out.uF * p.coord_w.transpose();

  const RowVectorXd d_lat = (d_out.uL.array() * p.lattice_stats.std.array()).matrix();
  gr.lattice_w.noalias() += tr.pooled.transpose() * d_lat;
  gr.lattice_b += d_lat;
  const RowVectorXd d_pooled = d_lat * p.lattice_w.transpose();
  dh.rowwise() += d_pooled / static_cast<double>(N);

  const EdgeList edges = full_edges(N);
  const Index E = edges.size();

  MatrixXd d_cond;
  if (has_cond) d_cond = MatrixXd::Zero(in.cond.tokens.rows(), in.cond.tokens.cols());

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const LayerParams& L = p.layers[li];
    LayerParams& gL = gr.layers[li];
    const LayerTrace& lt = tr.layers[li];

    // cross-attention: h_out = h_mid + attn_out * Wo
    MatrixXd d_mid = dh;
    if (has_cond) {
      const Index a = lt.q.cols();
      const Index dk = a / cfg.n_heads;
      const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
      gL.attn_o.noalias() += lt.attn_out.transpose() * dh;
      const MatrixXd d_att = dh * L.attn_o.transpose();
      MatrixXd dq(lt.q.rows(), a), dkm(lt.k.rows(), a), dv(lt.v.rows(), a);
      for (int hd = 0; hd < cfg.n_heads; ++hd) {
        const Index c0 = hd * dk;
        const MatrixXd& P = lt.probs[static_cast<std::size_t>(hd)];
        const MatrixXd dO = d_att.middleCols(c0, dk);
        const MatrixXd dP = dO * lt.v.middleCols(c0, dk).transpose();
        dv.middleCols(c0, dk) = P.transpose() * dO;
        MatrixXd dS = P.cwiseProduct(dP);
        const Eigen::VectorXd row_dot = dS.rowwise().sum();
        dS = (P.array() * (dP.array().colwise() - row_dot.array())).matrix() * scale;
        dq.middleCols(c0, dk) = dS * lt.k.middleCols(c0, dk);
        dkm.middleCols(c0, dk) = dS.transpose() * lt.q.middleCols(c0, dk);
      }
      gL.attn_q.noalias() += lt.h_mid.transpose() * dq;
      d_mid.noalias() += dq * L.attn_q.transpose();
      gL.attn_k.noalias() += in.cond.tokens.transpose() * dkm;
      gL.attn_v.noalias() += in.cond.tokens.transpose() * dv;
      d_cond.noalias() += dkm * L.attn_k.transpose() + dv * L.attn_v.transpose();
    }

    // node update: h_mid = h_in + silu(node_in * W3 + b3)
    const MatrixXd dz3 = d_mid.cwiseProduct(silu_grad(lt.z3));
    gL.node_w.noalias() += lt.node_in.transpose() * dz3;
    gL.node_b += dz3.colwise().sum();
    const MatrixXd d_node_in = dz3 * L.node_w.transpose();
    MatrixXd d_in = d_mid + d_node_in.leftCols(H);
    // the global block of node_in is parameter-free

    if (E > 0) {
      const MatrixXd d_mean = d_node_in.middleCols(H, H) / static_cast<double>(N - 1);
      MatrixXd dm(E, H);
      for (Index e = 0; e < E; ++e) dm.row(e) = d_mean.row(edges.recv[static_cast<std::size_t>(e)]);
      const MatrixXd dz2 = dm.cwiseProduct(silu_grad(lt.z2));
      const MatrixXd a1 = silu(lt.z1);
      gL.edge_w2.noalias() += a1.transpose() * dz2;
      gL.edge_b2 += dz2.colwise().sum();
      const MatrixXd dz1 = (dz2 * L.edge_w2.transpose()).cwiseProduct(silu_grad(lt.z1));
      gL.edge_b1 += dz1.colwise().sum();
      gL.edge_w1.bottomRows(K6).noalias() += tr.edge_feat.transpose() * dz1;
      MatrixXd d_recv = MatrixXd::Zero(N, H);
      MatrixXd d_send = MatrixXd::Zero(N, H);
      for (Index e = 0; e < E; ++e) {
        d_recv.row(edges.recv[static_cast<std::size_t>(e)]) += dz1.row(e);
        d_send.row(edges.send[static_cast<std::size_t>(e)]) += dz1.row(e);
      }
      gL.edge_w1.topRows(H).noalias() += lt.h_in.transpose() * d_recv;
      gL.edge_w1.middleRows(H, H).noalias() += lt.h_in.transpose() * d_send;
      d_in.noalias() += d_recv * L.edge_w1.topRows(H).transpose();
      d_in.noalias() += d_send * L.edge_w1.middleRows(H, H).transpose();
    }
    dh = std::move(d_in);
  }

  // h0_i = species_embed[Z_i] + g * Wg + bg
  const RowVectorXd dh_sum = dh.colwise().sum();
  gr.global_w.noalias() += tr.global.transpose() * dh_sum;
  gr.global_b += dh_sum;
  for (Index i = 0; i < N; ++i) {
    gr.species_embed.row(in.composition.species[static_cast<std::size_t>(i)]) += dh.row(i);
  }
  if (has_cond) {
    if (in.cond.buckets.size() != static_cast<std::size_t>(in.cond.length())) {
      throw ShapeMismatch("condition buckets do not match token rows");
    }
    for (Index t = 0; t < in.cond.length(); ++t) {
      gr.token_embed.row(static_cast<Index>(in.cond.buckets[static_cast<std::size_t>(t)])) += d_cond.row(t);
    }
  }
}

namespace {

// Token rows are re-read from the live table so examples stay in sync with training.
ConditionEmbedding current_condition(const ModelParams& p, const ConditionEmbedding& c) {
  if (c.buckets.empty()) return c;
  ConditionEmbedding out;
  out.buckets = c.buckets;
  out.tokens.resize(static_cast<Index>(c.buckets.size()), p.token_embed.cols());
  for (std::size_t i = 0; i < c.buckets.size(); ++i) {
    if (c.buckets[i] >= static_cast<std::size_t>(p.token_embed.rows())) throw ShapeMismatch("token bucket out of range");
    out.tokens.row(static_cast<Index>(i)) = p.token_embed.row(static_cast<Index>(c.buckets[i]));
  }
  return out;
}

struct ShardResult {
  double loss = 0.0, loss_F = 0.0, loss_L = 0.0;
  ModelParams grads;
};

ShardResult run_shard(const ModelParams& params, std::span<const TrainingExample> shard, const PathConfig& path,
                      double weight) {
  ShardResult r;
  r.grads = zero_params(params.config);
  for (const auto& ex : shard) {
    const ConditionEmbedding cond = current_condition(params, ex.cond);
    const FieldInput in{ex.state.F, ex.state.L, ex.t, ex.composition, cond};
    ForwardResult fr = forward_traced(params, in);
    FlowLoss fl = fm_loss(fr.out, ex.target, path);
    r.loss += weight * fl.total;
    r.loss_F += weight * fl.loss_F;
    r.loss_L += weight * fl.loss_L;
    fl.grad.uF *= weight;
    fl.grad.uL *= weight;
    backward(params, in, fr.trace, fl.grad, r.grads);
  }
  return r;
}

void add_into(ModelParams& dst, const ModelParams& src) {
  std::vector<const MatrixXd*> srcs;
  src.for_each([&](const std::string&, const MatrixXd& m) { srcs.push_back(&m); });
  std::size_t k = 0;
  dst.for_each([&](const std::string&, MatrixXd& m) { m += *srcs[k++]; });
}

}  // namespace

BatchLoss loss_and_gradient(const ModelParams& params, std::span<const TrainingExample> batch,
                            const PathConfig& path, int threads) {
  if (batch.empty()) throw EmptyInput("empty training batch");
  const double weight = 1.0 / static_cast<double>(batch.size());
  const std::size_t n_shards = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, batch.size());
  std::vector<ShardResult> shards(n_shards);
  const std::size_t per = (batch.size() + n_shards - 1) / n_shards;
  auto shard_span = [&](std::size_t s) {
    const std::size_t lo = std::min(batch.size(), s * per);
    const std::size_t hi = std::min(batch.size(), lo + per);
    return batch.subspan(lo, hi - lo);
  };
  if (n_shards == 1) {
    shards[0] = run_shard(params, batch, path, weight);
  } else {
    std::vector<std::thread> workers;
    for (std::size_t s = 0; s < n_shards; ++s) {
      workers.emplace_back([&, s] { shards[s] = run_shard(params, shard_span(s), path, weight); });
    }
    for (auto& w : workers) w.join();
  }
  BatchLoss out;
  out.grads = std::move(shards[0].grads);
  out.loss = shards[0].loss;
  out.loss_F = shards[0].loss_F;
  out.loss_L = shards[0].loss_L;
  for (std::size_t s = 1; s < n_shards; ++s) {
    add_into(out.grads, shards[s].grads);
    out.loss += shards[s].loss;
    out.loss_F += shards[s].loss_F;
    out.loss_L += shards[s].loss_L;
  }
  std::string bad;
  out.grads.for_each([&](const std::string& name, const MatrixXd& m) {
    if (bad.empty() && !m.allFinite()) bad = name;
  });
  if (!bad.empty() || !std::isfinite(out.loss)) {
    throw NonFiniteGradient("non-finite gradient" + (bad.empty() ? std::string() : " in " + bad));
  }
  return out;
}

double batch_loss(const ModelParams& params, std::span<const TrainingExample> batch, const PathConfig& path) {
  if (batch.empty()) throw EmptyInput("empty training batch");
  double total = 0.0;
  for (const auto& ex : batch) {
    const ConditionEmbedding cond = current_condition(params, ex.cond);
    const FieldInput in{ex.state.F, ex.state.L, ex.t, ex.composition, cond};
    total += fm_loss(forward(params, in), ex.target, path).total;
  }
  return total / static_cast<double>(batch.size());
}

AdamState make_adam(const ModelParams& params) {
  AdamState s;
  s.m = zero_params(params.config);
  s.v = zero_params(params.config);
  return s;
}

void optimizer_step(ModelParams& params, const ModelParams& grads, AdamState& st, double lr) {
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  std::vector<const MatrixXd*> g;
  std::vector<MatrixXd*> m, v;
  grads.for_each([&](const std::string&, const MatrixXd& x) { g.push_back(&x); });
  st.m.for_each([&](const std::string&, MatrixXd& x) { m.push_back(&x); });
  st.v.for_each([&](const std::string&, MatrixXd& x) { v.push_back(&x); });
  std::size_t k = 0;
  params.for_each([&](const std::string& name, MatrixXd& x) {
    const MatrixXd& gk = *g[k];
    if (gk.rows() != x.rows() || gk.cols() != x.cols()) throw ShapeMismatch("gradient shape differs for " + name);
    MatrixXd& mk = *m[k];
    MatrixXd& vk = *v[k];
    mk = st.beta1 * mk + (1.0 - st.beta1) * gk;
    vk = st.beta2 * vk + (1.0 - st.beta2) * gk.cwiseProduct(gk);
    x.array() -= lr * (mk.array() / bc1) / ((vk.array() / bc2).sqrt() + st.eps);
    ++k;
  });
}

}  // namespace crysflow
