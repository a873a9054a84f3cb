#include "crysflow/sampler.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "crysflow/errors.hpp"

namespace crysflow {
namespace {

// Separates composition draws from the per-record prior streams.
constexpr std::uint64_t kCompositionStream = 0x9e3779b97f4a7c15ULL;

class CompositionDrawer {
 public:
  CompositionDrawer(const CompositionSource& src, std::uint64_t seed) : src_(src), rng_(seed ^ kCompositionStream) {
    if (src.explicit_list.empty() && src.empirical_pool.empty()) throw EmptyInput("no compositions to draw from");
  }

  const Composition& next() {
    if (!src_.explicit_list.empty()) {
      return src_.explicit_list[count_++ % src_.explicit_list.size()];
    }
    std::uniform_int_distribution<std::size_t> pick(0, src_.empirical_pool.size() - 1);
    ++count_;
    return src_.empirical_pool[pick(rng_)];
  }

 private:
  const CompositionSource& src_;
  Rng rng_;
  std::size_t count_ = 0;
};

}  // namespace

void validate(const SamplerConfig& cfg) {
  if (cfg.n_steps < 1) throw InvalidArgument("sampler needs at least one step");
  if (!(cfg.step_size > 0.0) || !std::isfinite(cfg.step_size)) throw InvalidArgument("step size must be > 0");
  if (!(cfg.anneal_gamma >= 0.0) || !std::isfinite(cfg.anneal_gamma)) {
    throw InvalidArgument("anneal factor must be finite and >= 0");
  }
  if (!cfg.allow_partial && std::abs(cfg.n_steps * cfg.step_size - 1.0) > 1e-9) {
    throw InvalidArgument("steps * step_size must equal 1 (set allow_partial to override)");
  }
}

VelocityField network_field(const ModelParams& params, const Composition& composition,
                            const ConditionEmbedding& cond) {
  return [&params, &composition, &cond](const Eigen::MatrixX3d& F, const Row6& L, double t) {
    return forward(params, FieldInput{F, L, t, composition, cond});
  };
}

CrystalStructure euler_integrate(const VelocityField& field, const PathState& init, const Composition& composition,
                                 const SamplerConfig& cfg) {
  validate(cfg);
  if (init.F.rows() != static_cast<Eigen::Index>(composition.size())) {
    throw ShapeMismatch("initial coordinates do not match the composition");
  }
  const double h = cfg.step_size;
  Eigen::MatrixX3d F = init.F.unaryExpr([](double x) { return wrap(x); });
  Row6 L = init.L;
  for (int k = 0; k < cfg.n_steps; ++k) {
    const double t = k * h;
    const VelocityTarget v = field(F, L, t);
    if (v.uF.rows() != F.rows()) throw ShapeMismatch("velocity rows do not match the state");
    L += h * v.uL;
    F = (F + (h * cfg.anneal_gamma) * v.uF).unaryExpr([](double x) { return wrap(x); });
    if (!F.allFinite() || !L.allFinite()) {
      throw NonFiniteState("non-finite state at step " + std::to_string(k));
    }
  }
  CrystalStructure s;
  s.composition = composition;
  s.lattice = Lattice6::from_row(L);
  s.frac = F;
  if (!is_valid(s.lattice)) throw DegenerateCell("sampled lattice is not a valid cell");
  return s;
}

GenerationRecord sample_csp(const Composition& composition, const SpaceGroupDatabase& db, const FlowModel& model,
                            const SamplerConfig& cfg, const CspOptions& opts) {
  validate(composition);
  GenerationRecord rec;
  rec.mode = opts.mode;
  rec.seed = cfg.seed;
  if (opts.mode == DescriptorMode::Oracle) {
    if (opts.reference == nullptr) throw InvalidArgument("oracle conditioning needs a reference structure");
    if (!(opts.reference->structure.composition.counts() == composition.counts())) {
      throw InvalidArgument("reference composition differs from the query");
    }
    rec.space_group = opts.reference->space_group;
    rec.retrieval_similarity = std::numeric_limits<double>::quiet_NaN();
  } else {
    const SpaceGroupPrediction pred = predict_space_group(composition, db);
    rec.space_group = pred.space_group;
    rec.retrieval_similarity = pred.similarity;
  }

  DescriptionGenerator templ = [&](int) {
    if (opts.mode == DescriptorMode::Oracle) {
      return describe_structure(opts.reference->structure, rec.space_group, DescriptorMode::Oracle);
    }
    return describe_composition(composition, rec.space_group);
  };
  const DescriptionOutcome desc =
      generate_description(opts.generator != nullptr ? *opts.generator : templ, composition, rec.space_group);
  rec.condition_text = desc.description.text;
  rec.rejected_descriptions = desc.rejected;
  rec.description_fallback = desc.fell_back;

  const ConditionEmbedding cond = embed_text(rec.condition_text, model.params.token_embed);
  Rng rng(cfg.seed);
  const PathState init = sample_prior(composition.size(), model.path, rng);
  rec.structure = euler_integrate(network_field(model.params, composition, cond), init, composition, cfg);
  return rec;
}

std::vector<SampleOutcome> sample_jobs(const std::vector<CspJob>& jobs, const SpaceGroupDatabase& db,
                                       const FlowModel& model, const SamplerConfig& cfg, DescriptorMode mode,
                                       int threads) {
  std::vector<SampleOutcome> out(jobs.size());
  auto run = [&](std::size_t i) {
    const CspJob& job = jobs[i];
    SamplerConfig c = cfg;
    c.seed = job.seed;
    CspOptions opts;
    opts.mode = mode;
    opts.reference = job.reference ? &*job.reference : nullptr;
    try {
      out[i].record = sample_csp(job.composition, db, model, c, opts);
    } catch (const Error& e) {
      out[i].error = e.what();
    }
  };
  const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), jobs.size());
  if (n_workers <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < n_workers; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < jobs.size(); i = next++) run(i);
    });
  }
  for (auto& w : workers) w.join();
  return out;
}

std::vector<Composition> draw_compositions(const CompositionSource& src, std::size_t n, std::uint64_t seed) {
  std::vector<Composition> out;
  if (n == 0) return out;
  CompositionDrawer drawer(src, seed);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(drawer.next());
  return out;
}

std::vector<SampleOutcome> sample_ab_initio(const CompositionSource& src, const SpaceGroupDatabase& db,
                                            const FlowModel& model, std::size_t n, const SamplerConfig& cfg,
                                            int threads) {
  std::vector<CspJob> jobs;
  std::size_t i = 0;
  for (auto& c : draw_compositions(src, n, cfg.seed)) {
    jobs.push_back({std::move(c), derived_seed(cfg.seed, i++), std::nullopt});
  }
  return sample_jobs(jobs, db, model, cfg, DescriptorMode::Conditional, threads);
}

FilterResult rejection_filter(std::vector<GenerationRecord> records, const std::set<std::string>& known) {
  FilterResult r;
  for (auto& rec : records) {
    if (known.count(reduced_formula(rec.structure.composition)) > 0) {
      ++r.rejected;
    } else {
      r.kept.push_back(std::move(rec));
    }
  }
  return r;
}

NovelSampleResult sample_novel(const CompositionSource& src, const SpaceGroupDatabase& db, const FlowModel& model,
                               std::size_t n, const std::set<std::string>& known, std::size_t max_draws,
                               const SamplerConfig& cfg, int threads) {
  NovelSampleResult res;
  if (n == 0) return res;
  CompositionDrawer drawer(src, cfg.seed);
  while (res.kept.size() < n && res.draws < max_draws) {
    // one round requests exactly the number still missing
    std::vector<CspJob> jobs;
    while (jobs.size() < n - res.kept.size() && res.draws < max_draws) {
      const Composition& c = drawer.next();
      const std::uint64_t seed = derived_seed(cfg.seed, res.draws++);
      if (known.count(reduced_formula(c)) > 0) {
        ++res.rejected;
        continue;
      }
      jobs.push_back({c, seed, std::nullopt});
    }
    for (auto& o : sample_jobs(jobs, db, model, cfg, DescriptorMode::Conditional, threads)) {
      if (o.record) {
        res.kept.push_back(std::move(*o.record));
      } else {
        ++res.failed;
      }
    }
  }
  FilterResult f = rejection_filter(std::move(res.kept), known);
  res.kept = std::move(f.kept);
  res.rejected += f.rejected;
  res.exhausted = res.kept.size() < n;
  return res;
}

}  // namespace crysflow
