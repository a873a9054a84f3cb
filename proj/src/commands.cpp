#include "crysflow/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <regex>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "crysflow/conditioning.hpp"
#include "crysflow/errors.hpp"
#include "crysflow/gradcheck.hpp"
#include "crysflow/io.hpp"
#include "crysflow/metrics.hpp"
#include "crysflow/sampler.hpp"
#include "crysflow/toy_corpus.hpp"
#include "crysflow/train.hpp"

namespace crysflow::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int effective_threads(int requested) {
  int n = std::max(1, requested);
  if (const char* env = std::getenv("CRYSFLOW_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap > 0) n = std::min<long>(n, cap);
  }
  return n;
}

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string manifest_path;
};

struct IngestOpts {
  std::string cif_dir, jsonl, out, db, stats, test_out;
  bool strict = false;
};

struct TrainOpts {
  std::string data, out, best, log;
  std::optional<int> epochs, steps;
};

struct CspOpts {
  std::string compositions, ckpt, db, mode = "retrieved", refs, out;
  std::optional<int> steps;
  std::optional<double> gamma;
};

struct SampleOpts {
  std::string ckpt, db, data, compositions, out;
  std::size_t n = 1;
  bool reject_known = false;
  std::optional<int> steps;
  std::optional<double> gamma;
};

struct EvaluateOpts {
  std::string gen, ref, metrics = "all", out, pairs_out;
};

struct DescribeOpts {
  std::string cif, formula, db, mode = "oracle";
  std::optional<int> sg;
  bool as_json = false;
};

struct GradcheckOpts {
  std::vector<std::uint64_t> seeds;
  std::string inject_fault;
  std::string out;
};

// Per-run state that ends up in the manifest.
class Run {
 public:
  Run(std::string command, const Common& common) : common_(common), start_(std::chrono::steady_clock::now()) {
    manifest.command = std::move(command);
  }

  RunConfig load_config() {
    config = common_.config_path.empty() ? RunConfig{} : parse_config(common_.config_path);
    if (!common_.config_path.empty()) manifest.inputs.push_back(common_.config_path);
    if (common_.seed) config.seed = *common_.seed;
    if (common_.threads) config.threads = *common_.threads;
    config.threads = effective_threads(config.threads);
    manifest.seed = config.seed;
    return config;
  }

  void finish(int code, const fs::path& default_manifest) {
    manifest.exit_code = code;
    manifest.config = to_json(config);
    manifest.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const fs::path path = common_.manifest_path.empty() ? default_manifest : fs::path(common_.manifest_path);
    if (!path.empty()) write_manifest(manifest, path);
  }

  RunManifest manifest;
  RunConfig config;

 private:
  Common common_;
  std::chrono::steady_clock::time_point start_;
};

std::string with_suffix(const std::string& path, const std::string& suffix) { return path + suffix; }

// "model.ckpt" -> "model.best.ckpt"
std::string best_path_for(const std::string& out) {
  const fs::path p(out);
  return (p.parent_path() / (p.stem().string() + ".best" + p.extension().string())).string();
}

std::vector<fs::path> cif_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".cif") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

// One structure per pairing slot; `index` comes from a leading "NNNN_" in the
// file name when every file has one, otherwise from the position.
struct LoadedSet {
  std::vector<CrystalStructure> structures;
  std::vector<std::size_t> index;
};

LoadedSet load_structures(const std::string& path, std::ostream& err) {
  LoadedSet set;
  if (fs::is_directory(path)) {
    const auto files = cif_files(path);
    static const std::regex prefix(R"(^(\d+)_)");
    bool all_prefixed = !files.empty();
    std::vector<std::size_t> prefixes;
    for (const auto& f : files) {
      std::smatch m;
      const std::string name = f.filename().string();
      if (std::regex_search(name, m, prefix)) {
        prefixes.push_back(std::stoul(m[1].str()));
      } else {
        all_prefixed = false;
      }
    }
    for (std::size_t i = 0; i < files.size(); ++i) {
      try {
        set.structures.push_back(read_cif_file(files[i]).structure);
        set.index.push_back(all_prefixed ? prefixes[i] : set.index.size());
      } catch (const Error& e) {
        err << "warning: skipping " << files[i].string() << ": " << e.what() << '\n';
      }
    }
    if (!all_prefixed) {
      for (std::size_t i = 0; i < set.index.size(); ++i) set.index[i] = i;
    }
    return set;
  }
  if (!fs::exists(path)) throw InvalidArgument("no such file or directory: " + path);
  const auto ds = read_dataset(path, true);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    set.structures.push_back(ds.records[i].structure());
    set.index.push_back(i);
  }
  return set;
}

std::string trim_copy(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<Composition> read_compositions(const std::string& path) {
  const std::string text = read_text_file(path);
  std::vector<Composition> out;
  std::size_t lineno = 0, start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(start, nl - start);
    start = nl + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim_copy(line);
    if (line.empty()) continue;
    try {
      Composition c = parse_formula(line);
      validate(c);
      out.push_back(std::move(c));
    } catch (const InvalidArgument& e) {
      throw ParseError(lineno, 1, e.what());
    }
  }
  return out;
}

std::string formula_slug(const Composition& c) { return reduced_formula(c); }

std::string cif_name(std::size_t index, const Composition& c) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << index << '_' << formula_slug(c) << ".cif";
  return os.str();
}

json record_json(std::size_t index, const Composition& c, const SampleOutcome& o, const std::string& file) {
  json j;
  j["index"] = index;
  j["composition"] = reduced_formula(c);
  if (!o.record) {
    j["error"] = o.error;
    return j;
  }
  const GenerationRecord& r = *o.record;
  j["file"] = file;
  j["formula"] = reduced_formula(r.structure.composition);
  j["mode"] = std::string(to_string(r.mode));
  j["seed"] = r.seed;
  j["sg_number"] = r.space_group.number;
  j["retrieval_similarity"] = std::isnan(r.retrieval_similarity) ? json(nullptr) : json(r.retrieval_similarity);
  j["description"] = r.condition_text;
  j["rejected_descriptions"] = r.rejected_descriptions;
  j["description_fallback"] = r.description_fallback;
  return j;
}

// Writes one CIF per successful outcome plus records.jsonl; returns the failure count.
std::size_t write_outcomes(const fs::path& dir, const std::vector<Composition>& comps,
                           const std::vector<SampleOutcome>& outcomes, RunManifest& manifest, std::ostream& err) {
  fs::create_directories(dir);
  std::string lines;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    std::string file;
    if (outcomes[i].record) {
      const GenerationRecord& r = *outcomes[i].record;
      file = cif_name(i, comps[i]);
      write_file_atomic(dir / file, write_cif(r.structure, r.space_group));
      manifest.outputs.push_back((dir / file).string());
    } else {
      ++failed;
      err << "warning: sample " << i << " (" << reduced_formula(comps[i]) << ") failed: " << outcomes[i].error << '\n';
    }
    lines += record_json(i, comps[i], outcomes[i], file).dump() + '\n';
  }
  write_file_atomic(dir / "records.jsonl", lines);
  manifest.outputs.push_back((dir / "records.jsonl").string());
  return failed;
}

// ---- ingest ----

int cmd_ingest(const IngestOpts& o, Run& run, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = run.load_config();
  std::vector<DatasetRecord> records;
  std::size_t failures = 0;
  std::size_t n_inputs = 0;
  if (!o.cif_dir.empty()) {
    if (!fs::is_directory(o.cif_dir)) throw InvalidArgument("not a directory: " + o.cif_dir);
    run.manifest.inputs.push_back(o.cif_dir);
    for (const auto& f : cif_files(o.cif_dir)) {
      ++n_inputs;
      try {
        const CifStructure cif = read_cif_file(f);
        const SpaceGroup sg = cif.space_group.value_or(SpaceGroup::from_number(1));
        validate(cif.structure);
        const Description d = describe_structure(cif.structure, sg, DescriptorMode::Oracle);
        records.push_back(DatasetRecord::from_structure(cif.structure, sg, d.text));
      } catch (const Error& e) {
        ++failures;
        err << "warning: " << f.string() << ": " << e.what() << '\n';
      }
    }
  } else {
    if (!fs::exists(o.jsonl)) throw InvalidArgument("no such file: " + o.jsonl);
    run.manifest.inputs.push_back(o.jsonl);
    DatasetReadResult ds = read_dataset(o.jsonl, o.strict);
    n_inputs = ds.records.size() + ds.warnings.size();
    failures = ds.warnings.size();
    for (const auto& w : ds.warnings) err << "warning: " << o.jsonl << ": " << w << '\n';
    for (auto& r : ds.records) {
      if (!r.description) r.description = describe_structure(r.structure(), r.space_group(), DescriptorMode::Oracle).text;
      records.push_back(std::move(r));
    }
  }
  run.manifest.counters["inputs"] = n_inputs;
  run.manifest.counters["failed"] = failures;
  run.manifest.counters["records"] = records.size();
  if (n_inputs == 0) throw EmptyInput("no inputs");
  if (records.empty()) throw EmptyInput("all " + std::to_string(n_inputs) + " inputs failed to parse");

  std::vector<DatasetRecord> train = records, test;
  if (!o.test_out.empty()) {
    SplitIndices split = split_indices(records.size(), cfg.train_fraction, cfg.seed);
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    train.clear();
    for (auto i : split.train) train.push_back(records[i]);
    for (auto i : split.test) test.push_back(records[i]);
    if (train.empty()) throw EmptyInput("train_fraction leaves no training records");
    write_dataset(test, o.test_out);
    run.manifest.outputs.push_back(o.test_out);
  }
  write_dataset(train, o.out);
  run.manifest.outputs.push_back(o.out);

  SpaceGroupDatabase db;
  std::vector<CrystalStructure> structures;
  for (const auto& r : train) {
    db.add(r.structure().composition, r.space_group());
    structures.push_back(r.structure());
  }
  const std::string db_path = o.db.empty() ? with_suffix(o.out, ".db.jsonl") : o.db;
  write_space_group_db(db, db_path);
  run.manifest.outputs.push_back(db_path);

  const LatticeStats st = lattice_statistics(structures);
  json stats;
  stats["n_structures"] = structures.size();
  stats["lattice_mean"] = std::vector<double>(st.mean.data(), st.mean.data() + 6);
  stats["lattice_std"] = std::vector<double>(st.std.data(), st.std.data() + 6);
  const std::string stats_path = o.stats.empty() ? with_suffix(o.out, ".stats.json") : o.stats;
  write_file_atomic(stats_path, stats.dump(2) + '\n');
  run.manifest.outputs.push_back(stats_path);
  run.manifest.counters["train_records"] = train.size();
  run.manifest.counters["test_records"] = test.size();

  out << "ingested " << records.size() << " of " << n_inputs << " inputs (" << failures << " warnings); "
      << train.size() << " train, " << test.size() << " test\n";
  return kExitOk;
}

// ---- train ----

int cmd_train(const TrainOpts& o, Run& run, std::ostream& out, std::ostream& err) {
  RunConfig cfg = run.load_config();
  if (!fs::exists(o.data)) throw InvalidArgument("no such dataset: " + o.data);
  run.manifest.inputs.push_back(o.data);
  const DatasetReadResult ds = read_dataset(o.data, true);
  if (ds.records.empty()) throw EmptyInput("dataset has no records");
  std::vector<TrainingItem> items;
  for (const auto& r : ds.records) items.push_back({r.structure(), r.space_group(), r.description.value_or("")});

  if (o.steps) cfg.train.steps = *o.steps;
  if (o.epochs) {
    const auto per_epoch = (items.size() + static_cast<std::size_t>(cfg.train.batch_size) - 1) /
                           static_cast<std::size_t>(cfg.train.batch_size);
    cfg.train.steps = *o.epochs * static_cast<int>(per_epoch);
  }
  validate(cfg.train);
  run.config = cfg;

  const std::string log_path = o.log.empty() ? with_suffix(o.out, ".loss.jsonl") : o.log;
  const std::string best_path = o.best.empty() ? best_path_for(o.out) : o.best;
  std::string log_lines;
  std::vector<LossRecord> seen;
  auto on_log = [&](const LossRecord& r) {
    seen.push_back(r);
    log_lines += json{{"step", r.step}, {"loss", r.loss}, {"loss_F", r.loss_F}, {"loss_L", r.loss_L}, {"lr", r.lr}}
                     .dump() +
                 '\n';
    out << "step " << r.step << "  loss " << r.loss << "  loss_F " << r.loss_F << "  loss_L " << r.loss_L << '\n';
  };

  TrainOutcome res;
  try {
    res = train_flow_model(items, cfg.network, cfg.path, cfg.train, cfg.seed, cfg.threads, on_log);
  } catch (const NonFiniteGradient& e) {
    json dump;
    dump["error"] = e.what();
    dump["last_records"] = json::array();
    for (const auto& r : seen) dump["last_records"].push_back({{"step", r.step}, {"loss", r.loss}});
    const std::string dump_path = with_suffix(o.out, ".diagnostic.json");
    write_file_atomic(dump_path, dump.dump(2) + '\n');
    write_file_atomic(log_path, log_lines);
    run.manifest.outputs.push_back(dump_path);
    err << "error: " << e.what() << " (diagnostics in " << dump_path << ")\n";
    return kExitCheckFailed;
  }
  write_file_atomic(log_path, log_lines);
  save_checkpoint({res.final_model, res.rng_state, cfg.train.steps}, o.out);
  const FlowModel& best = cfg.train.steps > 0 ? res.best_model : res.final_model;
  save_checkpoint({best, res.rng_state, cfg.train.steps}, best_path);
  run.manifest.outputs.insert(run.manifest.outputs.end(), {o.out, best_path, log_path});
  run.manifest.counters["steps"] = cfg.train.steps;
  run.manifest.counters["records"] = items.size();
  if (!res.log.empty()) {
    run.manifest.counters["first_loss"] = res.log.front().loss;
    run.manifest.counters["final_loss"] = res.log.back().loss;
  }
  out << "trained " << cfg.train.steps << " steps on " << items.size() << " structures -> " << o.out << '\n';
  return kExitOk;
}

SamplerConfig sampler_from(const RunConfig& cfg, std::optional<int> steps, std::optional<double> gamma) {
  SamplerConfig sc = cfg.sampler;
  sc.seed = cfg.seed;
  if (steps) {
    sc.n_steps = *steps;
    sc.step_size = 1.0 / *steps;
  }
  if (gamma) sc.anneal_gamma = *gamma;
  validate(sc);
  return sc;
}

// ---- csp ----

int cmd_csp(const CspOpts& o, Run& run, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = run.load_config();
  const DescriptorMode mode = parse_descriptor_mode(o.mode);
  const SamplerConfig sc = sampler_from(cfg, o.steps, o.gamma);
  if (mode == DescriptorMode::Oracle && o.refs.empty()) {
    throw InvalidArgument("oracle mode needs reference structures (--refs)");
  }
  if (o.compositions.empty() && o.refs.empty()) throw InvalidArgument("--compositions or --refs is required");

  std::vector<DatasetRecord> refs;
  if (!o.refs.empty()) {
    run.manifest.inputs.push_back(o.refs);
    refs = read_dataset(o.refs, true).records;
  }
  std::vector<Composition> comps;
  if (!o.compositions.empty()) {
    run.manifest.inputs.push_back(o.compositions);
    comps = read_compositions(o.compositions);
  } else {
    for (const auto& r : refs) comps.push_back(r.structure().composition);
  }
  if (mode == DescriptorMode::Oracle && refs.size() < comps.size()) {
    throw InvalidArgument("oracle mode needs one reference per composition line");
  }
  const Checkpoint ckpt = load_checkpoint(o.ckpt);
  const SpaceGroupDatabase db = read_space_group_db(o.db);
  run.manifest.inputs.insert(run.manifest.inputs.end(), {o.ckpt, o.db});

  std::vector<CspJob> jobs;
  for (std::size_t i = 0; i < comps.size(); ++i) {
    CspJob job{comps[i], derived_seed(sc.seed, i), std::nullopt};
    if (mode == DescriptorMode::Oracle) job.reference = LabeledStructure{refs[i].structure(), refs[i].space_group()};
    jobs.push_back(std::move(job));
  }
  const auto outcomes = sample_jobs(jobs, db, ckpt.model, sc, mode, cfg.threads);
  const std::size_t failed = write_outcomes(o.out, comps, outcomes, run.manifest, err);
  int retries = 0, fallbacks = 0;
  for (const auto& oc : outcomes) {
    if (!oc.record) continue;
    retries += oc.record->rejected_descriptions;
    fallbacks += oc.record->description_fallback ? 1 : 0;
  }
  run.manifest.counters["samples"] = outcomes.size() - failed;
  run.manifest.counters["failed"] = failed;
  run.manifest.counters["description_retries"] = retries;
  run.manifest.counters["description_fallbacks"] = fallbacks;
  run.manifest.counters["mode"] = std::string(to_string(mode));
  out << "csp: " << outcomes.size() - failed << " of " << outcomes.size() << " compositions sampled -> " << o.out
      << '\n';
  return !outcomes.empty() && failed == outcomes.size() ? kExitCheckFailed : kExitOk;
}

// ---- sample ----

int cmd_sample(const SampleOpts& o, Run& run, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = run.load_config();
  const SamplerConfig sc = sampler_from(cfg, o.steps, o.gamma);
  if (o.data.empty() && o.compositions.empty()) throw InvalidArgument("--data or --compositions is required");
  if (o.reject_known && o.data.empty()) throw InvalidArgument("--reject-known needs the training dataset (--data)");

  CompositionSource src;
  std::set<std::string> known;
  if (!o.data.empty()) {
    run.manifest.inputs.push_back(o.data);
    for (const auto& r : read_dataset(o.data, true).records) {
      const Composition c = r.structure().composition;
      src.empirical_pool.push_back(c);
      known.insert(reduced_formula(c));
    }
  }
  if (!o.compositions.empty()) {
    run.manifest.inputs.push_back(o.compositions);
    src.explicit_list = read_compositions(o.compositions);
    src.empirical_pool.clear();
  }
  if (src.explicit_list.empty() && src.empirical_pool.empty()) throw EmptyInput("empty composition source");
  const Checkpoint ckpt = load_checkpoint(o.ckpt);
  const SpaceGroupDatabase db = read_space_group_db(o.db);
  run.manifest.inputs.insert(run.manifest.inputs.end(), {o.ckpt, o.db});

  std::vector<Composition> comps;
  std::vector<SampleOutcome> outcomes;
  int code = kExitOk;
  if (o.reject_known) {
    const std::size_t budget = o.n * static_cast<std::size_t>(cfg.max_draws_per_sample);
    NovelSampleResult res = sample_novel(src, db, ckpt.model, o.n, known, budget, sc, cfg.threads);
    for (auto& r : res.kept) {
      comps.push_back(r.structure.composition);
      outcomes.push_back({std::move(r), {}});
    }
    run.manifest.counters["rejections"] = res.rejected;
    run.manifest.counters["draws"] = res.draws;
    run.manifest.counters["failed"] = res.failed;
    if (res.exhausted) {
      err << "error: retry budget exhausted after " << res.draws << " draws; kept " << res.kept.size() << " of "
          << o.n << '\n';
      code = kExitCheckFailed;
    }
  } else {
    comps = draw_compositions(src, o.n, sc.seed);
    outcomes = sample_ab_initio(src, db, ckpt.model, o.n, sc, cfg.threads);
    run.manifest.counters["rejections"] = 0;
    run.manifest.counters["draws"] = o.n;
  }
  const std::size_t failed = write_outcomes(o.out, comps, outcomes, run.manifest, err);
  if (!o.reject_known) run.manifest.counters["failed"] = failed;
  run.manifest.counters["samples"] = outcomes.size() - failed;
  out << "sample: wrote " << outcomes.size() - failed << " structures -> " << o.out << '\n';
  return code;
}

// ---- evaluate ----

double percent(std::size_t k, std::size_t n) { return n == 0 ? 0.0 : 100.0 * static_cast<double>(k) / static_cast<double>(n); }

int cmd_evaluate(const EvaluateOpts& o, Run& run, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = run.load_config();
  static const std::set<std::string> kinds{"all", "validity", "coverage", "property", "match"};
  if (!kinds.count(o.metrics)) throw InvalidArgument("unknown metric set " + o.metrics);
  const LoadedSet gen = load_structures(o.gen, err);
  run.manifest.inputs.push_back(o.gen);
  if (gen.structures.empty()) throw EmptyInput("no generated structures in " + o.gen);
  const bool want_ref = o.metrics != "validity";
  LoadedSet ref;
  if (want_ref) {
    if (o.ref.empty()) throw InvalidArgument("--ref is required for " + o.metrics + " metrics");
    ref = load_structures(o.ref, err);
    run.manifest.inputs.push_back(o.ref);
    if (ref.structures.empty()) throw EmptyInput("no reference structures in " + o.ref);
  }

  MetricsReport rep;
  rep.n_generated = gen.structures.size();
  rep.n_reference = ref.structures.size();
  const bool all = o.metrics == "all";
  if (all || o.metrics == "validity") {
    std::size_t sv = 0, cv = 0;
    for (const auto& s : gen.structures) {
      sv += structural_validity(s) ? 1 : 0;
      cv += compositional_validity(s.composition) ? 1 : 0;
    }
    rep.struct_validity = percent(sv, gen.structures.size());
    rep.comp_validity = percent(cv, gen.structures.size());
  }
  if (all || o.metrics == "coverage") {
    const CoverageResult c = coverage(gen.structures, ref.structures, cfg.coverage);
    rep.cov_recall = c.recall;
    rep.cov_precision = c.precision;
  }
  if (all || o.metrics == "property" || o.metrics == "coverage") {
    const PropertyStats p = property_stats(gen.structures, ref.structures);
    rep.wdist_density = p.wdist_density;
    rep.wdist_nel = p.wdist_nel;
  }
  if (all || o.metrics == "match") {
    const std::size_t max_index = *std::max_element(gen.index.begin(), gen.index.end());
    const bool aligned = max_index < ref.structures.size() &&
                         (gen.structures.size() == ref.structures.size() || fs::is_directory(o.gen));
    if (!aligned) {
      if (!all) {
        throw LengthMismatch("cannot pair " + std::to_string(gen.structures.size()) + " generated with " +
                             std::to_string(ref.structures.size()) + " reference structures");
      }
      err << "note: generated and reference sets are not index-aligned; match metrics skipped\n";
    } else {
      std::vector<std::optional<double>> per_ref(ref.structures.size());
      std::vector<bool> present(ref.structures.size(), false);
      for (std::size_t g = 0; g < gen.structures.size(); ++g) {
        const std::size_t r = gen.index[g];
        present[r] = true;
        const CrystalStructure& a = gen.structures[g];
        const CrystalStructure& b = ref.structures[r];
        if (a.natoms() == b.natoms() && reduced_formula(a.composition) == reduced_formula(b.composition)) {
          per_ref[r] = match_structures(a, b, cfg.match);
        }
      }
      std::size_t matched = 0;
      double sum = 0.0;
      std::string pair_lines;
      for (std::size_t r = 0; r < per_ref.size(); ++r) {
        if (per_ref[r]) {
          ++matched;
          sum += *per_ref[r];
        }
        json pj{{"index", r}, {"generated", static_cast<bool>(present[r])}, {"matched", per_ref[r].has_value()}};
        pj["rmsd"] = per_ref[r] ? json(*per_ref[r]) : json(nullptr);
        pair_lines += pj.dump() + '\n';
      }
      rep.match_rate = percent(matched, per_ref.size());
      if (matched > 0) rep.mean_rmsd = sum / static_cast<double>(matched);
      if (!o.pairs_out.empty()) {
        write_file_atomic(o.pairs_out, pair_lines);
        run.manifest.outputs.push_back(o.pairs_out);
      }
    }
  }
  const json j = to_json(rep);
  if (!o.out.empty()) {
    write_file_atomic(o.out, j.dump(2) + '\n');
    run.manifest.outputs.push_back(o.out);
  }
  run.manifest.counters["n_generated"] = rep.n_generated;
  run.manifest.counters["n_reference"] = rep.n_reference;
  for (const auto& [k, v] : j.items()) {
    if (v.is_number()) out << std::left << std::setw(16) << k << v.dump() << '\n';
  }
  return kExitOk;
}

// ---- describe ----

int cmd_describe(const DescribeOpts& o, Run& run, std::ostream& out, std::ostream&) {
  run.load_config();
  const DescriptorMode mode = parse_descriptor_mode(o.mode);
  Description d;
  if (!o.cif.empty()) {
    run.manifest.inputs.push_back(o.cif);
    const CifStructure cif = read_cif_file(o.cif);
    validate(cif.structure);
    SpaceGroup sg = cif.space_group.value_or(SpaceGroup::from_number(1));
    if (o.sg) sg = SpaceGroup::from_number(*o.sg);
    if (mode != DescriptorMode::Oracle && !o.sg && !o.db.empty()) {
      sg = predict_space_group(cif.structure.composition, read_space_group_db(o.db)).space_group;
    }
    d = describe_structure(cif.structure, sg, mode);
  } else if (!o.formula.empty()) {
    if (mode == DescriptorMode::Oracle) throw InvalidArgument("oracle descriptions need a structure (--cif)");
    const Composition c = parse_formula(o.formula);
    validate(c);
    SpaceGroup sg;
    if (o.sg) {
      sg = SpaceGroup::from_number(*o.sg);
    } else if (!o.db.empty()) {
      run.manifest.inputs.push_back(o.db);
      sg = predict_space_group(c, read_space_group_db(o.db)).space_group;
    } else {
      throw InvalidArgument("--sg or --db is required to describe a bare formula");
    }
    d = describe_composition(c, sg);
  } else {
    throw InvalidArgument("--cif or --formula is required");
  }
  if (o.as_json) {
    out << json{{"text", d.text},
                {"formula", d.declared_formula},
                {"sg_number", d.declared_sg.number},
                {"mode", std::string(to_string(d.mode))}}
               .dump()
        << '\n';
  } else {
    out << d.text << '\n';
  }
  return kExitOk;
}

// ---- gradcheck ----

int cmd_gradcheck(const GradcheckOpts& o, Run& run, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = run.load_config();
  std::vector<std::uint64_t> seeds = o.seeds;
  if (seeds.empty()) seeds.push_back(cfg.seed);
  GradientHook hook;
  if (!o.inject_fault.empty()) {
    const std::string target = o.inject_fault;
    hook = [target](ModelParams& g) {
      g.for_each([&](const std::string& name, Eigen::MatrixXd& m) {
        if (name == target && m.size() > 0) m(0, 0) += 1.0;
      });
    };
  }
  const GradcheckOptions opts;
  json reports = json::array();
  bool ok = true;
  for (const std::uint64_t seed : seeds) {
    const GradcheckReport rep = gradient_check(opts, seed, hook);
    json rj{{"seed", seed}, {"passed", rep.passed}, {"worst_tensor", rep.worst_tensor}, {"worst_error", rep.worst_error}};
    out << "seed " << seed << '\n';
    for (const auto& t : rep.tensors) {
      rj["tensors"][t.name] = t.rel_error;
      out << "  " << std::left << std::setw(20) << t.name << std::scientific << std::setprecision(2) << t.rel_error
          << std::defaultfloat << (t.rel_error < opts.tolerance ? "" : "  FAIL") << '\n';
    }
    if (!rep.passed) {
      ok = false;
      err << "gradient check failed for seed " << seed << ": " << rep.worst_tensor << " relative error "
          << rep.worst_error << '\n';
    }
    reports.push_back(std::move(rj));
  }
  if (!o.out.empty()) {
    write_file_atomic(o.out, reports.dump(2) + '\n');
    run.manifest.outputs.push_back(o.out);
  }
  run.manifest.counters["seeds"] = seeds.size();
  run.manifest.counters["passed"] = ok;
  return ok ? kExitOk : kExitCheckFailed;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "key = value configuration file")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "master seed (overrides the config)");
  sub->add_option("--threads", c.threads, "worker threads (capped by CRYSFLOW_THREADS)")->check(CLI::PositiveNumber);
  sub->add_option("--manifest", c.manifest_path, "run manifest path");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"crysflow: text-conditioned flow matching for crystal structures", "crysflow"};
  app.require_subcommand(1);
  Common common;
  IngestOpts ingest;
  TrainOpts train;
  CspOpts csp;
  SampleOpts sample;
  EvaluateOpts evaluate;
  DescribeOpts describe;
  GradcheckOpts gradcheck;

  auto* s_ingest = app.add_subcommand("ingest", "build a dataset, space-group database and lattice statistics");
  add_common(s_ingest, common);
  auto* src = s_ingest->add_option_group("source");
  src->add_option("--cif-dir", ingest.cif_dir, "directory of CIF files");
  src->add_option("--jsonl", ingest.jsonl, "existing dataset JSONL");
  src->require_option(1);
  s_ingest->add_option("--out", ingest.out, "dataset JSONL to write")->required();
  s_ingest->add_option("--db", ingest.db, "space-group database (default <out>.db.jsonl)");
  s_ingest->add_option("--stats", ingest.stats, "lattice statistics (default <out>.stats.json)");
  s_ingest->add_option("--test-out", ingest.test_out, "hold out 1 - train_fraction of the records here");
  s_ingest->add_flag("--strict", ingest.strict, "fail on the first invalid JSONL line");

  auto* s_train = app.add_subcommand("train", "train a flow model");
  add_common(s_train, common);
  s_train->add_option("--data", train.data, "dataset JSONL")->required();
  s_train->add_option("--out", train.out, "final checkpoint")->required();
  s_train->add_option("--best", train.best, "best checkpoint (default <out stem>.best<ext>)");
  s_train->add_option("--log", train.log, "loss log JSONL (default <out>.loss.jsonl)");
  auto* ep = s_train->add_option("--epochs", train.epochs, "passes over the dataset")->check(CLI::NonNegativeNumber);
  s_train->add_option("--steps", train.steps, "optimizer steps")->check(CLI::NonNegativeNumber)->excludes(ep);

  auto* s_csp = app.add_subcommand("csp", "predict structures for given compositions");
  add_common(s_csp, common);
  s_csp->add_option("--compositions", csp.compositions, "one formula per line")->check(CLI::ExistingFile);
  s_csp->add_option("--ckpt", csp.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  s_csp->add_option("--db", csp.db, "space-group database")->required()->check(CLI::ExistingFile);
  s_csp->add_option("--mode", csp.mode, "retrieved | oracle")
      ->check(CLI::IsMember({"retrieved", "conditional", "oracle"}));
  s_csp->add_option("--refs", csp.refs, "reference dataset, one record per composition line")
      ->check(CLI::ExistingFile);
  s_csp->add_option("--out", csp.out, "output directory")->required();
  s_csp->add_option("--steps", csp.steps, "integration steps")->check(CLI::PositiveNumber);
  s_csp->add_option("--gamma", csp.gamma, "coordinate velocity multiplier");

  auto* s_sample = app.add_subcommand("sample", "ab initio generation");
  add_common(s_sample, common);
  s_sample->add_option("--ckpt", sample.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  s_sample->add_option("--db", sample.db, "space-group database")->required()->check(CLI::ExistingFile);
  s_sample->add_option("--data", sample.data, "training dataset (composition pool, known formulas)")
      ->check(CLI::ExistingFile);
  s_sample->add_option("--compositions", sample.compositions, "explicit composition list")->check(CLI::ExistingFile);
  s_sample->add_option("-n", sample.n, "number of structures")->required();
  s_sample->add_flag("--reject-known", sample.reject_known, "discard formulas present in --data");
  s_sample->add_option("--out", sample.out, "output directory")->required();
  s_sample->add_option("--steps", sample.steps, "integration steps")->check(CLI::PositiveNumber);
  s_sample->add_option("--gamma", sample.gamma, "coordinate velocity multiplier");

  auto* s_eval = app.add_subcommand("evaluate", "compute metrics");
  add_common(s_eval, common);
  s_eval->add_option("--gen", evaluate.gen, "generated CIF directory or dataset")->required();
  s_eval->add_option("--ref", evaluate.ref, "reference CIF directory or dataset");
  s_eval->add_option("--metrics", evaluate.metrics, "all | validity | coverage | property | match");
  s_eval->add_option("--out", evaluate.out, "report JSON");
  s_eval->add_option("--pairs-out", evaluate.pairs_out, "per-pair match details JSONL");

  auto* s_desc = app.add_subcommand("describe", "print a text description");
  add_common(s_desc, common);
  s_desc->add_option("--cif", describe.cif, "structure")->check(CLI::ExistingFile);
  s_desc->add_option("--formula", describe.formula, "composition");
  s_desc->add_option("--sg", describe.sg, "space-group number")->check(CLI::Range(1, 230));
  s_desc->add_option("--db", describe.db, "space-group database for retrieval")->check(CLI::ExistingFile);
  s_desc->add_option("--mode", describe.mode, "oracle | conditional")
      ->check(CLI::IsMember({"oracle", "conditional", "retrieved"}));
  s_desc->add_flag("--json", describe.as_json, "print JSON");

  auto* s_grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  add_common(s_grad, common);
  s_grad->add_option("--seeds", gradcheck.seeds, "seeds to check (default: the config seed)");
  s_grad->add_option("--out", gradcheck.out, "report JSON");
  s_grad->add_option("--inject-fault", gradcheck.inject_fault, "")->group("");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  Run run_state(name, common);
  fs::path default_manifest;
  if (name == "ingest") default_manifest = with_suffix(ingest.out, ".manifest.json");
  if (name == "train") default_manifest = with_suffix(train.out, ".manifest.json");
  if (name == "csp") default_manifest = fs::path(csp.out) / "manifest.json";
  if (name == "sample") default_manifest = fs::path(sample.out) / "manifest.json";
  if (name == "evaluate") default_manifest = evaluate.out.empty() ? "evaluate.manifest.json" : with_suffix(evaluate.out, ".manifest.json");
  if (name == "describe") default_manifest = "describe.manifest.json";
  if (name == "gradcheck") default_manifest = gradcheck.out.empty() ? "gradcheck.manifest.json" : with_suffix(gradcheck.out, ".manifest.json");

  int code = kExitOk;
  try {
    if (name == "ingest") code = cmd_ingest(ingest, run_state, out, err);
    if (name == "train") code = cmd_train(train, run_state, out, err);
    if (name == "csp") code = cmd_csp(csp, run_state, out, err);
    if (name == "sample") code = cmd_sample(sample, run_state, out, err);
    if (name == "evaluate") code = cmd_evaluate(evaluate, run_state, out, err);
    if (name == "describe") code = cmd_describe(describe, run_state, out, err);
    if (name == "gradcheck") code = cmd_gradcheck(gradcheck, run_state, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    code = kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    code = kExitUsage;
  }
  try {
    run_state.finish(code, default_manifest);
  } catch (const std::exception& e) {
    err << "error: cannot write manifest: " << e.what() << '\n';
    if (code == kExitOk) code = kExitUsage;
  }
  return code;
}

}  // namespace crysflow::cli
