#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crysflow/commands.hpp"
#include "crysflow/io.hpp"
#include "crysflow/toy_corpus.hpp"
#include "doctest.h"

using namespace crysflow;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("crysflow_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

std::string rock_salt_cif(double a, const char* cation) {
  std::ostringstream s;
  s << "data_x\n_cell_length_a " << a << "\n_cell_length_b " << a << "\n_cell_length_c " << a
    << "\n_cell_angle_alpha 90\n_cell_angle_beta 90\n_cell_angle_gamma 90\n_symmetry_Int_Tables_number 221\n"
    << "loop_\n_atom_site_type_symbol\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\n"
    << cation << " 0 0 0\nCl 0.5 0.5 0.5\n";
  return s.str();
}

// Small network so the end-to-end commands run in well under a second.
std::string tiny_config() {
  return "network.n_layers = 1\nnetwork.hidden_dim = 8\nnetwork.attn_dim = 8\nnetwork.n_buckets = 64\n"
         "network.n_fourier_freq = 2\nnetwork.n_time_freq = 2\ntrain.steps = 20\ntrain.batch_size = 4\n"
         "train.log_every = 5\nsampler.steps = 10\n";
}

}  // namespace

TEST_CASE("usage errors") {
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"bogus"}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);
  CHECK(run({"train", "--data", "/nonexistent/d.jsonl", "--out", "/tmp/x.ckpt"}).code == cli::kExitUsage);
}

TEST_CASE("effective thread count") {
  CHECK(cli::effective_threads(1) == 1);
  CHECK(cli::effective_threads(3) >= 1);
}

TEST_CASE("ingest") {
  const fs::path dir = scratch("ingest");
  write(dir / "cifs" / "a.cif", rock_salt_cif(4.0, "Na"));
  write(dir / "cifs" / "b.cif", rock_salt_cif(4.5, "K"));
  write(dir / "cifs" / "c.cif", rock_salt_cif(4.2, "Li"));
  const std::string out = (dir / "d.jsonl").string();
  Result r = run({"ingest", "--cif-dir", (dir / "cifs").string(), "--out", out});
  CHECK(r.code == 0);
  const auto ds = read_dataset(out);
  CHECK(ds.records.size() == 3);
  CHECK(fs::exists(out + ".db.jsonl"));
  CHECK(fs::exists(out + ".stats.json"));
  CHECK(fs::exists(out + ".manifest.json"));
  const auto manifest = nlohmann::json::parse(read_text_file(out + ".manifest.json"));
  CHECK(manifest["command"] == "ingest");
  CHECK(manifest["exit_code"] == 0);

  write(dir / "cifs" / "bad.cif", "data_x\n_cell_length_a 1\n");
  r = run({"ingest", "--cif-dir", (dir / "cifs").string(), "--out", out});
  CHECK(r.code == 0);
  CHECK(read_dataset(out).records.size() == 3);
  CHECK(r.err.find("bad.cif") != std::string::npos);

  fs::create_directories(dir / "empty");
  r = run({"ingest", "--cif-dir", (dir / "empty").string(), "--out", out});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("no inputs") != std::string::npos);

  CHECK(run({"ingest", "--out", out}).code == cli::kExitUsage);
}

TEST_CASE("train, csp, sample and evaluate") {
  const fs::path dir = scratch("pipeline");
  write(dir / "cfg.txt", tiny_config());
  ToyCorpusOptions opts;
  opts.n_structures = 24;
  opts.primitive = true;
  opts.seed = 1;
  std::vector<DatasetRecord> recs;
  for (const auto& item : rock_salt_corpus(opts)) {
    recs.push_back(DatasetRecord::from_structure(item.structure, item.space_group));
  }
  write_dataset(recs, dir / "all.jsonl");
  const std::string cfg = (dir / "cfg.txt").string();
  const std::string data = (dir / "d.jsonl").string();
  REQUIRE(run({"ingest", "--jsonl", (dir / "all.jsonl").string(), "--out", data, "--test-out",
               (dir / "test.jsonl").string(), "--config", cfg})
              .code == 0);

  const std::string ckpt = (dir / "m.ckpt").string();
  REQUIRE(run({"train", "--data", data, "--out", ckpt, "--config", cfg}).code == 0);
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(dir / "m.best.ckpt"));
  CHECK(fs::exists(ckpt + ".loss.jsonl"));
  CHECK(load_checkpoint(ckpt).step == 20);

  CHECK(run({"train", "--data", data, "--out", (dir / "zero.ckpt").string(), "--epochs", "0", "--config", cfg}).code ==
        0);
  CHECK(run({"train", "--data", data, "--out", ckpt, "--epochs", "1", "--steps", "3"}).code == cli::kExitUsage);

  const std::string db = data + ".db.jsonl";
  const std::string test = (dir / "test.jsonl").string();
  Result r = run({"csp", "--ckpt", ckpt, "--db", db, "--refs", test, "--out", (dir / "csp").string(), "--config", cfg});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "csp" / "records.jsonl"));
  CHECK(fs::exists(dir / "csp" / "manifest.json"));
  const auto first = std::string(fs::directory_iterator(dir / "csp")->path().filename());
  CHECK_FALSE(first.empty());

  // same seed, same bytes
  REQUIRE(run({"csp", "--ckpt", ckpt, "--db", db, "--refs", test, "--out", (dir / "csp2").string(), "--config", cfg})
              .code == 0);
  CHECK(read_text_file(dir / "csp" / "records.jsonl") == read_text_file(dir / "csp2" / "records.jsonl"));

  write(dir / "comps.txt", "NaCl\n");
  r = run({"csp", "--ckpt", ckpt, "--db", db, "--compositions", (dir / "comps.txt").string(), "--mode", "oracle",
           "--out", (dir / "oracle").string()});
  CHECK(r.code == cli::kExitUsage);
  r = run({"csp", "--ckpt", ckpt, "--db", db, "--refs", test, "--mode", "oracle", "--out",
           (dir / "oracle").string(), "--config", cfg});
  CHECK(r.code == 0);

  r = run({"evaluate", "--gen", test, "--ref", test, "--metrics", "match", "--out", (dir / "self.json").string()});
  REQUIRE(r.code == 0);
  const auto self = nlohmann::json::parse(read_text_file(dir / "self.json"));
  CHECK(self["match_rate"] == 100.0);
  CHECK(self["mean_rmsd"].get<double>() < 1e-9);

  r = run({"evaluate", "--gen", (dir / "csp").string(), "--ref", test, "--out", (dir / "eval.json").string()});
  CHECK(r.code == 0);
  const auto ev = nlohmann::json::parse(read_text_file(dir / "eval.json"));
  CHECK(ev.contains("struct_validity"));
  CHECK(ev.contains("match_rate"));

  r = run({"sample", "--ckpt", ckpt, "--db", db, "--data", data, "-n", "4", "--out", (dir / "s1").string(),
           "--config", cfg});
  CHECK(r.code == 0);
  CHECK(run({"sample", "--ckpt", ckpt, "--db", db, "--data", data, "-n", "4", "--out", (dir / "s2").string(),
             "--config", cfg})
            .code == 0);
  CHECK(read_text_file(dir / "s1" / "records.jsonl") == read_text_file(dir / "s2" / "records.jsonl"));

  // every pool formula is known, so rejection can never succeed
  r = run({"sample", "--ckpt", ckpt, "--db", db, "--data", data, "-n", "2", "--reject-known", "--out",
           (dir / "s3").string(), "--config", cfg});
  CHECK(r.code == cli::kExitCheckFailed);
}

TEST_CASE("describe and gradcheck") {
  const fs::path dir = scratch("gradcheck");
  const std::string manifest = (dir / "describe.manifest.json").string();
  Result r = run({"describe", "--formula", "GaTe", "--sg", "194", "--mode", "conditional", "--manifest", manifest});
  CHECK(r.code == 0);
  CHECK(r.out.find("GaTe crystallizes") != std::string::npos);
  CHECK(fs::exists(manifest));
  // oracle mode needs a structure
  CHECK(run({"describe", "--formula", "GaTe", "--manifest", manifest}).code == cli::kExitUsage);

  r = run({"gradcheck", "--seeds", "1", "--out", (dir / "g.json").string()});
  CHECK(r.code == 0);
  CHECK(nlohmann::json::parse(read_text_file(dir / "g.json")).dump().find("\"passed\":true") != std::string::npos);
  r = run({"gradcheck", "--seeds", "1", "--inject-fault", "coord_w", "--out", (dir / "f.json").string()});
  CHECK(r.code == cli::kExitCheckFailed);
}

TEST_CASE("evaluate edge cases") {
  const fs::path dir = scratch("evaluate");
  write(dir / "gen" / "0000_NaCl.cif", rock_salt_cif(4.0, "Na"));
  write(dir / "ref" / "0000_KCl.cif", rock_salt_cif(4.0, "K"));
  Result r = run({"evaluate", "--gen", (dir / "gen").string(), "--ref", (dir / "ref").string(), "--metrics", "match",
                  "--out", (dir / "m.json").string()});
  REQUIRE(r.code == 0);
  const auto m = nlohmann::json::parse(read_text_file(dir / "m.json"));
  CHECK(m["match_rate"] == 0.0);
  CHECK(m["rmsd_defined"] == false);

  // both atoms on the same site
  write(dir / "bad" / "0000_NaCl.cif",
        "data_x\n_cell_length_a 4\n_cell_length_b 4\n_cell_length_c 4\n_cell_angle_alpha 90\n_cell_angle_beta 90\n"
        "_cell_angle_gamma 90\nloop_\n_atom_site_type_symbol\n_atom_site_fract_x\n_atom_site_fract_y\n"
        "_atom_site_fract_z\nNa 0 0 0\nCl 0 0 0\n");
  r = run({"evaluate", "--gen", (dir / "bad").string(), "--metrics", "validity", "--out", (dir / "v.json").string()});
  REQUIRE(r.code == 0);
  const auto v = nlohmann::json::parse(read_text_file(dir / "v.json"));
  CHECK(v["struct_validity"] == 0.0);
  CHECK(v["comp_validity"] == 100.0);

  // generated index 3 has no reference partner
  write(dir / "gen3" / "0003_NaCl.cif", rock_salt_cif(4.0, "Na"));
  r = run({"evaluate", "--gen", (dir / "gen3").string(), "--ref", (dir / "ref").string(), "--metrics", "match",
           "--out", (dir / "l.json").string()});
  CHECK(r.code == cli::kExitUsage);

  fs::create_directories(dir / "empty");
  r = run({"evaluate", "--gen", (dir / "empty").string(), "--metrics", "validity", "--out", (dir / "e.json").string()});
  CHECK(r.code == cli::kExitUsage);
}

TEST_CASE("csp with duplicate compositions") {
  const fs::path dir = scratch("dupes");
  write(dir / "cfg.txt", tiny_config() + "train.steps = 0\n");
  ToyCorpusOptions opts;
  opts.n_structures = 8;
  opts.primitive = true;
  std::vector<DatasetRecord> recs;
  for (const auto& item : rock_salt_corpus(opts)) recs.push_back(DatasetRecord::from_structure(item.structure, item.space_group));
  write_dataset(recs, dir / "all.jsonl");
  const std::string cfg = (dir / "cfg.txt").string(), data = (dir / "d.jsonl").string();
  REQUIRE(run({"ingest", "--jsonl", (dir / "all.jsonl").string(), "--out", data, "--config", cfg}).code == 0);
  REQUIRE(run({"train", "--data", data, "--out", (dir / "m.ckpt").string(), "--config", cfg}).code == 0);
  write(dir / "comps.txt", "NaCl\nNaCl\n");
  REQUIRE(run({"csp", "--ckpt", (dir / "m.ckpt").string(), "--db", data + ".db.jsonl", "--compositions",
               (dir / "comps.txt").string(), "--out", (dir / "out").string(), "--config", cfg})
              .code == 0);
  CHECK(fs::exists(dir / "out" / "0000_NaCl.cif"));
  CHECK(fs::exists(dir / "out" / "0001_NaCl.cif"));
  CHECK(read_text_file(dir / "out" / "0000_NaCl.cif") != read_text_file(dir / "out" / "0001_NaCl.cif"));

  REQUIRE(run({"sample", "--ckpt", (dir / "m.ckpt").string(), "--db", data + ".db.jsonl", "--data", data, "-n", "5",
               "--out", (dir / "s").string(), "--config", cfg})
              .code == 0);
  int cifs = 0;
  for (const auto& e : fs::directory_iterator(dir / "s")) cifs += e.path().extension() == ".cif";
  CHECK(cifs == 5);
}
