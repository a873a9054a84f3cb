#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "crysflow/conditioning.hpp"
#include "crysflow/metrics.hpp"
#include "crysflow/sampler.hpp"
#include "crysflow/train.hpp"

namespace crysflow {

// ---- CIF subset ----

struct CifStructure {
  std::string block_name;
  CrystalStructure structure;
  std::optional<SpaceGroup> space_group;  // from _symmetry_Int_Tables_number or _space_group_IT_number
};

// One data block, the six cell tags and an atom-site loop with fractional
// coordinates. Uncertainty suffixes "(n)" are stripped, coordinates wrapped,
// unknown tags and loops ignored. Throws ParseError, MissingTag, MalformedLoop.
CifStructure parse_cif(std::string_view text);

// Fixed tag order, 6-decimal numbers; the symmetry number only when sg is given.
std::string write_cif(const CrystalStructure& s, const std::optional<SpaceGroup>& sg = std::nullopt,
                      std::string_view block_name = {});

CifStructure read_cif_file(const std::filesystem::path& path);

// ---- files ----

std::string read_text_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// ---- dataset JSONL ----

struct DatasetRecord {
  std::string formula;
  int sg_number = 1;
  Lattice6 lattice;
  std::vector<int> species;
  Eigen::MatrixX3d frac;
  std::optional<std::string> description;

  std::size_t natoms() const { return species.size(); }
  CrystalStructure structure() const;
  SpaceGroup space_group() const { return SpaceGroup::from_number(sg_number); }
  static DatasetRecord from_structure(const CrystalStructure& s, const SpaceGroup& sg,
                                      std::optional<std::string> description = std::nullopt);

  bool operator==(const DatasetRecord&) const = default;
};

nlohmann::json to_json(const DatasetRecord& r);
// Throws ParseError (line 0) on schema violations.
DatasetRecord dataset_record_from_json(const nlohmann::json& j);

struct DatasetReadResult {
  std::vector<DatasetRecord> records;
  std::vector<std::string> warnings;  // "line N: ..." for skipped lines in lenient mode
};

// Blank lines are skipped. Strict mode throws ParseError with the 1-based line.
DatasetReadResult read_dataset(const std::filesystem::path& path, bool strict = true);
DatasetReadResult parse_dataset(std::string_view text, bool strict = true);
std::string format_dataset(std::span<const DatasetRecord> records);
void write_dataset(std::span<const DatasetRecord> records, const std::filesystem::path& path);

// ---- space-group database JSONL ----

std::string format_space_group_db(const SpaceGroupDatabase& db);
SpaceGroupDatabase parse_space_group_db(std::string_view text);
SpaceGroupDatabase read_space_group_db(const std::filesystem::path& path);
void write_space_group_db(const SpaceGroupDatabase& db, const std::filesystem::path& path);

// ---- checkpoints ----

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  FlowModel model;
  std::string rng_state;  // textual std::mt19937_64 state, may be empty
  std::int64_t step = 0;
};

// "CRYSFLOW" magic, u32 version, u64 header length, JSON header (configs,
// statistics, tensor names and shapes), then raw little-endian doubles.
std::string serialize_checkpoint(const Checkpoint& ckpt);
// Throws VersionMismatch, CorruptCheckpoint.
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- run configuration ----

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  NetworkConfig network;
  PathConfig path;
  TrainConfig train;
  SamplerConfig sampler;
  MatchConfig match;
  CoverageConfig coverage;
  double train_fraction = 0.8;  // ingest split
  int max_draws_per_sample = 10;  // rejection-sampling budget per requested sample
};

// key = value lines, '#' starts a comment. sampler.steps alone implies
// step_size = 1 / steps and vice versa. Throws UnknownKey, ConfigTypeError,
// ParseError.
RunConfig parse_config_text(std::string_view text);
RunConfig parse_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

// ---- manifests ----

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  double wall_clock_s = 0.0;
  nlohmann::json counters = nlohmann::json::object();
  int exit_code = 0;
};

std::string build_id();
nlohmann::json to_json(const RunManifest& m);
void write_manifest(const RunManifest& m, const std::filesystem::path& path);

}  // namespace crysflow
