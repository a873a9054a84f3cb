#include "crysflow/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "crysflow/elements.hpp"
#include "crysflow/errors.hpp"

#ifndef CRYSFLOW_BUILD_ID
#define CRYSFLOW_BUILD_ID "unknown"
#endif

namespace crysflow {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

// ---- CIF lexing ----

struct Token {
  std::string text;
  std::size_t col = 0;  // 1-based
  bool quoted = false;
};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f'; }

// Splits one line into CIF tokens; '#' at a token start begins a comment.
std::vector<Token> tokenize_line(std::string_view line) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    if (i >= line.size() || line[i] == '#') break;
    Token t;
    t.col = i + 1;
    const char q = line[i];
    if (q == '\'' || q == '"') {
      // a quote closes only when followed by whitespace or end of line
      std::size_t j = i + 1;
      while (j < line.size() && !(line[j] == q && (j + 1 == line.size() || is_space(line[j + 1])))) ++j;
      if (j < line.size()) {
        t.text = std::string(line.substr(i + 1, j - i - 1));
        t.quoted = true;
        i = j + 1;
        out.push_back(std::move(t));
        continue;
      }
    }
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    t.text = std::string(line.substr(i, j - i));
    i = j;
    out.push_back(std::move(t));
  }
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && lower(s.substr(0, prefix.size())) == prefix;
}

// "5.64(2)" -> 5.64; rejects anything else that is not a plain finite number.
std::optional<double> parse_cif_number(std::string_view s) {
  if (const auto open = s.find('('); open != std::string_view::npos) {
    if (s.back() != ')' || open == 0 || open + 2 > s.size() - 1 + 1) return std::nullopt;
    const std::string_view digits = s.substr(open + 1, s.size() - open - 2);
    if (digits.empty()) return std::nullopt;
    for (char c : digits) {
      if (c < '0' || c > '9') return std::nullopt;
    }
    s = s.substr(0, open);
  }
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// Leading element symbol of a type symbol or label ("Na1+", "Cl2" -> "Na", "Cl").
std::optional<int> symbol_to_z(std::string_view s) {
  if (s.empty() || !std::isupper(static_cast<unsigned char>(s[0]))) return std::nullopt;
  std::string sym(1, s[0]);
  if (s.size() > 1 && std::islower(static_cast<unsigned char>(s[1]))) sym.push_back(s[1]);
  return atomic_number(sym);
}

struct TagValue {
  std::string text;
  std::size_t line = 0;
  std::size_t col = 0;
};

struct RawLoop {
  std::vector<std::string> columns;
  std::vector<std::vector<TagValue>> rows;
};

const char* const kCellTags[6] = {"_cell_length_a", "_cell_length_b", "_cell_length_c",
                                  "_cell_angle_alpha", "_cell_angle_beta", "_cell_angle_gamma"};

std::string fmt6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

}  // namespace

CifStructure parse_cif(std::string_view text) {
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t nl = text.find('\n', start);
      if (nl == std::string_view::npos) {
        lines.push_back(text.substr(start));
        break;
      }
      lines.push_back(text.substr(start, nl - start));
      start = nl + 1;
    }
  }

  CifStructure out;
  bool in_block = false;
  std::map<std::string, TagValue> tags;
  std::vector<RawLoop> loops;

  enum class State { Normal, LoopHeader, LoopBody };
  State state = State::Normal;
  std::optional<std::string> pending_tag;
  std::size_t pending_line = 0;

  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::size_t lineno = li + 1;
    std::string_view line = lines[li];

    // semicolon text field: consumes lines up to the closing ';'
    if (!line.empty() && line[0] == ';') {
      std::size_t end = li + 1;
      while (end < lines.size() && (lines[end].empty() || lines[end][0] != ';')) ++end;
      if (end >= lines.size()) throw ParseError(lineno, 1, "unterminated text field");
      TagValue v{"", lineno, 1};
      if (pending_tag) {
        tags[lower(*pending_tag)] = v;
        pending_tag.reset();
      } else if (state == State::LoopBody || state == State::LoopHeader) {
        state = State::LoopBody;
        if (loops.back().rows.empty() || loops.back().rows.back().size() >= loops.back().columns.size()) {
          loops.back().rows.emplace_back();
        }
        loops.back().rows.back().push_back(v);
      } else {
        throw ParseError(lineno, 1, "text field without a tag");
      }
      li = end;
      continue;
    }

    const std::vector<Token> toks = tokenize_line(line);
    if (toks.empty()) continue;

    std::size_t k = 0;
    while (k < toks.size()) {
      const Token& t = toks[k];
      const bool reserved = !t.quoted;
      if (reserved && starts_with_ci(t.text, "data_")) {
        if (pending_tag) throw ParseError(pending_line, 1, "tag " + *pending_tag + " has no value");
        if (in_block) throw ParseError(lineno, t.col, "more than one data block");
        in_block = true;
        out.block_name = t.text.substr(5);
        state = State::Normal;
        ++k;
        continue;
      }
      if (!in_block) throw ParseError(lineno, t.col, "content before the first data block");
      if (pending_tag) {
        if (reserved && (t.text[0] == '_' || lower(t.text) == "loop_")) {
          throw ParseError(pending_line, 1, "tag " + *pending_tag + " has no value");
        }
        tags[lower(*pending_tag)] = {t.text, lineno, t.col};
        pending_tag.reset();
        ++k;
        continue;
      }
      if (reserved && lower(t.text) == "loop_") {
        loops.emplace_back();
        state = State::LoopHeader;
        ++k;
        continue;
      }
      if (reserved && t.text[0] == '_') {
        if (state == State::LoopHeader) {
          loops.back().columns.push_back(lower(t.text));
          ++k;
          continue;
        }
        state = State::Normal;
        if (k + 1 < toks.size()) {
          tags[lower(t.text)] = {toks[k + 1].text, lineno, toks[k + 1].col};
          k += 2;
        } else {
          pending_tag = t.text;
          pending_line = lineno;
          ++k;
        }
        continue;
      }
      if (state == State::LoopHeader || state == State::LoopBody) {
        RawLoop& lp = loops.back();
        if (lp.columns.empty()) throw MalformedLoop(lineno, t.col, "loop_ without column tags");
        if (state == State::LoopHeader) state = State::LoopBody;
        // rows are line based: the whole remaining line is one row
        std::vector<TagValue> row;
        for (; k < toks.size(); ++k) row.push_back({toks[k].text, lineno, toks[k].col});
        if (row.size() != lp.columns.size()) {
          throw MalformedLoop(lineno, row.front().col,
                              "loop row has " + std::to_string(row.size()) + " of " +
                                  std::to_string(lp.columns.size()) + " declared values");
        }
        lp.rows.push_back(std::move(row));
        continue;
      }
      throw ParseError(lineno, t.col, "unexpected value '" + t.text + "'");
    }
  }
  if (pending_tag) throw ParseError(pending_line, 1, "tag " + *pending_tag + " has no value");
  if (!in_block) throw ParseError(lines.size(), 0, "no data block");
  for (const RawLoop& lp : loops) {
    if (lp.columns.empty()) throw MalformedLoop(lines.size(), 0, "loop_ without column tags");
  }

  const std::size_t eof_line = lines.size();
  std::array<double, 6> cell{};
  for (int i = 0; i < 6; ++i) {
    const auto it = tags.find(kCellTags[i]);
    if (it == tags.end()) throw MissingTag(eof_line, kCellTags[i]);
    const auto v = parse_cif_number(it->second.text);
    if (!v) throw ParseError(it->second.line, it->second.col, std::string("invalid number for ") + kCellTags[i]);
    const bool ok = i < 3 ? *v > 0.0 : (*v > 0.0 && *v < 180.0);
    if (!ok) throw ParseError(it->second.line, it->second.col, std::string("out-of-range value for ") + kCellTags[i]);
    cell[static_cast<std::size_t>(i)] = *v;
  }
  CrystalStructure& s = out.structure;
  s.lattice = Lattice6::from_array(cell);
  if (!is_valid(s.lattice)) {
    const auto& gamma = tags.at("_cell_angle_gamma");
    throw ParseError(gamma.line, gamma.col, "cell angles do not form a valid cell");
  }

  for (const char* key : {"_symmetry_int_tables_number", "_space_group_it_number"}) {
    const auto it = tags.find(key);
    if (it == tags.end()) continue;
    const auto n = parse_int(it->second.text);
    if (!n || *n < 1 || *n > 230) throw ParseError(it->second.line, it->second.col, "invalid space-group number");
    out.space_group = SpaceGroup::from_number(*n);
    break;
  }

  const RawLoop* sites = nullptr;
  for (const RawLoop& lp : loops) {
    if (std::find(lp.columns.begin(), lp.columns.end(), "_atom_site_fract_x") != lp.columns.end()) {
      sites = &lp;
      break;
    }
  }
  if (sites == nullptr) throw MissingTag(eof_line, "_atom_site_fract_x");
  auto column = [&](const char* name) -> std::optional<std::size_t> {
    const auto it = std::find(sites->columns.begin(), sites->columns.end(), name);
    if (it == sites->columns.end()) return std::nullopt;
    return static_cast<std::size_t>(it - sites->columns.begin());
  };
  std::array<std::size_t, 3> xyz{};
  const char* const xyz_tags[3] = {"_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z"};
  for (int d = 0; d < 3; ++d) {
    const auto c = column(xyz_tags[d]);
    if (!c) throw MissingTag(eof_line, xyz_tags[d]);
    xyz[static_cast<std::size_t>(d)] = *c;
  }
  auto species_col = column("_atom_site_type_symbol");
  if (!species_col) species_col = column("_atom_site_label");
  if (!species_col) throw MissingTag(eof_line, "_atom_site_type_symbol");
  if (sites->rows.empty()) throw MalformedLoop(eof_line, 0, "atom-site loop has no rows");

  s.frac.resize(static_cast<Eigen::Index>(sites->rows.size()), 3);
  for (std::size_t r = 0; r < sites->rows.size(); ++r) {
    const auto& row = sites->rows[r];
    const TagValue& sym = row[*species_col];
    const auto z = symbol_to_z(sym.text);
    if (!z) throw ParseError(sym.line, sym.col, "unknown element '" + sym.text + "'");
    s.composition.species.push_back(*z);
    for (int d = 0; d < 3; ++d) {
      const TagValue& v = row[xyz[static_cast<std::size_t>(d)]];
      const auto x = parse_cif_number(v.text);
      if (!x) throw ParseError(v.line, v.col, "invalid fractional coordinate '" + v.text + "'");
      s.frac(static_cast<Eigen::Index>(r), d) = wrap(*x);
    }
  }
  return out;
}

std::string write_cif(const CrystalStructure& s, const std::optional<SpaceGroup>& sg, std::string_view block_name) {
  validate(s);
  std::string out;
  out += "data_";
  out += block_name.empty() ? reduced_formula(s.composition) : std::string(block_name);
  out += '\n';
  const auto cell = s.lattice.to_array();
  for (int i = 0; i < 6; ++i) {
    std::string tag = kCellTags[i];
    tag.resize(20, ' ');
    out += tag + fmt6(cell[static_cast<std::size_t>(i)]) + '\n';
  }
  if (sg) out += "_symmetry_Int_Tables_number " + std::to_string(sg->number) + '\n';
  out += "loop_\n_atom_site_label\n_atom_site_type_symbol\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\n";
  std::map<int, int> seen;
  for (Eigen::Index i = 0; i < s.frac.rows(); ++i) {
    const int z = s.composition.species[static_cast<std::size_t>(i)];
    const std::string sym(element(z).symbol);
    out += sym + std::to_string(++seen[z]) + ' ' + sym;
    for (int d = 0; d < 3; ++d) {
      std::string v = fmt6(wrap(s.frac(i, d)));
      if (v == "1.000000") v = "0.000000";
      out += ' ' + v;
    }
    out += '\n';
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidArgument("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InvalidArgument("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CifStructure read_cif_file(const std::filesystem::path& path) { return parse_cif(read_text_file(path)); }

// ---- dataset ----

CrystalStructure DatasetRecord::structure() const {
  CrystalStructure s;
  s.composition.species = species;
  s.lattice = lattice;
  s.frac = frac;
  return s;
}

DatasetRecord DatasetRecord::from_structure(const CrystalStructure& s, const SpaceGroup& sg,
                                            std::optional<std::string> description) {
  DatasetRecord r;
  r.formula = reduced_formula(s.composition);
  r.sg_number = sg.number;
  r.lattice = s.lattice;
  r.species = s.composition.species;
  r.frac = s.frac;
  r.description = std::move(description);
  return r;
}

json to_json(const DatasetRecord& r) {
  json j;
  j["formula"] = r.formula;
  j["natoms"] = r.natoms();
  j["sg_number"] = r.sg_number;
  j["lattice"] = r.lattice.to_array();
  j["species"] = r.species;
  json frac = json::array();
  for (Eigen::Index i = 0; i < r.frac.rows(); ++i) frac.push_back({r.frac(i, 0), r.frac(i, 1), r.frac(i, 2)});
  j["frac"] = std::move(frac);
  if (r.description) j["description"] = *r.description;
  return j;
}

DatasetRecord dataset_record_from_json(const json& j) {
  auto fail = [](const std::string& msg) -> ParseError { return ParseError(0, 0, msg); };
  try {
    if (!j.is_object()) throw fail("record is not an object");
    DatasetRecord r;
    r.formula = j.at("formula").get<std::string>();
    const auto natoms = j.at("natoms").get<std::int64_t>();
    r.sg_number = j.at("sg_number").get<int>();
    if (r.sg_number < 1 || r.sg_number > 230) throw fail("sg_number outside [1, 230]");
    const auto lat = j.at("lattice").get<std::vector<double>>();
    if (lat.size() != 6) throw fail("lattice must have 6 entries");
    r.lattice = Lattice6::from_array({lat[0], lat[1], lat[2], lat[3], lat[4], lat[5]});
    if (!is_valid(r.lattice)) throw fail("lattice is not a valid cell");
    r.species = j.at("species").get<std::vector<int>>();
    const auto& frac = j.at("frac");
    if (!frac.is_array()) throw fail("frac must be an array");
    if (natoms < 1 || static_cast<std::size_t>(natoms) != r.species.size() || frac.size() != r.species.size()) {
      throw fail("natoms disagrees with species or frac");
    }
    for (int z : r.species) {
      if (z < 1 || z > kMaxZ) throw fail("atomic number out of range");
    }
    r.frac.resize(static_cast<Eigen::Index>(frac.size()), 3);
    for (std::size_t i = 0; i < frac.size(); ++i) {
      const auto row = frac[i].get<std::vector<double>>();
      if (row.size() != 3) throw fail("frac rows must have 3 entries");
      for (int d = 0; d < 3; ++d) {
        const double x = row[static_cast<std::size_t>(d)];
        if (!(x >= 0.0 && x < 1.0)) throw fail("frac entries must lie in [0, 1)");
        r.frac(static_cast<Eigen::Index>(i), d) = x;
      }
    }
    if (j.contains("description") && !j.at("description").is_null()) {
      r.description = j.at("description").get<std::string>();
    }
    return r;
  } catch (const json::exception& e) {
    throw fail(std::string("schema error: ") + e.what());
  }
}

DatasetReadResult parse_dataset(std::string_view text, bool strict) {
  DatasetReadResult res;
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = text.substr(start, nl - start);
    start = nl + 1;
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw ParseError(lineno, 0, std::string("invalid JSON: ") + e.what());
      }
      try {
        res.records.push_back(dataset_record_from_json(j));
      } catch (const ParseError& e) {
        throw ParseError(lineno, 0, e.what());
      }
    } catch (const ParseError& e) {
      if (strict) throw;
      res.warnings.push_back(e.what());
    }
  }
  return res;
}

DatasetReadResult read_dataset(const std::filesystem::path& path, bool strict) {
  return parse_dataset(read_text_file(path), strict);
}

std::string format_dataset(std::span<const DatasetRecord> records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + '\n';
  return out;
}

void write_dataset(std::span<const DatasetRecord> records, const std::filesystem::path& path) {
  write_file_atomic(path, format_dataset(records));
}

// ---- space-group database ----

std::string format_space_group_db(const SpaceGroupDatabase& db) {
  std::string out;
  for (const auto& e : db.entries) {
    json nz = json::array();
    for (Eigen::Index z = 0; z < e.fingerprint.fractions.size(); ++z) {
      if (e.fingerprint.fractions(z) != 0.0) nz.push_back({z + 1, e.fingerprint.fractions(z)});
    }
    json j;
    j["formula"] = e.formula;
    j["fingerprint_nonzero"] = std::move(nz);
    j["sg_number"] = e.space_group.number;
    j["sg_symbol"] = e.space_group.symbol;
    out += j.dump() + '\n';
  }
  return out;
}

SpaceGroupDatabase parse_space_group_db(std::string_view text) {
  SpaceGroupDatabase db;
  std::size_t lineno = 0, start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = text.substr(start, nl - start);
    start = nl + 1;
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const json j = json::parse(line);
      SpaceGroupEntry e;
      e.formula = j.at("formula").get<std::string>();
      e.space_group = SpaceGroup::from_number(j.at("sg_number").get<int>());
      double sum = 0.0;
      for (const auto& pair : j.at("fingerprint_nonzero")) {
        const int z = pair.at(0).get<int>();
        const double f = pair.at(1).get<double>();
        if (z < 1 || z > kMaxZ || !(f >= 0.0)) throw ParseError(lineno, 0, "invalid fingerprint entry");
        e.fingerprint.fractions(z - 1) = f;
        sum += f;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw ParseError(lineno, 0, "fingerprint does not sum to 1");
      db.entries.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw ParseError(lineno, 0, std::string("invalid database entry: ") + e.what());
    } catch (const InvalidArgument& e) {
      throw ParseError(lineno, 0, e.what());
    }
  }
  return db;
}

SpaceGroupDatabase read_space_group_db(const std::filesystem::path& path) {
  return parse_space_group_db(read_text_file(path));
}

void write_space_group_db(const SpaceGroupDatabase& db, const std::filesystem::path& path) {
  write_file_atomic(path, format_space_group_db(db));
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[8] = {'C', 'R', 'Y', 'S', 'F', 'L', 'O', 'W'};

json network_json(const NetworkConfig& c) {
  return {{"n_layers", c.n_layers},     {"hidden_dim", c.hidden_dim}, {"n_fourier_freq", c.n_fourier_freq},
          {"n_time_freq", c.n_time_freq}, {"attn_dim", c.attn_dim},   {"n_heads", c.n_heads},
          {"max_z", c.max_z},           {"n_buckets", c.n_buckets}};
}

NetworkConfig network_from_json(const json& j) {
  NetworkConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.n_fourier_freq = j.at("n_fourier_freq").get<int>();
  c.n_time_freq = j.at("n_time_freq").get<int>();
  c.attn_dim = j.at("attn_dim").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.max_z = j.at("max_z").get<int>();
  c.n_buckets = j.at("n_buckets").get<int>();
  return c;
}

std::vector<double> row_vec(const Row6& r) { return {r.data(), r.data() + 6}; }

Row6 row_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 6) throw CorruptCheckpoint("6-vector expected");
  Row6 r;
  for (int k = 0; k < 6; ++k) r(k) = v[static_cast<std::size_t>(k)];
  return r;
}

json path_json(const PathConfig& p) {
  return {{"sigma_L", p.sigma_L},         {"mu0_L", row_vec(p.mu0_L)},         {"sigma0_L", row_vec(p.sigma0_L)},
          {"lattice_weight", p.lattice_weight}, {"time_beta_a", p.time_beta_a}, {"time_beta_b", p.time_beta_b}};
}

PathConfig path_from_json(const json& j) {
  PathConfig p;
  p.sigma_L = j.at("sigma_L").get<double>();
  p.mu0_L = row_from(j.at("mu0_L"));
  p.sigma0_L = row_from(j.at("sigma0_L"));
  p.lattice_weight = j.at("lattice_weight").get<double>();
  p.time_beta_a = j.at("time_beta_a").get<double>();
  p.time_beta_b = j.at("time_beta_b").get<double>();
  return p;
}

template <class T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get_le(std::string_view bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const ModelParams& p = ckpt.model.params;
  json header;
  header["network"] = network_json(p.config);
  header["path"] = path_json(ckpt.model.path);
  header["lattice_stats"] = {{"mean", row_vec(p.lattice_stats.mean)}, {"std", row_vec(p.lattice_stats.std)}};
  header["rng_state"] = ckpt.rng_state;
  header["step"] = ckpt.step;
  json tensors = json::array();
  p.for_each([&](const std::string& name, const Eigen::MatrixXd& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  header["tensors"] = std::move(tensors);
  const std::string h = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, h.size());
  out += h;
  p.for_each([&](const std::string&, const Eigen::MatrixXd& m) {
    // column-major, as stored by Eigen
    out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  });
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  constexpr std::size_t kFixed = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < kFixed) throw CorruptCheckpoint("file too short for a checkpoint header");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw CorruptCheckpoint("bad magic");
  const auto version = get_le<std::uint32_t>(bytes, sizeof kMagic);
  if (version != kCheckpointVersion) {
    throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  const auto hlen = get_le<std::uint64_t>(bytes, sizeof kMagic + sizeof(std::uint32_t));
  if (hlen > bytes.size() - kFixed) throw CorruptCheckpoint("header length exceeds file size");
  Checkpoint ckpt;
  try {
    const json header = json::parse(bytes.substr(kFixed, hlen));
    const NetworkConfig net = network_from_json(header.at("network"));
    validate(net);
    ckpt.model.params = zero_params(net);
    ckpt.model.path = path_from_json(header.at("path"));
    ckpt.model.params.lattice_stats.mean = row_from(header.at("lattice_stats").at("mean"));
    ckpt.model.params.lattice_stats.std = row_from(header.at("lattice_stats").at("std"));
    ckpt.rng_state = header.at("rng_state").get<std::string>();
    ckpt.step = header.at("step").get<std::int64_t>();
    const json& tensors = header.at("tensors");
    std::size_t offset = kFixed + hlen;
    std::size_t k = 0;
    ckpt.model.params.for_each([&](const std::string& name, Eigen::MatrixXd& m) {
      if (k >= tensors.size()) throw CorruptCheckpoint("fewer tensors than the configuration requires");
      const json& t = tensors[k++];
      if (t.at("name").get<std::string>() != name || t.at("rows").get<Eigen::Index>() != m.rows() ||
          t.at("cols").get<Eigen::Index>() != m.cols()) {
        throw CorruptCheckpoint("tensor " + name + " has an unexpected name or shape");
      }
      const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(double);
      if (bytes.size() - offset < n) throw CorruptCheckpoint("payload truncated in " + name);
      std::memcpy(m.data(), bytes.data() + offset, n);
      offset += n;
    });
    if (k != tensors.size()) throw CorruptCheckpoint("more tensors than the configuration requires");
    if (offset != bytes.size()) throw CorruptCheckpoint("trailing bytes after the payload");
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(std::string("bad header: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw CorruptCheckpoint(std::string("bad header: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_text_file(path)); }

// ---- configuration ----

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long need_int(std::string_view v, const std::string& key, std::size_t line, std::size_t col) {
  long long x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigTypeError(line, col, "expected an integer for " + key);
  }
  return x;
}

double need_double(std::string_view v, const std::string& key, std::size_t line, std::size_t col) {
  double x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(x)) {
    throw ConfigTypeError(line, col, "expected a number for " + key);
  }
  return x;
}

bool need_bool(std::string_view v, const std::string& key, std::size_t line, std::size_t col) {
  const std::string s = lower(v);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigTypeError(line, col, "expected true or false for " + key);
}

using Apply = std::function<void(RunConfig&, std::string_view, const std::string&, std::size_t, std::size_t)>;

Apply int_key(std::function<int&(RunConfig&)> ref) {
  return [ref](RunConfig& c, std::string_view v, const std::string& k, std::size_t l, std::size_t col) {
    const long long x = need_int(v, k, l, col);
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
      throw ConfigTypeError(l, col, "integer out of range for " + k);
    }
    ref(c) = static_cast<int>(x);
  };
}

Apply double_key(std::function<double&(RunConfig&)> ref) {
  return [ref](RunConfig& c, std::string_view v, const std::string& k, std::size_t l, std::size_t col) {
    ref(c) = need_double(v, k, l, col);
  };
}

Apply bool_key(std::function<bool&(RunConfig&)> ref) {
  return [ref](RunConfig& c, std::string_view v, const std::string& k, std::size_t l, std::size_t col) {
    ref(c) = need_bool(v, k, l, col);
  };
}

const std::map<std::string, Apply>& config_keys() {
  static const std::map<std::string, Apply> keys = [] {
    std::map<std::string, Apply> m;
    m["seed"] = [](RunConfig& c, std::string_view v, const std::string& k, std::size_t l, std::size_t col) {
      const long long x = need_int(v, k, l, col);
      if (x < 0) throw ConfigTypeError(l, col, "seed must be non-negative");
      c.seed = static_cast<std::uint64_t>(x);
    };
    m["threads"] = int_key([](RunConfig& c) -> int& { return c.threads; });
    m["train_fraction"] = double_key([](RunConfig& c) -> double& { return c.train_fraction; });
    m["sample.max_draws_per_sample"] = int_key([](RunConfig& c) -> int& { return c.max_draws_per_sample; });
    m["network.n_layers"] = int_key([](RunConfig& c) -> int& { return c.network.n_layers; });
    m["network.hidden_dim"] = int_key([](RunConfig& c) -> int& { return c.network.hidden_dim; });
    m["network.n_fourier_freq"] = int_key([](RunConfig& c) -> int& { return c.network.n_fourier_freq; });
    m["network.n_time_freq"] = int_key([](RunConfig& c) -> int& { return c.network.n_time_freq; });
    m["network.attn_dim"] = int_key([](RunConfig& c) -> int& { return c.network.attn_dim; });
    m["network.n_heads"] = int_key([](RunConfig& c) -> int& { return c.network.n_heads; });
    m["network.n_buckets"] = int_key([](RunConfig& c) -> int& { return c.network.n_buckets; });
    m["path.sigma_L"] = double_key([](RunConfig& c) -> double& { return c.path.sigma_L; });
    m["path.lattice_weight"] = double_key([](RunConfig& c) -> double& { return c.path.lattice_weight; });
    m["path.time_beta_a"] = double_key([](RunConfig& c) -> double& { return c.path.time_beta_a; });
    m["path.time_beta_b"] = double_key([](RunConfig& c) -> double& { return c.path.time_beta_b; });
    m["train.lr"] = double_key([](RunConfig& c) -> double& { return c.train.lr; });
    m["train.steps"] = int_key([](RunConfig& c) -> int& { return c.train.steps; });
    m["train.batch_size"] = int_key([](RunConfig& c) -> int& { return c.train.batch_size; });
    m["train.log_every"] = int_key([](RunConfig& c) -> int& { return c.train.log_every; });
    m["train.conditional_text_prob"] =
        double_key([](RunConfig& c) -> double& { return c.train.conditional_text_prob; });
    m["train.translate_augment"] = bool_key([](RunConfig& c) -> bool& { return c.train.translate_augment; });
    m["train.cosine_decay"] = bool_key([](RunConfig& c) -> bool& { return c.train.cosine_decay; });
    m["train.lr_floor"] = double_key([](RunConfig& c) -> double& { return c.train.lr_floor; });
    m["sampler.steps"] = int_key([](RunConfig& c) -> int& { return c.sampler.n_steps; });
    m["sampler.step_size"] = double_key([](RunConfig& c) -> double& { return c.sampler.step_size; });
    m["sampler.anneal_gamma"] = double_key([](RunConfig& c) -> double& { return c.sampler.anneal_gamma; });
    m["sampler.partial"] = bool_key([](RunConfig& c) -> bool& { return c.sampler.allow_partial; });
    m["match.ltol"] = double_key([](RunConfig& c) -> double& { return c.match.ltol; });
    m["match.stol"] = double_key([](RunConfig& c) -> double& { return c.match.stol; });
    m["match.angle_tol"] = double_key([](RunConfig& c) -> double& { return c.match.angle_tol; });
    m["coverage.struct_threshold"] = double_key([](RunConfig& c) -> double& { return c.coverage.struct_threshold; });
    m["coverage.comp_threshold"] = double_key([](RunConfig& c) -> double& { return c.coverage.comp_threshold; });
    return m;
  }();
  return keys;
}

}  // namespace

RunConfig parse_config_text(std::string_view text) {
  RunConfig cfg;
  bool steps_set = false, step_size_set = false;
  std::size_t lineno = 0, start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(start, nl - start);
    start = nl + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      const auto col = line.find_first_not_of(" \t") + 1;
      throw ParseError(lineno, col, "expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view raw_value = line.substr(eq + 1);
    const std::string_view value = trim(raw_value);
    const std::size_t value_col = eq + 2 + (raw_value.size() - raw_value.find_first_not_of(" \t") == raw_value.size()
                                                ? 0
                                                : raw_value.find_first_not_of(" \t"));
    const auto& keys = config_keys();
    const auto it = keys.find(key);
    if (it == keys.end()) throw UnknownKey(lineno, key);
    if (value.empty()) throw ConfigTypeError(lineno, value_col, "missing value for " + key);
    it->second(cfg, value, key, lineno, value_col);
    if (key == "sampler.steps") steps_set = true;
    if (key == "sampler.step_size") step_size_set = true;
  }
  if (steps_set && !step_size_set && cfg.sampler.n_steps > 0) cfg.sampler.step_size = 1.0 / cfg.sampler.n_steps;
  if (step_size_set && !steps_set && cfg.sampler.step_size > 0) {
    cfg.sampler.n_steps = static_cast<int>(std::lround(1.0 / cfg.sampler.step_size));
  }
  validate(cfg.network);
  validate(cfg.path);
  validate(cfg.train);
  validate(cfg.sampler);
  validate(cfg.match);
  if (cfg.threads < 1) throw InvalidArgument("threads must be >= 1");
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0)) throw InvalidArgument("train_fraction must lie in (0, 1]");
  if (cfg.max_draws_per_sample < 1) throw InvalidArgument("sample.max_draws_per_sample must be >= 1");
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) { return parse_config_text(read_text_file(path)); }

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["train_fraction"] = c.train_fraction;
  j["sample"] = {{"max_draws_per_sample", c.max_draws_per_sample}};
  j["network"] = network_json(c.network);
  j["path"] = {{"sigma_L", c.path.sigma_L},
               {"lattice_weight", c.path.lattice_weight},
               {"time_beta_a", c.path.time_beta_a},
               {"time_beta_b", c.path.time_beta_b}};
  j["train"] = {{"lr", c.train.lr},
                {"steps", c.train.steps},
                {"batch_size", c.train.batch_size},
                {"log_every", c.train.log_every},
                {"conditional_text_prob", c.train.conditional_text_prob},
                {"translate_augment", c.train.translate_augment},
                {"cosine_decay", c.train.cosine_decay},
                {"lr_floor", c.train.lr_floor}};
  j["sampler"] = {{"steps", c.sampler.n_steps},
                  {"step_size", c.sampler.step_size},
                  {"anneal_gamma", c.sampler.anneal_gamma},
                  {"partial", c.sampler.allow_partial}};
  j["match"] = {{"ltol", c.match.ltol}, {"stol", c.match.stol}, {"angle_tol", c.match.angle_tol}};
  j["coverage"] = {{"struct_threshold", c.coverage.struct_threshold},
                   {"comp_threshold", c.coverage.comp_threshold}};
  return j;
}

// ---- manifests ----

std::string build_id() { return CRYSFLOW_BUILD_ID; }

json to_json(const RunManifest& m) {
  return {{"command", m.command},   {"build_id", build_id()},         {"config", m.config},
          {"seed", m.seed},         {"inputs", m.inputs},             {"outputs", m.outputs},
          {"wall_clock_s", m.wall_clock_s}, {"counters", m.counters}, {"exit_code", m.exit_code}};
}

void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  write_file_atomic(path, to_json(m).dump(2) + '\n');
}

}  // namespace crysflow
