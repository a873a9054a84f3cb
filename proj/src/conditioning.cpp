#include "crysflow/conditioning.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <regex>
#include <tuple>

#include "crysflow/elements.hpp"
#include "crysflow/errors.hpp"
#include "crysflow/torus.hpp"

namespace crysflow {
namespace {

// Same element order as reduced_formula.
bool formula_less(int za, int zb) {
  const auto& a = element(za);
  const auto& b = element(zb);
  return std::tie(a.electronegativity, a.symbol) < std::tie(b.electronegativity, b.symbol);
}

std::string fixed2(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string header(const Composition& c, const SpaceGroup& sg) {
  std::string s = reduced_formula(c);
  s += " crystallizes in the ";
  s += crystal_system_name(sg.crystal_system());
  s += ' ';
  s += sg.symbol;
  s += " space group. The space group number is ";
  s += std::to_string(sg.number);
  s += ". It has in total ";
  s += std::to_string(c.size());
  s += " atoms, with ";
  s += atom_count_phrase(c);
  s += '.';
  return s;
}

// Nearest-neighbour bond lengths grouped by unordered species pair.
std::string bond_sentences(const CrystalStructure& s) {
  const LatticeMatrix m = lattice_to_matrix(s.lattice);
  const auto n = static_cast<Eigen::Index>(s.natoms());
  constexpr double kTieTol = 1e-3;  // Angstrom

  std::map<std::pair<int, int>, std::vector<double>> bonds;
  auto key = [](int za, int zb) {
    return formula_less(zb, za) ? std::pair{zb, za} : std::pair{za, zb};
  };

  std::vector<double> dist(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      Eigen::RowVector3d d;
      for (int k = 0; k < 3; ++k) d(k) = torus_delta(s.frac(i, k), s.frac(j, k));
      double best = std::numeric_limits<double>::infinity();
      for (int a = -1; a <= 1; ++a) {
        for (int b = -1; b <= 1; ++b) {
          for (int c = -1; c <= 1; ++c) {
            if (i == j && a == 0 && b == 0 && c == 0) continue;
            const Eigen::RowVector3d f = d + Eigen::RowVector3d(a, b, c);
            best = std::min(best, (f * m.rows).norm());
          }
        }
      }
      dist[static_cast<std::size_t>(j)] = best;
    }
    const double dmin = *std::min_element(dist.begin(), dist.end());
    for (Eigen::Index j = 0; j < n; ++j) {
      const double dj = dist[static_cast<std::size_t>(j)];
      if (dj <= dmin + kTieTol) {
        bonds[key(s.composition.species[static_cast<std::size_t>(i)],
                  s.composition.species[static_cast<std::size_t>(j)])]
            .push_back(dj);
      }
    }
  }

  std::vector<std::pair<std::pair<int, int>, std::vector<double>>> ordered(bonds.begin(), bonds.end());
  std::sort(ordered.begin(), ordered.end(), [](const auto& x, const auto& y) {
    if (x.first.first != y.first.first) return formula_less(x.first.first, y.first.first);
    return formula_less(x.first.second, y.first.second);
  });

  std::string out;
  for (const auto& [pair, ds] : ordered) {
    const auto [lo, hi] = std::minmax_element(ds.begin(), ds.end());
    const std::string a = fixed2(*lo);
    const std::string b = fixed2(*hi);
    out += ' ';
    out += element(pair.first).symbol;
    out += "–";
    out += element(pair.second).symbol;
    if (a == b) {
      out += " bond lengths are " + a + " Å.";
    } else {
      out += " bond lengths range from " + a + " to " + b + " Å.";
    }
  }
  return out;
}

}  // namespace

CompositionFingerprint composition_fingerprint(const Composition& c) {
  validate(c);
  CompositionFingerprint fp;
  const double n = static_cast<double>(c.size());
  for (const auto& [z, count] : c.counts()) fp.fractions(z - 1) = count / n;
  return fp;
}

double cosine_similarity(const CompositionFingerprint& a, const CompositionFingerprint& b) {
  const double na = a.fractions.norm();
  const double nb = b.fractions.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.fractions.dot(b.fractions) / (na * nb);
}

void SpaceGroupDatabase::add(const Composition& c, const SpaceGroup& sg) {
  entries.push_back({composition_fingerprint(c), sg, reduced_formula(c)});
}

SpaceGroupPrediction predict_space_group(const Composition& c, const SpaceGroupDatabase& db) {
  if (db.empty()) throw EmptyDatabase("space-group database has no entries");
  constexpr double kTie = 1e-12;
  const CompositionFingerprint q = composition_fingerprint(c);
  const SpaceGroupEntry* best = nullptr;
  double best_sim = -1.0;
  for (const auto& e : db.entries) {
    const double sim = cosine_similarity(q, e.fingerprint);
    bool take = false;
    if (best == nullptr || sim > best_sim + kTie) {
      take = true;
    } else if (sim >= best_sim - kTie) {
      take = std::tie(e.space_group.number, e.formula) < std::tie(best->space_group.number, best->formula);
    }
    if (take) {
      best = &e;
      best_sim = sim;
    }
  }
  return {best->space_group, best_sim, best->formula};
}

std::string_view to_string(DescriptorMode mode) {
  return mode == DescriptorMode::Oracle ? "oracle" : "conditional";
}

DescriptorMode parse_descriptor_mode(std::string_view s) {
  if (s == "oracle") return DescriptorMode::Oracle;
  if (s == "conditional" || s == "retrieved") return DescriptorMode::Conditional;
  throw InvalidArgument("unknown descriptor mode '" + std::string(s) + "'");
}

Description describe_composition(const Composition& c, const SpaceGroup& sg) {
  return {header(c, sg), reduced_formula(c), sg, DescriptorMode::Conditional};
}

Description describe_structure(const CrystalStructure& s, const SpaceGroup& sg, DescriptorMode mode) {
  Description d = describe_composition(s.composition, sg);
  if (mode == DescriptorMode::Oracle) {
    d.text += bond_sentences(s);
    d.mode = DescriptorMode::Oracle;
  }
  return d;
}

std::optional<DeclaredFields> parse_declared(std::string_view text) {
  static const std::regex re(R"(^(\S+) crystallizes in the .* The space group number is (\d+)\.)");
  std::match_results<std::string_view::const_iterator> mt;
  if (!std::regex_search(text.begin(), text.end(), mt, re)) return std::nullopt;
  DeclaredFields f;
  f.formula = mt[1].str();
  try {
    f.sg_number = std::stoi(mt[2].str());
  } catch (const std::exception&) {
    return std::nullopt;
  }
  return f;
}

bool validate_description(const Description& d, const Composition& c, const SpaceGroup& sg) {
  const auto declared = parse_declared(d.text);
  if (!declared || declared->sg_number != sg.number) return false;
  try {
    return reduced_formula(parse_formula(declared->formula)) == reduced_formula(c);
  } catch (const Error&) {
    return false;
  }
}

DescriptionOutcome generate_description(const DescriptionGenerator& gen, const Composition& c,
                                        const SpaceGroup& sg) {
  DescriptionOutcome out;
  for (int attempt = 0; attempt < kDescriptionRetries; ++attempt) {
    Description d = gen(attempt);
    if (validate_description(d, c, sg)) {
      out.description = std::move(d);
      return out;
    }
    ++out.rejected;
  }
  out.description = describe_composition(c, sg);
  out.fell_back = true;
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  bool numeric = false;  // current token consists of digits (and at most one '.')
  bool has_dot = false;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
    numeric = false;
    has_dot = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto ch = static_cast<unsigned char>(text[i]);
    if (ch < 0x80 && std::isalnum(ch)) {
      const bool digit = std::isdigit(ch) != 0;
      if (cur.empty()) numeric = digit;
      else if (!digit) numeric = false;
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (ch == '.' && numeric && !has_dot && !cur.empty() && i + 1 < text.size() &&
               std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
      cur.push_back('.');
      has_dot = true;
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

std::uint32_t fnv1a32(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (const char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 16777619u;
  }
  return h;
}

ConditionEmbedding embed_tokens(const std::vector<std::string>& tokens, const Eigen::MatrixXd& table) {
  if (table.rows() == 0) throw ShapeMismatch("token table has no rows");
  const auto n_buckets = static_cast<std::size_t>(table.rows());
  ConditionEmbedding e;
  e.tokens.resize(static_cast<Eigen::Index>(tokens.size()), table.cols());
  e.buckets.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t b = token_bucket(tokens[i], n_buckets);
    e.tokens.row(static_cast<Eigen::Index>(i)) = table.row(static_cast<Eigen::Index>(b));
    e.buckets.push_back(b);
  }
  return e;
}

}  // namespace crysflow
