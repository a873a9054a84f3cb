#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "crysflow/field_net.hpp"
#include "crysflow/space_group.hpp"
#include "crysflow/structure.hpp"

namespace crysflow {

// Element fractions indexed by Z - 1; sums to 1.
struct CompositionFingerprint {
  Eigen::VectorXd fractions = Eigen::VectorXd::Zero(100);
};

CompositionFingerprint composition_fingerprint(const Composition& c);

double cosine_similarity(const CompositionFingerprint& a, const CompositionFingerprint& b);

struct SpaceGroupEntry {
  CompositionFingerprint fingerprint;
  SpaceGroup space_group;
  std::string formula;
};

// Retrieval database standing in for a learned composition-to-space-group model.
struct SpaceGroupDatabase {
  std::vector<SpaceGroupEntry> entries;

  void add(const Composition& c, const SpaceGroup& sg);
  bool empty() const { return entries.empty(); }
};

struct SpaceGroupPrediction {
  SpaceGroup space_group;
  double similarity = 0.0;
  std::string source_formula;
};

// Entry with the highest cosine similarity; ties (within 1e-12) go to the lowest
// space-group number, then the lexicographically smallest formula.
// Throws EmptyDatabase.
SpaceGroupPrediction predict_space_group(const Composition& c, const SpaceGroupDatabase& db);

enum class DescriptorMode { Oracle, Conditional };

std::string_view to_string(DescriptorMode mode);
// Accepts "oracle", "conditional" and "retrieved" (an alias for conditional).
DescriptorMode parse_descriptor_mode(std::string_view s);

struct Description {
  std::string text;
  std::string declared_formula;
  SpaceGroup declared_sg;
  DescriptorMode mode = DescriptorMode::Conditional;
};

// Conditional template: formula, crystal system, symbol, number and atom counts.
Description describe_composition(const Composition& c, const SpaceGroup& sg);

// Oracle mode adds nearest-neighbour bond lengths (minimum image, rounded to 0.01 A).
// Conditional mode ignores the geometry.
Description describe_structure(const CrystalStructure& s, const SpaceGroup& sg, DescriptorMode mode);

struct DeclaredFields {
  std::string formula;
  int sg_number = 0;
};

// Recovers the declared formula and space-group number from a description text.
std::optional<DeclaredFields> parse_declared(std::string_view text);

// True iff the text declares the reduced formula of c and the number of sg.
bool validate_description(const Description& d, const Composition& c, const SpaceGroup& sg);

// Produces a candidate description for the given attempt (0-based).
using DescriptionGenerator = std::function<Description(int attempt)>;

inline constexpr int kDescriptionRetries = 5;

struct DescriptionOutcome {
  Description description;
  int rejected = 0;       // candidates that failed validation
  bool fell_back = false; // the conditional template was used after exhausting retries
};

// Draws up to kDescriptionRetries candidates and returns the first valid one;
// otherwise falls back to describe_composition(c, sg).
DescriptionOutcome generate_description(const DescriptionGenerator& gen, const Composition& c,
                                        const SpaceGroup& sg);

// Lowercased runs of ASCII letters and digits. A '.' between digits stays
// inside a numeral ("2.82"); everything else separates tokens.
std::vector<std::string> tokenize(std::string_view text);

std::uint32_t fnv1a32(std::string_view s);

inline std::size_t token_bucket(std::string_view token, std::size_t n_buckets) {
  return static_cast<std::size_t>(fnv1a32(token)) % n_buckets;
}

// Looks each token up in `table` (one row per bucket).
ConditionEmbedding embed_tokens(const std::vector<std::string>& tokens, const Eigen::MatrixXd& table);

inline ConditionEmbedding embed_text(std::string_view text, const Eigen::MatrixXd& table) {
  return embed_tokens(tokenize(text), table);
}

}  // namespace crysflow
