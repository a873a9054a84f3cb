#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crysflow/conditioning.hpp"
#include "crysflow/field_net.hpp"
#include "crysflow/flow.hpp"

namespace crysflow {

struct SamplerConfig {
  int n_steps = 100;
  double step_size = 0.01;
  double anneal_gamma = 5.0;  // multiplies the coordinate velocity only
  std::uint64_t seed = 0;
  bool allow_partial = false; // permit n_steps * step_size != 1
};

// Throws InvalidArgument.
void validate(const SamplerConfig& cfg);

// Velocity at (F, L, t).
using VelocityField = std::function<VelocityTarget(const Eigen::MatrixX3d& F, const Row6& L, double t)>;

// Trained network plus the prior it was trained against.
struct FlowModel {
  ModelParams params;
  PathConfig path;
};

// Binds composition and condition; both must outlive the returned field.
VelocityField network_field(const ModelParams& params, const Composition& composition,
                            const ConditionEmbedding& cond);

// Euler steps at t = k h: L += h uL, F = wrap(F + h gamma uF).
// Throws NonFiniteState on non-finite state and DegenerateCell if the final
// lattice is not a valid cell.
CrystalStructure euler_integrate(const VelocityField& field, const PathState& init, const Composition& composition,
                                 const SamplerConfig& cfg);

struct LabeledStructure {
  CrystalStructure structure;
  SpaceGroup space_group;
};

struct GenerationRecord {
  CrystalStructure structure;
  std::string condition_text;
  SpaceGroup space_group;
  DescriptorMode mode = DescriptorMode::Conditional;
  std::uint64_t seed = 0;
  double retrieval_similarity = 0.0;  // NaN in oracle mode
  int rejected_descriptions = 0;
  bool description_fallback = false;
};

struct CspOptions {
  DescriptorMode mode = DescriptorMode::Conditional;
  // Required in oracle mode: the description and space group come from it.
  const LabeledStructure* reference = nullptr;
  // Replaces the deterministic template as the description source.
  const DescriptionGenerator* generator = nullptr;
};

// Space group (retrieved, or the reference's in oracle mode) -> description ->
// validation with retries -> token embedding -> prior draw from cfg.seed -> Euler.
GenerationRecord sample_csp(const Composition& composition, const SpaceGroupDatabase& db, const FlowModel& model,
                            const SamplerConfig& cfg, const CspOptions& opts = {});

struct CspJob {
  Composition composition;
  std::uint64_t seed = 0;
  std::optional<LabeledStructure> reference;
};

struct SampleOutcome {
  std::optional<GenerationRecord> record;
  std::string error;  // set when record is empty
};

// Runs jobs on up to `threads` workers; outcomes are in job order and each job
// uses only its own seed, so results do not depend on the thread count.
std::vector<SampleOutcome> sample_jobs(const std::vector<CspJob>& jobs, const SpaceGroupDatabase& db,
                                       const FlowModel& model, const SamplerConfig& cfg, DescriptorMode mode,
                                       int threads = 1);

inline std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t index) { return seed ^ index; }

// Either an explicit list (used in order, cycling) or an empirical pool drawn
// uniformly with an RNG seeded from the sampler seed.
struct CompositionSource {
  std::vector<Composition> explicit_list;
  std::vector<Composition> empirical_pool;
};

std::vector<Composition> draw_compositions(const CompositionSource& src, std::size_t n, std::uint64_t seed);

std::vector<SampleOutcome> sample_ab_initio(const CompositionSource& src, const SpaceGroupDatabase& db,
                                            const FlowModel& model, std::size_t n, const SamplerConfig& cfg,
                                            int threads = 1);

struct FilterResult {
  std::vector<GenerationRecord> kept;
  std::size_t rejected = 0;
};

// Drops records whose reduced formula is in `known`; order preserved.
FilterResult rejection_filter(std::vector<GenerationRecord> records, const std::set<std::string>& known);

struct NovelSampleResult {
  std::vector<GenerationRecord> kept;
  std::size_t rejected = 0;   // draws whose formula was already known
  std::size_t failed = 0;     // integrations that raised
  std::size_t draws = 0;
  bool exhausted = false;     // fewer than n kept within max_draws
};

// Draws compositions until n novel records are kept or max_draws is reached.
// Known formulas are rejected before integration.
NovelSampleResult sample_novel(const CompositionSource& src, const SpaceGroupDatabase& db, const FlowModel& model,
                               std::size_t n, const std::set<std::string>& known, std::size_t max_draws,
                               const SamplerConfig& cfg, int threads = 1);

}  // namespace crysflow
