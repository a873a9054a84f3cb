#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

#include "crysflow/lattice.hpp"
#include "crysflow/structure.hpp"

namespace crysflow {

// ---- cell reduction ----

struct ReducedCell {
  CrystalStructure structure;     // same crystal expressed in the reduced cell
  Eigen::Matrix3i transform;      // new rows = transform * old rows
};

// Krivy-Gruber reduction with tolerance eps * V^(1/3). Throws DegenerateCell.
LatticeMatrix niggli_reduce(const LatticeMatrix& m, Eigen::Matrix3i* transform = nullptr, double eps = 1e-5);
ReducedCell niggli_reduce(const CrystalStructure& s, double eps = 1e-5);

// The 24 proper signed axis permutations; the identity comes first.
const std::array<Eigen::Matrix3i, 24>& axis_rotations();

// Applies an integer unimodular change of basis to lattice and coordinates.
CrystalStructure change_basis(const CrystalStructure& s, const Eigen::Matrix3i& transform);

// ---- validity ----

// Minimum distance between any two sites (including an atom and its own
// images) over the 27 neighbouring cells. Throws DegenerateCell.
double min_interatomic_distance(const CrystalStructure& s);

inline constexpr double kMinBondLength = 0.5;  // Angstrom

bool structural_validity(const CrystalStructure& s);

struct ChargeBalance {
  bool valid = false;
  bool budget_exceeded = false;
  std::size_t assignments_tried = 0;
};

inline constexpr std::size_t kChargeSearchBudget = 1'000'000;

ChargeBalance charge_balance(const Composition& c, std::size_t budget = kChargeSearchBudget);
inline bool compositional_validity(const Composition& c) { return charge_balance(c).valid; }

// ---- matching ----

struct MatchConfig {
  double ltol = 0.3;
  double stol = 0.5;
  double angle_tol = 10.0;  // degrees
};

void validate(const MatchConfig& cfg);

// Squared minimum-image distance between fractional points under the metric `gram`.
double min_image_sq(const Eigen::RowVector3d& df, const Eigen::Matrix3d& gram);

// Optimal assignment for a square cost matrix; returns col index per row.
std::vector<int> hungarian(const Eigen::MatrixXd& cost);

// Lattice gate on two reduced cells: symmetric length ratios within ltol and
// angles within angle_tol.
bool lattices_compatible(const Lattice6& a, const Lattice6& b, const MatchConfig& cfg);

// RMSD of two structures sharing atom order by species, evaluated in the
// lattice averaged from both, minimized over anchor translations and species-
// respecting assignments. Normalized by (V/N)^(1/3). No gates applied.
double anchored_rmsd(const CrystalStructure& a, const CrystalStructure& b);

// Niggli-reduces both, tries every proper axis permutation of the second cell
// that passes the lattice gate and returns the smallest normalized RMSD if it
// is <= stol. Formulas must reduce equal and atom counts must agree.
std::optional<double> match_structures(const CrystalStructure& a, const CrystalStructure& b,
                                       const MatchConfig& cfg = {});

struct MatchSummary {
  double match_rate = 0.0;  // percent
  double mean_rmsd = 0.0;   // NaN when nothing matched
  bool rmsd_defined = false;
  std::size_t n_matched = 0;
  std::vector<std::optional<double>> per_pair;
};

// Throws LengthMismatch.
MatchSummary match_rate_and_rmsd(std::span<const CrystalStructure> gen, std::span<const CrystalStructure> ref,
                                 const MatchConfig& cfg = {});

// ---- coverage and distributions ----

struct CoverageConfig {
  double struct_threshold = 0.4;
  double comp_threshold = 10.0;
};

inline constexpr double kRdfCutoff = 8.0;  // Angstrom
inline constexpr double kRdfBin = 0.1;

// Species-blind pair-distance histogram up to the cutoff, L2-normalized.
Eigen::VectorXd structure_fingerprint(const CrystalStructure& s);

// Mean, std, min, max of atomic number, electronegativity and covalent radius.
Eigen::VectorXd composition_features(const Composition& c);

struct CoverageResult {
  double recall = 0.0;     // percent of test items covered by some generated item
  double precision = 0.0;  // percent of generated items close to some test item
};

// Throws EmptyInput.
CoverageResult coverage(std::span<const CrystalStructure> gen, std::span<const CrystalStructure> test,
                        const CoverageConfig& cfg = {});

// Same, from precomputed fingerprints (rows are items).
CoverageResult coverage_from_fingerprints(const Eigen::MatrixXd& gen_struct, const Eigen::MatrixXd& gen_comp,
                                          const Eigen::MatrixXd& test_struct, const Eigen::MatrixXd& test_comp,
                                          const CoverageConfig& cfg);

// Earth mover's distance between two 1-D empirical distributions. Throws EmptyInput.
double wasserstein1(std::span<const double> xs, std::span<const double> ys);

struct PropertyStats {
  double wdist_density = 0.0;
  double wdist_nel = 0.0;
};

PropertyStats property_stats(std::span<const CrystalStructure> gen, std::span<const CrystalStructure> test);

struct MetricsReport {
  std::optional<double> struct_validity;
  std::optional<double> comp_validity;
  std::optional<double> cov_recall;
  std::optional<double> cov_precision;
  std::optional<double> wdist_density;
  std::optional<double> wdist_nel;
  std::optional<double> match_rate;
  std::optional<double> mean_rmsd;  // stays empty when no pair matched
  std::size_t n_generated = 0;
  std::size_t n_reference = 0;
};

// Flat object; absent metrics are omitted, an undefined mean RMSD is null
// with "rmsd_defined": false.
nlohmann::json to_json(const MetricsReport& r);

}  // namespace crysflow
