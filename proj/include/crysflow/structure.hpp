#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "crysflow/lattice.hpp"

namespace crysflow {

// Atomic numbers, one entry per atom; counts are implicit by repetition.
struct Composition {
  std::vector<int> species;

  std::size_t size() const { return species.size(); }
  bool empty() const { return species.empty(); }
  // Atom count per element, keyed by atomic number.
  std::map<int, int> counts() const;

  bool operator==(const Composition&) const = default;
};

// Throws InvalidArgument if empty or any Z is outside [1, 100].
void validate(const Composition& c);

// Parses "Na4Cl4", "TiO2", "NaCl". Counts are kept as written (not reduced);
// atoms are listed element by element in order of appearance.
Composition parse_formula(std::string_view formula);

// Counts divided by their GCD; elements ordered by increasing electronegativity,
// ties broken alphabetically by symbol. Unit counts are omitted ("TiO2").
std::string reduced_formula(const Composition& c);

// "4 Ga, 4 Te" in the same element order as reduced_formula.
std::string atom_count_phrase(const Composition& c);

struct CrystalStructure {
  Composition composition;
  Lattice6 lattice;
  Eigen::MatrixX3d frac;  // one row per atom, canonical entries in [0, 1)

  std::size_t natoms() const { return composition.size(); }
};

// Throws InvalidArgument / DegenerateCell when row counts disagree, the
// composition is invalid, entries are non-finite or the cell is degenerate.
void validate(const CrystalStructure& s);

bool is_canonical(const CrystalStructure& s);

CrystalStructure wrap_structure(CrystalStructure s);

struct VolumeDensity {
  double volume;   // Angstrom^3
  double density;  // g/cm^3
};

VolumeDensity volume_and_density(const CrystalStructure& s);

}  // namespace crysflow
