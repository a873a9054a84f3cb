#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crysflow/sampler.hpp"

namespace crysflow {

// Binary AB compounds used by the synthetic corpora, with a rock-salt cubic
// lattice constant in Angstrom.
struct ToyCompound {
  std::string cation;
  std::string anion;
  double rock_salt_a;
};

const std::vector<ToyCompound>& toy_compounds();

struct ToyCorpusOptions {
  std::size_t n_structures = 200;
  double length_jitter = 0.02;  // relative, uniform, per cell length
  double frac_jitter = 0.01;    // absolute, uniform, per coordinate
  std::uint64_t seed = 0;
  bool primitive = false;       // rock_salt_corpus: 2-atom primitive cells
};

// Rock-salt cells cycling through the compounds (sg 225): conventional 8-atom
// cubic cells, or 2-atom primitive cells (a / sqrt 2, 60 degree angles).
std::vector<LabeledStructure> rock_salt_corpus(const ToyCorpusOptions& opts);

// Alternates 2-atom primitive rock-salt cells (sg 225) and 2-atom CsCl cells
// (sg 221) of the same compounds; the CsCl cell keeps the rock-salt volume per
// formula unit.
std::vector<LabeledStructure> two_prototype_corpus(const ToyCorpusOptions& opts);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle, then the first round(train_fraction * n) go to training.
SplitIndices split_indices(std::size_t n, double train_fraction, std::uint64_t seed);

}  // namespace crysflow
