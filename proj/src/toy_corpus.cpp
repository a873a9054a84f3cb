#include "crysflow/toy_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crysflow/elements.hpp"
#include "crysflow/errors.hpp"

namespace crysflow {
namespace {

int z_of(const std::string& symbol) {
  const auto z = atomic_number(symbol);
  if (!z) throw InvalidArgument("unknown element " + symbol);
  return *z;
}

Eigen::RowVector3d jittered(double x, double y, double z, double amp, Rng& rng) {
  std::uniform_real_distribution<double> u(-amp, amp);
  const double dx = u(rng), dy = u(rng), dz = u(rng);
  return {wrap(x + dx), wrap(y + dy), wrap(z + dz)};
}

Lattice6 jittered_cell(double a, double alpha, double amp, Rng& rng) {
  std::uniform_real_distribution<double> u(-amp, amp);
  const double ja = u(rng), jb = u(rng), jc = u(rng);
  return {a * (1.0 + ja), a * (1.0 + jb), a * (1.0 + jc), alpha, alpha, alpha};
}

}  // namespace

const std::vector<ToyCompound>& toy_compounds() {
  static const std::vector<ToyCompound> compounds{
      {"Li", "F", 4.03}, {"Mg", "O", 4.21}, {"Na", "F", 4.63}, {"Ca", "O", 4.81},
      {"Li", "Cl", 5.13}, {"K", "F", 5.35}, {"Na", "Cl", 5.64}, {"Na", "Br", 5.97},
  };
  return compounds;
}

std::vector<LabeledStructure> rock_salt_corpus(const ToyCorpusOptions& opts) {
  static const double cation_sites[4][3] = {{0, 0, 0}, {0, 0.5, 0.5}, {0.5, 0, 0.5}, {0.5, 0.5, 0}};
  Rng rng(opts.seed);
  const auto& cmp = toy_compounds();
  std::vector<LabeledStructure> out;
  out.reserve(opts.n_structures);
  for (std::size_t n = 0; n < opts.n_structures; ++n) {
    const ToyCompound& c = cmp[n % cmp.size()];
    LabeledStructure ls;
    ls.space_group = SpaceGroup::from_number(225);
    CrystalStructure& s = ls.structure;
    if (opts.primitive) {
      s.composition.species = {z_of(c.cation), z_of(c.anion)};
      s.lattice = jittered_cell(c.rock_salt_a / std::sqrt(2.0), 60.0, opts.length_jitter, rng);
      s.frac.resize(2, 3);
      s.frac.row(0) = jittered(0, 0, 0, opts.frac_jitter, rng);
      s.frac.row(1) = jittered(0.5, 0.5, 0.5, opts.frac_jitter, rng);
      out.push_back(std::move(ls));
      continue;
    }
    s.lattice = jittered_cell(c.rock_salt_a, 90.0, opts.length_jitter, rng);
    s.frac.resize(8, 3);
    for (int i = 0; i < 4; ++i) {
      s.composition.species.push_back(z_of(c.cation));
      s.frac.row(i) = jittered(cation_sites[i][0], cation_sites[i][1], cation_sites[i][2], opts.frac_jitter, rng);
    }
    for (int i = 0; i < 4; ++i) {
      s.composition.species.push_back(z_of(c.anion));
      s.frac.row(4 + i) =
          jittered(cation_sites[i][0] + 0.5, cation_sites[i][1], cation_sites[i][2], opts.frac_jitter, rng);
    }
    out.push_back(std::move(ls));
  }
  return out;
}

std::vector<LabeledStructure> two_prototype_corpus(const ToyCorpusOptions& opts) {
  Rng rng(opts.seed);
  const auto& cmp = toy_compounds();
  std::vector<LabeledStructure> out;
  out.reserve(opts.n_structures);
  for (std::size_t n = 0; n < opts.n_structures; ++n) {
    const ToyCompound& c = cmp[(n / 2) % cmp.size()];
    const bool rock_salt = n % 2 == 0;
    LabeledStructure ls;
    CrystalStructure& s = ls.structure;
    s.composition.species = {z_of(c.cation), z_of(c.anion)};
    s.frac.resize(2, 3);
    s.frac.row(0) = jittered(0, 0, 0, opts.frac_jitter, rng);
    s.frac.row(1) = jittered(0.5, 0.5, 0.5, opts.frac_jitter, rng);
    if (rock_salt) {
      ls.space_group = SpaceGroup::from_number(225);
      s.lattice = jittered_cell(c.rock_salt_a / std::sqrt(2.0), 60.0, opts.length_jitter, rng);
    } else {
      ls.space_group = SpaceGroup::from_number(221);
      s.lattice = jittered_cell(c.rock_salt_a / std::cbrt(4.0), 90.0, opts.length_jitter, rng);
    }
    out.push_back(std::move(ls));
  }
  return out;
}

SplitIndices split_indices(std::size_t n, double train_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(n)));
  SplitIndices s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return s;
}

}  // namespace crysflow
