#include "crysflow/structure.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "crysflow/elements.hpp"
#include "crysflow/errors.hpp"
#include "crysflow/torus.hpp"

namespace crysflow {
namespace {

std::vector<std::pair<int, int>> ordered_counts(const Composition& c) {
  auto counts = c.counts();
  std::vector<std::pair<int, int>> out(counts.begin(), counts.end());
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    const auto& ex = element(x.first);
    const auto& ey = element(y.first);
    if (ex.electronegativity != ey.electronegativity) {
      return ex.electronegativity < ey.electronegativity;
    }
    return ex.symbol < ey.symbol;
  });
  return out;
}

}  // namespace

std::map<int, int> Composition::counts() const {
  std::map<int, int> out;
  for (int z : species) ++out[z];
  return out;
}

void validate(const Composition& c) {
  if (c.empty()) throw InvalidArgument("composition has no atoms");
  for (int z : c.species) {
    if (z < 1 || z > kMaxZ) throw InvalidArgument("atomic number out of range: " + std::to_string(z));
  }
}

Composition parse_formula(std::string_view formula) {
  Composition out;
  std::size_t i = 0;
  auto fail = [&](const std::string& msg) {
    throw InvalidArgument("cannot parse formula '" + std::string(formula) + "': " + msg);
  };
  while (i < formula.size()) {
    const char ch = formula[i];
    if (std::isspace(static_cast<unsigned char>(ch))) {
      ++i;
      continue;
    }
    if (!std::isupper(static_cast<unsigned char>(ch))) fail("expected element symbol");
    std::size_t j = i + 1;
    while (j < formula.size() && std::islower(static_cast<unsigned char>(formula[j]))) ++j;
    auto z = atomic_number(formula.substr(i, j - i));
    if (!z) fail("unknown element '" + std::string(formula.substr(i, j - i)) + "'");
    std::size_t k = j;
    while (k < formula.size() && std::isdigit(static_cast<unsigned char>(formula[k]))) ++k;
    long count = 1;
    if (k > j) {
      if (k - j > 6) fail("count too large");
      count = std::stol(std::string(formula.substr(j, k - j)));
      if (count < 1) fail("zero count");
    }
    out.species.insert(out.species.end(), static_cast<std::size_t>(count), *z);
    i = k;
  }
  if (out.empty()) fail("empty formula");
  return out;
}

std::string reduced_formula(const Composition& c) {
  if (c.empty()) return {};
  auto items = ordered_counts(c);
  int g = 0;
  for (const auto& [z, n] : items) g = std::gcd(g, n);
  std::string out;
  for (const auto& [z, n] : items) {
    out += element(z).symbol;
    if (n / g != 1) out += std::to_string(n / g);
  }
  return out;
}

std::string atom_count_phrase(const Composition& c) {
  std::string out;
  for (const auto& [z, n] : ordered_counts(c)) {
    if (!out.empty()) out += ", ";
    out += std::to_string(n) + " " + std::string(element(z).symbol);
  }
  return out;
}

void validate(const CrystalStructure& s) {
  validate(s.composition);
  if (static_cast<std::size_t>(s.frac.rows()) != s.composition.size()) {
    throw InvalidArgument("fractional coordinate rows do not match atom count");
  }
  if (!s.frac.allFinite()) throw InvalidArgument("non-finite fractional coordinate");
  if (!is_valid(s.lattice)) throw DegenerateCell("invalid lattice parameters");
}

bool is_canonical(const CrystalStructure& s) {
  return (s.frac.array() >= 0.0).all() && (s.frac.array() < 1.0).all();
}

CrystalStructure wrap_structure(CrystalStructure s) {
  s.frac = s.frac.unaryExpr([](double x) { return wrap(x); });
  return s;
}

VolumeDensity volume_and_density(const CrystalStructure& s) {
  const double volume = lattice_to_matrix(s.lattice).det();
  double mass = 0.0;
  for (int z : s.composition.species) mass += element(z).mass;
  return {volume, mass * kAmuPerA3ToGPerCm3 / volume};
}

}  // namespace crysflow
