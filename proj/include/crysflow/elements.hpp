#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>

namespace crysflow {

inline constexpr int kMaxZ = 100;

struct ElementData {
  int z;
  std::string_view symbol;
  double mass;               // standard atomic weight, g/mol
  double electronegativity;  // Pauling; noble gases without a value use 4.5 so they sort last
  double covalent_radius;    // Angstrom
  std::array<int, 3> oxidation_states;
  int n_oxidation_states;    // leading entries of oxidation_states that are used
};

// Throws InvalidArgument for z outside [1, kMaxZ].
const ElementData& element(int z);

std::optional<int> atomic_number(std::string_view symbol);

inline std::span<const int> oxidation_states(const ElementData& e) {
  return {e.oxidation_states.data(), static_cast<std::size_t>(e.n_oxidation_states)};
}

// Converts atomic mass units per cubic Angstrom to g/cm^3.
inline constexpr double kAmuPerA3ToGPerCm3 = 1.66054;

}  // namespace crysflow
