#include "crysflow/elements.hpp"

#include "crysflow/errors.hpp"

#include <string>

namespace crysflow {
namespace {

// Oxidation states are the (up to) three most common ones, most common first.
constexpr std::array<ElementData, kMaxZ> kElements{{
    {1, "H", 1.008, 2.20, 0.31, {1, -1, 0}, 2},
    {2, "He", 4.002602, 4.5, 0.28, {0, 0, 0}, 1},
    {3, "Li", 6.94, 0.98, 1.28, {1, 0, 0}, 1},
    {4, "Be", 9.0121831, 1.57, 0.96, {2, 0, 0}, 1},
    {5, "B", 10.81, 2.04, 0.84, {3, 0, 0}, 1},
    {6, "C", 12.011, 2.55, 0.76, {4, -4, 0}, 2},
    {7, "N", 14.007, 3.04, 0.71, {-3, 3, 5}, 3},
    {8, "O", 15.999, 3.44, 0.66, {-2, 0, 0}, 1},
    {9, "F", 18.998403163, 3.98, 0.57, {-1, 0, 0}, 1},
    {10, "Ne", 20.1797, 4.5, 0.58, {0, 0, 0}, 1},
    {11, "Na", 22.98976928, 0.93, 1.66, {1, 0, 0}, 1},
    {12, "Mg", 24.305, 1.31, 1.41, {2, 0, 0}, 1},
    {13, "Al", 26.9815385, 1.61, 1.21, {3, 0, 0}, 1},
    {14, "Si", 28.085, 1.90, 1.11, {4, -4, 0}, 2},
    {15, "P", 30.973761998, 2.19, 1.07, {5, 3, -3}, 3},
    {16, "S", 32.06, 2.58, 1.05, {-2, 6, 4}, 3},
    {17, "Cl", 35.45, 3.16, 1.02, {-1, 5, 7}, 3},
    {18, "Ar", 39.948, 4.5, 1.06, {0, 0, 0}, 1},
    {19, "K", 39.0983, 0.82, 2.03, {1, 0, 0}, 1},
    {20, "Ca", 40.078, 1.00, 1.76, {2, 0, 0}, 1},
    {21, "Sc", 44.955908, 1.36, 1.70, {3, 0, 0}, 1},
    {22, "Ti", 47.867, 1.54, 1.60, {4, 3, 2}, 3},
    {23, "V", 50.9415, 1.63, 1.53, {5, 4, 3}, 3},
    {24, "Cr", 51.9961, 1.66, 1.39, {3, 6, 2}, 3},
    {25, "Mn", 54.938044, 1.55, 1.39, {2, 4, 3}, 3},
    {26, "Fe", 55.845, 1.83, 1.32, {3, 2, 0}, 2},
    {27, "Co", 58.933194, 1.88, 1.26, {2, 3, 0}, 2},
    {28, "Ni", 58.6934, 1.91, 1.24, {2, 3, 0}, 2},
    {29, "Cu", 63.546, 1.90, 1.32, {2, 1, 0}, 2},
    {30, "Zn", 65.38, 1.65, 1.22, {2, 0, 0}, 1},
    {31, "Ga", 69.723, 1.81, 1.22, {3, 1, 2}, 3},
    {32, "Ge", 72.630, 2.01, 1.20, {4, 2, -4}, 3},
    {33, "As", 74.921595, 2.18, 1.19, {-3, 3, 5}, 3},
    {34, "Se", 78.971, 2.55, 1.20, {-2, 4, 6}, 3},
    {35, "Br", 79.904, 2.96, 1.20, {-1, 1, 5}, 3},
    {36, "Kr", 83.798, 3.00, 1.16, {0, 0, 0}, 1},
    {37, "Rb", 85.4678, 0.82, 2.20, {1, 0, 0}, 1},
    {38, "Sr", 87.62, 0.95, 1.95, {2, 0, 0}, 1},
    {39, "Y", 88.90584, 1.22, 1.90, {3, 0, 0}, 1},
    {40, "Zr", 91.224, 1.33, 1.75, {4, 0, 0}, 1},
    {41, "Nb", 92.90637, 1.60, 1.64, {5, 3, 0}, 2},
    {42, "Mo", 95.95, 2.16, 1.54, {6, 4, 0}, 2},
    {43, "Tc", 98.0, 1.90, 1.47, {7, 4, 0}, 2},
    {44, "Ru", 101.07, 2.20, 1.46, {3, 4, 0}, 2},
    {45, "Rh", 102.90550, 2.28, 1.42, {3, 0, 0}, 1},
    {46, "Pd", 106.42, 2.20, 1.39, {2, 4, 0}, 2},
    {47, "Ag", 107.8682, 1.93, 1.45, {1, 0, 0}, 1},
    {48, "Cd", 112.414, 1.69, 1.44, {2, 0, 0}, 1},
    {49, "In", 114.818, 1.78, 1.42, {3, 0, 0}, 1},
    {50, "Sn", 118.710, 1.96, 1.39, {4, 2, -4}, 3},
    {51, "Sb", 121.760, 2.05, 1.39, {3, 5, -3}, 3},
    {52, "Te", 127.60, 2.10, 1.38, {-2, 4, 6}, 3},
    {53, "I", 126.90447, 2.66, 1.39, {-1, 5, 7}, 3},
    {54, "Xe", 131.293, 2.60, 1.40, {0, 0, 0}, 1},
    {55, "Cs", 132.90545196, 0.79, 2.44, {1, 0, 0}, 1},
    {56, "Ba", 137.327, 0.89, 2.15, {2, 0, 0}, 1},
    {57, "La", 138.90547, 1.10, 2.07, {3, 0, 0}, 1},
    {58, "Ce", 140.116, 1.12, 2.04, {3, 4, 0}, 2},
    {59, "Pr", 140.90766, 1.13, 2.03, {3, 0, 0}, 1},
    {60, "Nd", 144.242, 1.14, 2.01, {3, 0, 0}, 1},
    {61, "Pm", 145.0, 1.13, 1.99, {3, 0, 0}, 1},
    {62, "Sm", 150.36, 1.17, 1.98, {3, 2, 0}, 2},
    {63, "Eu", 151.964, 1.20, 1.98, {3, 2, 0}, 2},
    {64, "Gd", 157.25, 1.20, 1.96, {3, 0, 0}, 1},
    {65, "Tb", 158.92535, 1.10, 1.94, {3, 4, 0}, 2},
    {66, "Dy", 162.500, 1.22, 1.92, {3, 0, 0}, 1},
    {67, "Ho", 164.93033, 1.23, 1.92, {3, 0, 0}, 1},
    {68, "Er", 167.259, 1.24, 1.89, {3, 0, 0}, 1},
    {69, "Tm", 168.93422, 1.25, 1.90, {3, 2, 0}, 2},
    {70, "Yb", 173.045, 1.10, 1.87, {3, 2, 0}, 2},
    {71, "Lu", 174.9668, 1.27, 1.87, {3, 0, 0}, 1},
    {72, "Hf", 178.49, 1.30, 1.75, {4, 0, 0}, 1},
    {73, "Ta", 180.94788, 1.50, 1.70, {5, 0, 0}, 1},
    {74, "W", 183.84, 2.36, 1.62, {6, 4, 0}, 2},
    {75, "Re", 186.207, 1.90, 1.51, {4, 7, 0}, 2},
    {76, "Os", 190.23, 2.20, 1.44, {4, 0, 0}, 1},
    {77, "Ir", 192.217, 2.20, 1.41, {3, 4, 0}, 2},
    {78, "Pt", 195.084, 2.28, 1.36, {2, 4, 0}, 2},
    {79, "Au", 196.966569, 2.54, 1.36, {3, 1, 0}, 2},
    {80, "Hg", 200.592, 2.00, 1.32, {2, 1, 0}, 2},
    {81, "Tl", 204.38, 1.62, 1.45, {1, 3, 0}, 2},
    {82, "Pb", 207.2, 2.33, 1.46, {2, 4, 0}, 2},
    {83, "Bi", 208.98040, 2.02, 1.48, {3, 5, 0}, 2},
    {84, "Po", 209.0, 2.00, 1.40, {-2, 2, 4}, 3},
    {85, "At", 210.0, 2.20, 1.50, {-1, 1, 0}, 2},
    {86, "Rn", 222.0, 2.20, 1.50, {0, 0, 0}, 1},
    {87, "Fr", 223.0, 0.70, 2.60, {1, 0, 0}, 1},
    {88, "Ra", 226.0, 0.90, 2.21, {2, 0, 0}, 1},
    {89, "Ac", 227.0, 1.10, 2.15, {3, 0, 0}, 1},
    {90, "Th", 232.0377, 1.30, 2.06, {4, 0, 0}, 1},
    {91, "Pa", 231.03588, 1.50, 2.00, {5, 0, 0}, 1},
    {92, "U", 238.02891, 1.38, 1.96, {6, 4, 0}, 2},
    {93, "Np", 237.0, 1.36, 1.90, {5, 0, 0}, 1},
    {94, "Pu", 244.0, 1.28, 1.87, {4, 3, 0}, 2},
    {95, "Am", 243.0, 1.13, 1.80, {3, 0, 0}, 1},
    {96, "Cm", 247.0, 1.28, 1.69, {3, 0, 0}, 1},
    {97, "Bk", 247.0, 1.30, 1.68, {3, 0, 0}, 1},
    {98, "Cf", 251.0, 1.30, 1.68, {3, 0, 0}, 1},
    {99, "Es", 252.0, 1.30, 1.68, {3, 0, 0}, 1},
    {100, "Fm", 257.0, 1.30, 1.68, {3, 0, 0}, 1},
}};

}  // namespace

const ElementData& element(int z) {
  if (z < 1 || z > kMaxZ) {
    throw InvalidArgument("atomic number out of range: " + std::to_string(z));
  }
  return kElements[static_cast<std::size_t>(z - 1)];
}

std::optional<int> atomic_number(std::string_view symbol) {
  for (const auto& e : kElements) {
    if (e.symbol == symbol) return e.z;
  }
  return std::nullopt;
}

}  // namespace crysflow
