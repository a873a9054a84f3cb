#pragma once

#include <string>
#include <string_view>

namespace crysflow {

enum class CrystalSystem { Triclinic, Monoclinic, Orthorhombic, Tetragonal, Trigonal, Hexagonal, Cubic };

struct SpaceGroup {
  int number = 1;
  std::string symbol = "P1";  // short Hermann-Mauguin symbol, '_' marks screw axes ("P6_3/mmc")

  // Throws InvalidArgument for numbers outside [1, 230].
  static SpaceGroup from_number(int number);

  CrystalSystem crystal_system() const;

  bool operator==(const SpaceGroup&) const = default;
};

CrystalSystem crystal_system(int sg_number);
std::string_view crystal_system_name(CrystalSystem cs);
std::string_view hermann_mauguin_symbol(int sg_number);

}  // namespace crysflow
