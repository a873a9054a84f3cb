#include "crysflow/space_group.hpp"

#include <array>

#include "crysflow/errors.hpp"

namespace crysflow {
namespace {

constexpr std::array<std::string_view, 230> kSymbols{
    /*   1 */ "P1", "P-1", "P2", "P2_1", "C2", "Pm", "Pc", "Cm",
    /*   9 */ "Cc", "P2/m", "P2_1/m", "C2/m", "P2/c", "P2_1/c", "C2/c", "P222",
    /*  17 */ "P222_1", "P2_12_12", "P2_12_12_1", "C222_1", "C222", "F222", "I222", "I2_12_12_1",
    /*  25 */ "Pmm2", "Pmc2_1", "Pcc2", "Pma2", "Pca2_1", "Pnc2", "Pmn2_1", "Pba2",
    /*  33 */ "Pna2_1", "Pnn2", "Cmm2", "Cmc2_1", "Ccc2", "Amm2", "Abm2", "Ama2",
    /*  41 */ "Aba2", "Fmm2", "Fdd2", "Imm2", "Iba2", "Ima2", "Pmmm", "Pnnn",
    /*  49 */ "Pccm", "Pban", "Pmma", "Pnna", "Pmna", "Pcca", "Pbam", "Pccn",
    /*  57 */ "Pbcm", "Pnnm", "Pmmn", "Pbcn", "Pbca", "Pnma", "Cmcm", "Cmca",
    /*  65 */ "Cmmm", "Cccm", "Cmma", "Ccca", "Fmmm", "Fddd", "Immm", "Ibam",
    /*  73 */ "Ibca", "Imma", "P4", "P4_1", "P4_2", "P4_3", "I4", "I4_1",
    /*  81 */ "P-4", "I-4", "P4/m", "P4_2/m", "P4/n", "P4_2/n", "I4/m", "I4_1/a",
    /*  89 */ "P422", "P42_12", "P4_122", "P4_12_12", "P4_222", "P4_22_12", "P4_322", "P4_32_12",
    /*  97 */ "I422", "I4_122", "P4mm", "P4bm", "P4_2cm", "P4_2nm", "P4cc", "P4nc",
    /* 105 */ "P4_2mc", "P4_2bc", "I4mm", "I4cm", "I4_1md", "I4_1cd", "P-42m", "P-42c",
    /* 113 */ "P-42_1m", "P-42_1c", "P-4m2", "P-4c2", "P-4b2", "P-4n2", "I-4m2", "I-4c2",
    /* 121 */ "I-42m", "I-42d", "P4/mmm", "P4/mcc", "P4/nbm", "P4/nnc", "P4/mbm", "P4/mnc",
    /* 129 */ "P4/nmm", "P4/ncc", "P4_2/mmc", "P4_2/mcm", "P4_2/nbc", "P4_2/nnm", "P4_2/mbc", "P4_2/mnm",
    /* 137 */ "P4_2/nmc", "P4_2/ncm", "I4/mmm", "I4/mcm", "I4_1/amd", "I4_1/acd", "P3", "P3_1",
    /* 145 */ "P3_2", "R3", "P-3", "R-3", "P312", "P321", "P3_112", "P3_121",
    /* 153 */ "P3_212", "P3_221", "R32", "P3m1", "P31m", "P3c1", "P31c", "R3m",
    /* 161 */ "R3c", "P-31m", "P-31c", "P-3m1", "P-3c1", "R-3m", "R-3c", "P6",
    /* 169 */ "P6_1", "P6_5", "P6_2", "P6_4", "P6_3", "P-6", "P6/m", "P6_3/m",
    /* 177 */ "P622", "P6_122", "P6_522", "P6_222", "P6_422", "P6_322", "P6mm", "P6cc",
    /* 185 */ "P6_3cm", "P6_3mc", "P-6m2", "P-6c2", "P-62m", "P-62c", "P6/mmm", "P6/mcc",
    /* 193 */ "P6_3/mcm", "P6_3/mmc", "P23", "F23", "I23", "P2_13", "I2_13", "Pm-3",
    /* 201 */ "Pn-3", "Fm-3", "Fd-3", "Im-3", "Pa-3", "Ia-3", "P432", "P4_232",
    /* 209 */ "F432", "F4_132", "I432", "P4_332", "P4_132", "I4_132", "P-43m", "F-43m",
    /* 217 */ "I-43m", "P-43n", "F-43c", "I-43d", "Pm-3m", "Pn-3n", "Pm-3n", "Pn-3m",
    /* 225 */ "Fm-3m", "Fm-3c", "Fd-3m", "Fd-3c", "Im-3m", "Ia-3d",
};

void check_number(int n) {
  if (n < 1 || n > 230) throw InvalidArgument("space group number out of range: " + std::to_string(n));
}

}  // namespace

SpaceGroup SpaceGroup::from_number(int number) {
  return {number, std::string(hermann_mauguin_symbol(number))};
}

CrystalSystem SpaceGroup::crystal_system() const { return crysflow::crystal_system(number); }

CrystalSystem crystal_system(int n) {
  check_number(n);
  if (n <= 2) return CrystalSystem::Triclinic;
  if (n <= 15) return CrystalSystem::Monoclinic;
  if (n <= 74) return CrystalSystem::Orthorhombic;
  if (n <= 142) return CrystalSystem::Tetragonal;
  if (n <= 167) return CrystalSystem::Trigonal;
  if (n <= 194) return CrystalSystem::Hexagonal;
  return CrystalSystem::Cubic;
}

std::string_view crystal_system_name(CrystalSystem cs) {
  switch (cs) {
    case CrystalSystem::Triclinic: return "triclinic";
    case CrystalSystem::Monoclinic: return "monoclinic";
    case CrystalSystem::Orthorhombic: return "orthorhombic";
    case CrystalSystem::Tetragonal: return "tetragonal";
    case CrystalSystem::Trigonal: return "trigonal";
    case CrystalSystem::Hexagonal: return "hexagonal";
    case CrystalSystem::Cubic: return "cubic";
  }
  return "unknown";
}

std::string_view hermann_mauguin_symbol(int n) {
  check_number(n);
  return kSymbols[static_cast<std::size_t>(n - 1)];
}

}  // namespace crysflow
