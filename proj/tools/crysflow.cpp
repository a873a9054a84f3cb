#include <iostream>

#include "crysflow/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return crysflow::cli::run(args, std::cout, std::cerr);
}
