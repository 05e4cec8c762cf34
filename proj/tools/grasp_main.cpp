#include <iostream>
#include <string>
#include <vector>

#include "grasp/cli.hpp"

int main(int argc, char** argv) {
  grasp::cli::install_signal_handlers();
  std::vector<std::string> args(argv + 1, argv + argc);
  return grasp::cli::main(args, std::cout, std::cerr);
}
