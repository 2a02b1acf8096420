#include <iostream>

#include "dehaze/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dehaze::cli::run_command(args, std::cout, std::cerr);
}
