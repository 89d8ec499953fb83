#include <iostream>
#include <string>
#include <vector>

#include "simpeval/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return simpeval::cli::run(args, std::cout, std::cerr);
}
