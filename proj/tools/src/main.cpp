#include <iostream>

#include "mie_lab/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mie::lab::run_cli(args, std::cout, std::cerr);
}
