#include <iostream>
#include <string>
#include <vector>

#include "utt/harness.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return utt::run_cli(args, std::cout, std::cerr);
}
