#include <iostream>
#include <string>
#include <vector>

#include "rxsim/cli.hpp"

int main(int argc, char** argv) {
  return rxsim::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
