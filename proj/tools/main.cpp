#include <iostream>

#include "revkit/cli.hpp"

int main(int argc, char** argv) {
  return revkit::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
