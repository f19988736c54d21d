#include <iostream>

#include "sustain/cli.hpp"

int main(int argc, char** argv) {
  return sustain::run_cli(argc, argv, std::cout, std::cerr);
}
