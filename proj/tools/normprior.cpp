#include <iostream>

#include "normprior/cli.hpp"

int main(int argc, char** argv) {
  return normprior::cli::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
