#include <iostream>

#include "lct/cli.hpp"

int main(int argc, char** argv) {
  return lct::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
