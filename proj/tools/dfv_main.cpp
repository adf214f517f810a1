#include <iostream>

#include "dfv/cli.hpp"

int main(int argc, char** argv) {
  return dfv::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
