#include <iostream>

#include "dmd/cli/cli.hpp"

int main(int argc, char** argv) { return dmd::cli::run(argc, argv, std::cout, std::cerr); }
