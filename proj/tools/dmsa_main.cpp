#include <iostream>

#include "dmsa/cli.hpp"

int main(int argc, char** argv) { return dmsa::cli_main(argc, argv, std::cout, std::cerr); }
