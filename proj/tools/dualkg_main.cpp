#include <iostream>

#include "dualkg/cli.hpp"

int main(int argc, char** argv) { return dualkg::run_cli(argc, argv, std::cout, std::cerr); }
