#include <iostream>

#include "vmatflux/cli.hpp"

int main(int argc, char** argv) { return vmatflux::run_cli(argc, argv, std::cout, std::cerr); }
