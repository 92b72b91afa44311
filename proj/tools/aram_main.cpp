#include "aram/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return aram::run_cli(argc, argv, std::cout, std::cerr); }
