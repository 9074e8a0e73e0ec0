#include <iostream>

#include "aldsr/cli.hpp"

int main(int argc, char** argv) { return aldsr::cli::run(argc, argv, std::cout, std::cerr); }
