#include <iostream>

#include "coughgan/cli.hpp"

int main(int argc, char** argv) { return coughgan::cli::main(argc, argv, std::cout, std::cerr); }
