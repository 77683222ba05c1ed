#include "islanding/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return islanding::cli::main_entry(argc, argv, std::cout, std::cerr); }
