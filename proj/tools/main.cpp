#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return outfit::cli::cli_main(argc, argv, std::cout, std::cerr); }
