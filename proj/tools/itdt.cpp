#include <iostream>

#include "cli/commands.hpp"

int main(int argc, char** argv) { return itdt::cli::run(argc, argv, std::cout, std::cerr); }
