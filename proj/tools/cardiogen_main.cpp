#include <iostream>

#include "cardiogen/cli/commands.hpp"

int main(int argc, char** argv) { return cardiogen::run_cli(argc, argv, std::cout, std::cerr); }
