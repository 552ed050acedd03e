#include <iostream>

#include "pgl/commands.hpp"

int main(int argc, char** argv) { return pgl::run_cli(argc, argv, std::cout, std::cerr); }
