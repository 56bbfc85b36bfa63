#include <iostream>

#include "onering/cli.hpp"

int main(int argc, char** argv) { return onering::run_cli(argc, argv, std::cout, std::cerr); }
