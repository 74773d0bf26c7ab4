#include <iostream>

#include "kbcf/cli.hpp"

int main(int argc, char** argv) { return kbcf::run_cli(argc, argv, std::cout, std::cerr); }
