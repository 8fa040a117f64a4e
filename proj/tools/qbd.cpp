#include "qbdecon/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return qbd::run_cli(argc, argv, std::cout, std::cerr); }
