#include <iostream>

#include "elok/cli.hpp"

int main(int argc, char** argv) { return elok::run_cli(argc, argv, std::cout, std::cerr); }
