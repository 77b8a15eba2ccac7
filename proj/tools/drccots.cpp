#include <iostream>

#include "drccots/cli.hpp"

int main(int argc, char** argv) { return drccots::run_cli(argc, argv, std::cout, std::cerr); }
