#include <iostream>

#include "u2ad_tools/cli.hpp"

int main(int argc, char** argv) { return u2ad::cli::run(argc, argv, std::cout, std::cerr); }
