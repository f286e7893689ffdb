#include <iostream>

#include "cmsf/cli.hpp"

int main(int argc, char** argv) { return cmsf::run_cli(argc, argv, std::cout, std::cerr); }
