#include <iostream>

#include "fpott/pipeline.hpp"

int main(int argc, char** argv) { return fpott::run_cli(argc, argv, std::cout, std::cerr); }
