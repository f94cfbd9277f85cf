// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "pecop/cli.hpp"

int main(int argc, char** argv) { return pecop::run_cli(argc, argv, std::cout, std::cerr); }
