// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "role_forge/cli.hpp"

int main(int argc, char** argv) { return role_forge::cli::run(argc, argv, std::cout, std::cerr); }
