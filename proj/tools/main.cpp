// SPDX-License-Identifier: Apache-2.0
#include "tcnf/cli.hpp"

int main(int argc, char** argv) { return tcnf::cli::run_command(argc, argv); }
