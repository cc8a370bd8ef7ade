// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tcnf::cli {

/// Runs one subcommand (generate, train, score, evaluate, search,
/// export-latent, report). `args` excludes the program name. Failures print
/// a single line `error: <Kind>: <message>` to `err` and return nonzero.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_command(int argc, char** argv);

}  // namespace tcnf::cli
