// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tcnf/graph.hpp"

#include <functional>
#include <vector>

namespace tcnf::diff {

using GraphBuilder = std::function<Var(Graph&)>;

/// Compares backward() against central differences for every scalar entry of
/// every listed parameter. The builder is evaluated in inference mode, so
/// dropout is off.
///
/// Returns max |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
double finite_diff_check(const GraphBuilder& build, const std::vector<Parameter*>& params, double epsilon);

}  // namespace tcnf::diff
