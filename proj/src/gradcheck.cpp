// SPDX-License-Identifier: Apache-2.0
#include "tcnf/gradcheck.hpp"

#include "tcnf/error.hpp"

#include <algorithm>
#include <cmath>

namespace tcnf::diff {

double finite_diff_check(const GraphBuilder& build, const std::vector<Parameter*>& params, double epsilon) {
  if (!(epsilon > 0.0)) throw GraphError("finite_diff_check: epsilon must be positive");
  Graph g(Mode::Inference);
  const Var root = build(g);
  g.forward_eval(root);
  for (Parameter* p : params) p->zero_grad();
  g.backward(root);

  double worst = 0.0;
  for (Parameter* p : params) {
    const Tensor analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + epsilon;
      const double up = g.forward_eval(root).item();
      p->value[i] = saved - epsilon;
      const double down = g.forward_eval(root).item();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
      worst = std::max(worst, err);
    }
  }
  g.forward_eval(root);
  return worst;
}

}  // namespace tcnf::diff
