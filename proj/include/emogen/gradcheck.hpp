#pragma once

#include <cmath>
#include <functional>

#include "emogen/graph.hpp"

namespace emogen {

// Compares tape gradients against central finite differences for every
// element of every parameter in the store. `build` must construct the same
// scalar loss each time it is called; that is checked by evaluating twice
// before touching anything. Returns the worst per-parameter relative error
// |analytic - numeric| / (|analytic| + |numeric| + 1e-12) where |.| is the
// l2 norm over that parameter tensor. Comparing whole tensors keeps the
// check meaningful for deep compositions, where individual components can
// have true gradients below the noise floor of central differences.
inline double finite_diff_check(ParamStore& store,
                                const std::function<Expr(Graph&)>& build,
                                double eps = 1e-5) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw ContractError("finite_diff_check: eps out of range");

  auto eval = [&]() {
    Graph g(store);
    Expr loss = build(g);
    return g.value_scalar(loss);
  };

  double l0 = eval();
  double l1 = eval();
  if (l0 != l1) throw ContractError("finite_diff_check: loss builder is not deterministic");

  store.zero_grads();
  {
    Graph g(store);
    Expr loss = build(g);
    g.backward(loss);
  }

  double worst = 0;
  for (int pi = 0; pi < static_cast<int>(store.size()); ++pi) {
    auto& ent = store.entry(pi);
    double sq_diff = 0, sq_analytic = 0, sq_numeric = 0;
    for (size_t j = 0; j < ent.value.v.size(); ++j) {
      double keep = ent.value.v[j];
      ent.value.v[j] = keep + eps;
      double up = eval();
      ent.value.v[j] = keep - eps;
      double dn = eval();
      ent.value.v[j] = keep;
      double numeric = (up - dn) / (2 * eps);
      double analytic = ent.grad.v[j];
      sq_diff += (analytic - numeric) * (analytic - numeric);
      sq_analytic += analytic * analytic;
      sq_numeric += numeric * numeric;
    }
    double rel = std::sqrt(sq_diff) /
                 (std::sqrt(sq_analytic) + std::sqrt(sq_numeric) + 1e-12);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace emogen
