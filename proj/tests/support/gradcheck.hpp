#pragma once

// Central finite-difference oracle for analytic gradients. Test-only: it
// re-evaluates the loss through the public graph builders and never looks at
// backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "star/core/parameters.hpp"
#include "star/core/value_graph.hpp"

namespace star::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

// Central differences at h = 1e-6 carry ~1e-10 absolute roundoff on O(1)
// losses, so tensors whose gradient norm is below this floor are compared on
// an absolute scale of kNormFloor.
inline constexpr double kNormFloor = 1e-4;

using LossBuilder = std::function<core::Var(core::ValueGraph&)>;

/// Smallest |input| over all leaky-ReLU nodes; finite differences straddling
/// the kink are meaningless, so callers redraw instances below a margin.
inline double leaky_margin(const core::ValueGraph& g) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const core::Var v{static_cast<int>(i)};
    if (g.op(v) != core::Op::leaky_relu) continue;
    for (double x : g.value(core::Var{g.inputs(v)[0]}).values()) m = std::min(m, std::abs(x));
  }
  return m;
}

inline double leaky_margin(core::ParameterSet& params, const std::function<core::Var(core::ValueGraph&)>& build) {
  core::ValueGraph g(&params);
  build(g);
  return leaky_margin(g);
}

inline double eval_loss(core::ParameterSet& params, const LossBuilder& build) {
  core::ValueGraph g(&params);
  return g.value(build(g)).item();
}

/// Compares backward() gradients with (f(p+h) - f(p-h)) / 2h for every
/// trainable scalar (or a strided subset when max_per_param > 0). Error is the
/// norm-wise relative error per parameter tensor, denominator floored at kNormFloor.
inline GradCheckResult check_gradients(core::ParameterSet& params, const LossBuilder& build, double h = 1e-6,
                                       std::size_t max_per_param = 0) {
  params.zero_grad();
  {
    core::ValueGraph g(&params);
    core::Var loss = build(g);
    g.backward(loss);
  }
  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& e = params.entries()[pi];
    if (!e.trainable) continue;
    const std::size_t n = e.value.numel();
    const std::size_t stride = (max_per_param == 0 || n <= max_per_param) ? 1 : (n + max_per_param - 1) / max_per_param;
    double diff2 = 0.0, an2 = 0.0, nu2 = 0.0;
    for (std::size_t j = 0; j < n; j += stride) {
      const double orig = params.entries()[pi].value[j];
      params.entries()[pi].value[j] = orig + h;
      const double fp = eval_loss(params, build);
      params.entries()[pi].value[j] = orig - h;
      const double fm = eval_loss(params, build);
      params.entries()[pi].value[j] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = params.entries()[pi].grad[j];
      diff2 += (numeric - analytic) * (numeric - analytic);
      an2 += analytic * analytic;
      nu2 += numeric * numeric;
      ++res.checked;
    }
    const double denom = std::max({std::sqrt(an2), std::sqrt(nu2), kNormFloor});
    const double rel = std::sqrt(diff2) / denom;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_param = params.entries()[pi].name;
    }
  }
  return res;
}

}  // namespace star::testing
