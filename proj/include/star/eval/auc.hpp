#pragma once

#include <span>

namespace star::eval {

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Labels > 0.5 are positives. Throws if either class is
/// missing or sizes differ.
///
/// Computed as an integer rank sum over tie groups, so the result is the same
/// double as the quadratic pairwise count divided by 2·P·N.
double compute_auc(std::span<const double> scores, std::span<const double> labels);

}  // namespace star::eval
