#include "star/eval/kendall.hpp"

#include <cmath>

#include "star/core/error.hpp"

namespace star::eval {

std::optional<double> kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("kendall_tau: length mismatch");
  // O(n^2) pair count; candidate sets here are small
  double concordant = 0.0, discordant = 0.0, ties_a = 0.0, ties_b = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double da = a[i] - a[j];
      const double db = b[i] - b[j];
      pairs += 1.0;
      if (da == 0.0) ties_a += 1.0;
      if (db == 0.0) ties_b += 1.0;
      if (da == 0.0 || db == 0.0) continue;
      ((da > 0) == (db > 0) ? concordant : discordant) += 1.0;
    }
  }
  const double denom = std::sqrt((pairs - ties_a) * (pairs - ties_b));
  if (denom == 0.0) return std::nullopt;
  return (concordant - discordant) / denom;
}

}  // namespace star::eval
