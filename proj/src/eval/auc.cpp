#include "star/eval/auc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "star/core/error.hpp"

namespace star::eval {

double compute_auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw Error("auc: scores and labels differ in length");
  for (double s : scores)
    if (!std::isfinite(s)) throw NonFiniteError("auc: non-finite score");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // twice the rank sum of positives; a tie group spanning ranks [lo, hi] gives each member lo + hi
  std::uint64_t pos = 0;
  unsigned __int128 twice_rank_sum = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const std::uint64_t both = (i + 1) + (j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] > 0.5) {
        ++pos;
        twice_rank_sum += both;
      }
    }
    i = j + 1;
  }
  const std::uint64_t neg = n - pos;
  if (pos == 0 || neg == 0) throw Error("auc: need at least one positive and one negative label");
  const unsigned __int128 twice_u = twice_rank_sum - static_cast<unsigned __int128>(pos) * (pos + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace star::eval
