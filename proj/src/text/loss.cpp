#include "star/text/loss.hpp"

#include <cmath>

#include "star/core/error.hpp"

namespace star::text {

using core::Shape;
using core::Tensor;
using core::Var;

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw Error("loss config: tau must be > 0");
  if (!(lambda >= 0.0)) throw Error("loss config: lambda must be >= 0");
}

std::optional<std::size_t> mine_semi_hard(std::size_t anchor, std::span<const double> similarity_row,
                                          double positive_sim) {
  std::optional<std::size_t> best;
  for (std::size_t j = 0; j < similarity_row.size(); ++j) {
    if (j == anchor) continue;
    const double s = similarity_row[j];
    if (!(s < positive_sim)) continue;
    if (!best || s > similarity_row[*best]) best = j;
  }
  return best;
}

LossTerms compute_loss(core::ValueGraph& g, Var profile, Var resume, Var document, Var probs, const Tensor& labels,
                       const LossConfig& cfg) {
  cfg.validate();
  const std::size_t b = g.value(document).rows();
  if (labels.numel() != b || g.value(probs).numel() != b) {
    throw ShapeError("compute_loss: batch of " + std::to_string(b) + " documents but labels " +
                           core::shape_str(labels.shape()) + " and predictions " +
                           core::shape_str(g.value(probs).shape()));
  }
  LossTerms out;
  out.bce = g.mean(g.bce(probs, labels));
  out.total = out.bce;
  out.contrastive = g.constant(Tensor::scalar(0.0));
  if (cfg.lambda == 0.0) return out;

  std::vector<Var> terms;
  for (Var component : {profile, resume}) {
    Var sims = g.matmul(document, g.transpose(component));  // [i][j] = d_i . r_j
    const Tensor& s = g.value(sims);
    std::vector<std::int64_t> picks;
    for (std::size_t i = 0; i < b; ++i) {
      if (labels[i] != 1.0) continue;
      const auto row = s.row(i);
      const auto neg = mine_semi_hard(i, row, row[i]);
      if (!neg) continue;
      picks.push_back(static_cast<std::int64_t>(i * b + i));
      picks.push_back(static_cast<std::int64_t>(i * b + *neg));
    }
    if (picks.empty()) continue;
    const std::size_t k = picks.size() / 2;
    Var flat = g.reshape(sims, Shape{b * b});
    Var logits = g.scale(g.reshape(g.gather_elements(flat, std::move(picks)), Shape{k, 2}), 1.0 / cfg.tau);
    Var soft = g.reshape(g.row_softmax(logits), Shape{2 * k});
    std::vector<std::int64_t> firsts(k);
    for (std::size_t i = 0; i < k; ++i) firsts[i] = static_cast<std::int64_t>(2 * i);
    terms.push_back(g.sum(g.log(g.gather_elements(soft, std::move(firsts)))));
    out.contrastive_terms += k;
  }
  if (terms.empty()) return out;
  Var lc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) lc = g.add(lc, terms[i]);
  out.contrastive = g.scale(lc, -1.0);
  out.total = g.add(out.bce, g.scale(out.contrastive, cfg.lambda));
  return out;
}

}  // namespace star::text
