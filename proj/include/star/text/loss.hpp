#pragma once

#include <optional>
#include <span>

#include "star/core/value_graph.hpp"

namespace star::text {

struct LossConfig {
  double lambda = 0.5;  // contrastive weight
  double tau = 0.1;     // temperature
  void validate() const;
};

/// Semi-hard negative for `anchor`: the in-batch index (other than the
/// anchor) with the largest similarity strictly below `positive_sim`; lowest
/// index wins ties. None when nothing qualifies.
std::optional<std::size_t> mine_semi_hard(std::size_t anchor, std::span<const double> similarity_row,
                                          double positive_sim);

struct LossTerms {
  core::Var total;
  core::Var bce;          // mean over the batch
  core::Var contrastive;  // sum over positive anchors and both request components
  std::size_t contrastive_terms = 0;
};

/// BCE plus lambda times the semi-hard contrastive term. Similarity is the dot
/// product of row i of `document` with rows of `profile` and of `resume`
/// separately; each component contributes its own two-way softmax term.
LossTerms compute_loss(core::ValueGraph& g, core::Var profile, core::Var resume, core::Var document,
                       core::Var probs, const core::Tensor& labels, const LossConfig& cfg);

}  // namespace star::text
