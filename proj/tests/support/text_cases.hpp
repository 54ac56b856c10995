#pragma once

// Oracles and random instances for the composite text loss.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "star/core/rng.hpp"
#include "star/text/bi_encoder.hpp"
#include "star/text/loss.hpp"
#include "support/gradcheck.hpp"

namespace star::testing {

// Brute force: sort candidates by similarity and take the first strictly below the positive.
inline std::optional<std::size_t> mine_oracle(std::size_t anchor, const std::vector<double>& row, double pos) {
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < row.size(); ++j)
    if (j != anchor) idx.push_back(j);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  for (std::size_t j : idx)
    if (row[j] < pos) return j;
  return std::nullopt;
}

inline double dot(const core::Tensor& a, std::size_t i, const core::Tensor& b, std::size_t j) {
  double s = 0;
  for (std::size_t c = 0; c < a.cols(); ++c) s += a.at(i, c) * b.at(j, c);
  return s;
}

// Smallest gap between similarities that decide a semi-hard pick.
inline double mining_margin(const text::BiEncoderModel& m, std::vector<text::TokenSeq>& p,
                            std::vector<text::TokenSeq>& r, std::vector<text::TokenSeq>& d, const core::Tensor& y) {
  auto emb = [&](std::vector<text::TokenSeq>& v) {
    std::vector<const text::TokenSeq*> ptrs;
    for (auto& s : v) ptrs.push_back(&s);
    core::ValueGraph g(const_cast<core::ParameterSet*>(&m.params()));
    return g.value(m.encode(g, ptrs));
  };
  const core::Tensor D = emb(d);
  double margin = std::numeric_limits<double>::infinity();
  for (core::Tensor C : {emb(p), emb(r)}) {
    for (std::size_t i = 0; i < y.numel(); ++i) {
      if (y[i] != 1.0) continue;
      for (std::size_t j = 0; j < y.numel(); ++j)
        for (std::size_t k = 0; k < y.numel(); ++k)
          if (j != k && j != i) margin = std::min(margin, std::abs(dot(D, i, C, j) - dot(D, i, C, k)));
    }
  }
  return margin;
}

/// One random composite-loss gradient check on a tiny bi-encoder; nullopt
/// when the instance sits within 1e-4 of a leaky kink or a mining tie.
inline std::optional<GradCheckResult> composite_loss_instance(core::Rng& rng) {
  using namespace star::text;
  BiEncoderModel m({.vocab_size = 64, .dim = 4, .layers = 2, .max_tokens = 16, .head_hidden = 3}, rng.next_u64());
  const std::size_t b = 2 + rng.below(4);
  std::vector<TokenSeq> p(b), r(b), d(b);
  core::Tensor y(core::Shape{b});
  for (std::size_t i = 0; i < b; ++i) {
    auto words = [&] {
      std::string s;
      for (std::uint64_t k = 0, n = 1 + rng.below(4); k < n; ++k) s += "t" + std::to_string(rng.below(40)) + " ";
      return s;
    };
    p[i] = m.tokens(TextKind::member_profile, words());
    r[i] = m.tokens(TextKind::member_resume, words());
    d[i] = m.tokens(TextKind::job_description, words());
    y[i] = rng.bernoulli(0.6);
  }
  LossBuilder build = [&](core::ValueGraph& g) {
    auto ptrs = [](std::vector<TokenSeq>& v) {
      std::vector<const TokenSeq*> out;
      for (auto& s : v) out.push_back(&s);
      return out;
    };
    core::Var ep = m.encode(g, ptrs(p)), er = m.encode(g, ptrs(r)), ed = m.encode(g, ptrs(d));
    return compute_loss(g, ep, er, ed, m.head(g, ep, er, ed), y, {.lambda = 0.7, .tau = 0.5}).total;
  };
  if (leaky_margin(m.params(), build) < 1e-4 || mining_margin(m, p, r, d, y) < 1e-4) return std::nullopt;
  return check_gradients(m.params(), build);
}

}  // namespace star::testing
