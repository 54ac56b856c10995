#pragma once

// Small two-community member/job graph for GNN tests.

#include <string>

#include "star/core/rng.hpp"
#include "star/graph/hetero_graph.hpp"

namespace star::testing {

struct ToyGraphSpec {
  std::size_t members = 30;
  std::size_t jobs = 20;
  std::size_t skills = 6;
  std::size_t applies = 120;
  std::size_t views = 80;
  std::size_t text_dim = 3;
  double in_community = 0.9;
  std::uint64_t seed = 1;
};

inline graph::HeteroGraph toy_graph(const ToyGraphSpec& s = {}) {
  using graph::NodeType;
  core::Rng rng(s.seed);
  graph::GraphBuilder b;
  std::uint32_t slot = 0;
  auto text = [&](std::size_t community) {
    std::vector<float> v(s.text_dim);
    for (std::size_t k = 0; k < s.text_dim; ++k)
      v[k] = static_cast<float>(rng.normal(k == community % s.text_dim ? 1.0 : 0.0, 0.5));
    return v;
  };
  for (std::size_t i = 0; i < s.members; ++i) {
    graph::FeatureBundle f{.text_embedding = s.text_dim ? text(i % 2) : std::vector<float>{}, .id_slot = slot++};
    f.categorical.emplace_back(0, static_cast<std::uint32_t>(i % 3));
    b.add_node(NodeType::member, i, std::move(f));
  }
  for (std::size_t j = 0; j < s.jobs; ++j) {
    graph::FeatureBundle f{.text_embedding = s.text_dim ? text(j % 2) : std::vector<float>{}, .id_slot = slot++};
    f.categorical.emplace_back(1, static_cast<std::uint32_t>(j % 4));
    b.add_node(NodeType::job, j, std::move(f));
  }
  for (std::size_t k = 0; k < s.skills; ++k) b.add_node(NodeType::skill, k, {.id_slot = slot++});
  auto pick_job = [&](std::size_t m) {
    const bool same = rng.bernoulli(s.in_community);
    std::size_t j = rng.below(s.jobs / 2) * 2 + (m % 2);
    if (!same) j = rng.below(s.jobs / 2) * 2 + 1 - (m % 2);
    return j;
  };
  for (std::size_t e = 0; e < s.applies; ++e) {
    const std::size_t m = rng.below(s.members);
    b.add_edge(NodeType::member, m, "member-job-APPLY", NodeType::job, pick_job(m),
               static_cast<std::int64_t>(1000 + 10 * e), 1.0);
  }
  for (std::size_t e = 0; e < s.views; ++e) {
    const std::size_t m = rng.below(s.members);
    b.add_edge(NodeType::member, m, "member-job-VIEW", NodeType::job, pick_job(m),
               static_cast<std::int64_t>(1005 + 10 * e), 1.0);
  }
  for (std::size_t j = 0; j < s.jobs; ++j) {
    b.add_edge(NodeType::job, j, "job-skill", NodeType::skill, (j % 2) * (s.skills / 2) + rng.below(s.skills / 2), 0,
               1.0);
  }
  for (std::size_t m = 0; m < s.members; ++m) {
    b.add_edge(NodeType::member, m, "member-skill", NodeType::skill, (m % 2) * (s.skills / 2) + rng.below(s.skills / 2),
               0, 1.0);
  }
  return b.build();
}

}  // namespace star::testing
