#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "star/graph/hetero_graph.hpp"
#include "star/serving/ingest.hpp"
#include "star/text/records.hpp"

namespace star::eval {

struct WorldConfig {
  std::size_t members = 2000;
  std::size_t jobs = 1000;
  std::size_t skills = 200;
  std::size_t titles = 50;
  std::size_t companies = 100;
  std::size_t latent_dim = 8;
  double noise = 0.5;             // stdev of the per-pair affinity noise
  double affinity_scale = 4.0;    // multiplies the normalized latent dot
  double region_bonus = 0.3;      // weak categorical signal
  double apply_rate = 0.3;
  double save_rate = 0.1;
  double inmail_rate = 0.05;
  std::size_t candidates_per_member = 12;
  std::size_t skills_per_member = 3;
  std::size_t skills_per_job = 4;
  double attribute_sharpness = 1.5;
  std::size_t regions = 10;
  std::size_t seniority_levels = 5;
  // text synthesis
  std::size_t topic_words = 12;  // per latent dimension and sign
  std::size_t filler_words = 400;
  std::size_t profile_words = 30;
  std::size_t resume_words = 40;
  std::size_t job_words = 35;
  double topic_fraction = 0.6;
  std::int64_t time_span = 180 * 86400;
  double update_fraction = 0.2;     // entities re-announced with new text
  double unchanged_fraction = 0.3;  // entities re-announced with identical text
  std::uint64_t seed = 0;

  void validate() const;
};

struct WorldEntity {
  std::uint64_t id = 0;
  std::vector<double> latent;
  std::vector<std::uint32_t> skills;
  std::uint32_t title = 0;
  std::uint32_t company = 0;
  std::uint32_t region = 0;
  std::uint32_t seniority = 0;
  std::string text;    // job description or member profile
  std::string resume;  // members only
};

struct World {
  WorldConfig cfg;
  std::vector<WorldEntity> members;
  std::vector<WorldEntity> jobs;
  std::vector<text::TrainingPair> pairs;  // every candidate with its label
  struct Interaction {
    std::uint64_t member, job;
    std::int64_t time;
    std::string action;  // APPLY, SAVE or INMAIL
  };
  std::vector<Interaction> interactions;
  std::vector<serving::UpdateEvent> events;
  double apply_bias = 0.0;
  double save_bias = 0.0;
  double inmail_bias = 0.0;
  double label_latent_correlation = 0.0;
};

World generate_world(const WorldConfig& cfg);

/// Feature bundles and edges of the world graph; text embeddings are added separately.
graph::GraphBuilder world_graph_builder(const World& w);

/// nodes.tsv, edges.tsv, texts.jsonl, pairs.jsonl, events.jsonl, latent.tsv, manifest.json.
void write_world(const World& w, const std::filesystem::path& dir);

struct TwoCommunityConfig {
  std::size_t members = 600;
  std::size_t jobs = 300;
  std::size_t subclusters = 6;  // per community
  std::size_t skills_per_subcluster = 4;
  std::size_t applies_per_member = 6;
  double in_subcluster = 0.85;
  double in_community = 0.1;  // remainder goes across communities
  std::size_t categorical_values = 8;
  std::int64_t time_span = 100000;
  std::uint64_t seed = 0;
};

/// Members and jobs split into two communities of sub-clusters; applies stay
/// mostly inside a sub-cluster; skills hang off sub-clusters. No text features.
graph::HeteroGraph two_community_graph(const TwoCommunityConfig& cfg);

}  // namespace star::eval
