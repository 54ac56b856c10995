#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "star/eval/settings.hpp"

namespace star::eval {

struct CurvePoint {
  std::size_t step = 0;
  double epoch = 0.0;
  double val_auc = 0.0;
  double train_loss = 0.0;
  std::size_t sample_count = 0;     // GNN only
  std::uint64_t sampled_edges = 0;  // cumulative, GNN only
};

struct VariantResult {
  std::string name;
  double metric = 0.0;  // best validation AUC, or the template's headline number
  std::size_t steps = 0;
  std::uint64_t sampled_edges = 0;
  std::vector<CurvePoint> curve;
  std::vector<std::size_t> schedule;  // sample count at each evaluation
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
  double seconds = 0.0;  // wall clock; kept out of report.json
};

/// Direction-of-effect assertion: lhs - rhs >= margin (or <= margin when `at_most`).
struct Check {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;
  bool at_most = false;
  bool passed() const { return at_most ? lhs - rhs <= margin : lhs - rhs >= margin; }
};

struct MetricsReport {
  std::string experiment;
  std::uint64_t seed = 0;
  nlohmann::ordered_json settings;  // every setting read, with its effective value
  std::vector<std::string> ignored_settings;
  std::vector<VariantResult> variants;
  std::vector<Check> checks;
  double seconds = 0.0;

  const VariantResult& variant(const std::string& name) const;
  bool passed() const;
  /// Deterministic part: no wall-clock fields.
  nlohmann::ordered_json to_json() const;
  std::string render_table() const;
};

std::vector<std::string> experiment_templates();

struct ExperimentRequest {
  std::string name;
  std::filesystem::path world_dir;  // world-based templates only
  std::uint64_t seed = 0;
  Settings settings;
};

/// Throws on unknown templates (listing the available ones) or missing world files.
MetricsReport run_experiment(const ExperimentRequest& req);

/// report.json, report.txt and timing.json under `dir`.
void write_report(const MetricsReport& r, const std::filesystem::path& dir);

}  // namespace star::eval
