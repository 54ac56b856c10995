#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "star/core/tensor.hpp"

namespace star::lifecycle {

inline constexpr double kRidge = 1e-8;

/// Linear map (no bias) from version `from_version` embeddings (dim m) to
/// version `to_version` embeddings (dim n): W is n x m.
struct VersionTransform {
  std::uint64_t from_version = 0;
  std::uint64_t to_version = 0;
  core::Tensor weight;  // [n, m]
  double residual_rms = 0.0;
  std::size_t rows_fitted = 0;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

struct FitOptions {
  double ridge = kRidge;
  /// 0 fits every row; otherwise a seeded subsample of this many rows.
  std::size_t max_rows = 0;
  std::uint64_t seed = 0;
};

/// argmin_W sum_i ||W e_k[i] - e_prev[i]||^2 via ridge-regularized normal equations.
VersionTransform fit_backward_transform(const core::Tensor& e_new, const core::Tensor& e_prev, FitOptions opts = {});

std::vector<double> apply_transform(const VersionTransform& t, std::span<const double> v);
/// Row-wise W v for every row of `rows` [N, m] -> [N, n].
core::Tensor apply_transform_rows(const VersionTransform& t, const core::Tensor& rows);

/// Transform for k -> k-2 from k -> k-1 followed by k-1 -> k-2.
VersionTransform compose(const VersionTransform& first, const VersionTransform& second);

/// Residual RMS of W over the given rows (per entry).
double residual_rms(const VersionTransform& t, const core::Tensor& e_new, const core::Tensor& e_prev);

struct CompatReport {
  double residual_rms = 0.0;
  double mean_tau = 0.0;  // over non-degenerate probes
  double min_tau = 0.0;
  std::size_t probes = 0;
  std::size_t degenerate = 0;  // probes with constant scores (tau undefined)
  bool all_degenerate() const { return degenerate == probes; }
};

/// For each probe query q (dim n) ranks the candidate rows by q . e_prev[c]
/// and by q . W e_new[c] and reports Kendall tau between the two rankings.
CompatReport evaluate_compat(const VersionTransform& t, const core::Tensor& e_new, const core::Tensor& e_prev,
                             const core::Tensor& probes, std::span<const std::size_t> candidates);

void save_transform(const std::filesystem::path& path, const VersionTransform& t);
VersionTransform load_transform(const std::filesystem::path& path);

}  // namespace star::lifecycle
