#include "star/lifecycle/compat.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "star/core/checkpoint.hpp"
#include "star/core/error.hpp"
#include "star/core/rng.hpp"
#include "star/eval/kendall.hpp"

namespace star::lifecycle {

using core::Shape;
using core::Tensor;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

Eigen::Map<const RowMat> view(const Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

Tensor from_eigen(const RowMat& m) {
  Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  std::copy(m.data(), m.data() + m.size(), t.data());
  return t;
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + " must be a matrix, got " + core::shape_str(t.shape()));
}

}  // namespace

VersionTransform fit_backward_transform(const Tensor& e_new, const Tensor& e_prev, FitOptions opts) {
  require_matrix(e_new, "new embeddings");
  require_matrix(e_prev, "previous embeddings");
  if (e_new.rows() != e_prev.rows()) {
    throw ShapeError("fit_backward_transform: " + std::to_string(e_new.rows()) + " new rows vs " +
                     std::to_string(e_prev.rows()) + " previous rows");
  }
  if (!e_new.all_finite() || !e_prev.all_finite()) throw NonFiniteError("fit_backward_transform: non-finite input");
  RowMat x = view(e_new);
  RowMat y = view(e_prev);
  if (opts.max_rows > 0 && opts.max_rows < static_cast<std::size_t>(x.rows())) {
    core::Rng rng(opts.seed);
    auto picks = rng.sample_without_replacement(x.rows(), opts.max_rows);
    std::sort(picks.begin(), picks.end());
    RowMat xs(picks.size(), x.cols()), ys(picks.size(), y.cols());
    for (std::size_t i = 0; i < picks.size(); ++i) {
      xs.row(i) = x.row(picks[i]);
      ys.row(i) = y.row(picks[i]);
    }
    x.swap(xs);
    y.swap(ys);
  }
  const auto n_rows = static_cast<std::size_t>(x.rows());
  const auto m = static_cast<std::size_t>(x.cols());
  if (n_rows < m) {
    throw Error("fit_backward_transform: " + std::to_string(n_rows) + " rows cannot determine a map from dim " +
                std::to_string(m) + " (need at least " + std::to_string(m) + ")");
  }
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += opts.ridge;
  const Eigen::MatrixXd wt = gram.ldlt().solve(x.transpose() * y);  // [m, n]
  VersionTransform t;
  t.weight = from_eigen(wt.transpose());
  t.rows_fitted = n_rows;
  const Eigen::MatrixXd resid = x * wt - y;
  t.residual_rms = resid.size() ? std::sqrt(resid.squaredNorm() / static_cast<double>(resid.size())) : 0.0;
  return t;
}

std::vector<double> apply_transform(const VersionTransform& t, std::span<const double> v) {
  if (v.size() != t.in_dim()) {
    throw ShapeError("apply_transform: input dim " + std::to_string(v.size()) + " but transform expects " +
                     std::to_string(t.in_dim()));
  }
  std::vector<double> out(t.out_dim(), 0.0);
  for (std::size_t r = 0; r < t.out_dim(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < v.size(); ++c) s += t.weight.at(r, c) * v[c];
    out[r] = s;
  }
  return out;
}

Tensor apply_transform_rows(const VersionTransform& t, const Tensor& rows) {
  require_matrix(rows, "input rows");
  if (rows.cols() != t.in_dim()) {
    throw ShapeError("apply_transform: input dim " + std::to_string(rows.cols()) + " but transform expects " +
                     std::to_string(t.in_dim()));
  }
  return from_eigen(view(rows) * view(t.weight).transpose());
}

VersionTransform compose(const VersionTransform& first, const VersionTransform& second) {
  if (first.to_version != second.from_version || first.out_dim() != second.in_dim()) {
    throw Error("compose: transform " + std::to_string(first.from_version) + "->" + std::to_string(first.to_version) +
                " does not chain into " + std::to_string(second.from_version) + "->" +
                std::to_string(second.to_version));
  }
  VersionTransform t;
  t.from_version = first.from_version;
  t.to_version = second.to_version;
  t.weight = from_eigen(view(second.weight) * view(first.weight));
  t.residual_rms = std::numeric_limits<double>::quiet_NaN();
  return t;
}

double residual_rms(const VersionTransform& t, const Tensor& e_new, const Tensor& e_prev) {
  const Tensor pred = apply_transform_rows(t, e_new);
  if (pred.shape() != e_prev.shape()) throw ShapeError("residual_rms: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) s += (pred[i] - e_prev[i]) * (pred[i] - e_prev[i]);
  return pred.numel() ? std::sqrt(s / static_cast<double>(pred.numel())) : 0.0;
}

CompatReport evaluate_compat(const VersionTransform& t, const Tensor& e_new, const Tensor& e_prev,
                             const Tensor& probes, std::span<const std::size_t> candidates) {
  if (probes.numel() == 0 || probes.rank() != 2 || probes.rows() == 0) throw Error("evaluate_compat: empty probe set");
  if (candidates.size() < 2) throw Error("evaluate_compat: need at least two candidates");
  if (probes.cols() != e_prev.cols()) throw ShapeError("evaluate_compat: probe dim does not match previous version");
  CompatReport rep;
  rep.residual_rms = residual_rms(t, e_new, e_prev);
  const Tensor mapped = apply_transform_rows(t, e_new);
  double sum = 0.0;
  rep.min_tau = std::numeric_limits<double>::infinity();
  std::vector<double> old_scores(candidates.size()), new_scores(candidates.size());
  for (std::size_t q = 0; q < probes.rows(); ++q) {
    const auto probe = probes.row(q);
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      const std::size_t c = candidates[k];
      if (c >= e_prev.rows()) throw Error("evaluate_compat: candidate row out of range");
      double so = 0.0, sn = 0.0;
      for (std::size_t d = 0; d < probe.size(); ++d) {
        so += probe[d] * e_prev.at(c, d);
        sn += probe[d] * mapped.at(c, d);
      }
      old_scores[k] = so;
      new_scores[k] = sn;
    }
    ++rep.probes;
    const auto tau = eval::kendall_tau(old_scores, new_scores);
    if (!tau) {
      ++rep.degenerate;
      continue;
    }
    sum += *tau;
    rep.min_tau = std::min(rep.min_tau, *tau);
  }
  const std::size_t valid = rep.probes - rep.degenerate;
  rep.mean_tau = valid ? sum / static_cast<double>(valid) : std::numeric_limits<double>::quiet_NaN();
  if (!valid) rep.min_tau = std::numeric_limits<double>::quiet_NaN();
  return rep;
}

void save_transform(const std::filesystem::path& path, const VersionTransform& t) {
  core::NamedTensors named;
  named.emplace_back("weight", t.weight);
  named.emplace_back("from_version", Tensor::scalar(static_cast<double>(t.from_version)));
  named.emplace_back("to_version", Tensor::scalar(static_cast<double>(t.to_version)));
  named.emplace_back("residual_rms", Tensor::scalar(t.residual_rms));
  named.emplace_back("rows_fitted", Tensor::scalar(static_cast<double>(t.rows_fitted)));
  core::save_checkpoint(path, named);
}

VersionTransform load_transform(const std::filesystem::path& path) {
  const auto named = core::load_checkpoint(path);
  VersionTransform t;
  t.weight = core::find_tensor(named, "weight");
  if (t.weight.rank() != 2) throw FormatError(path.string() + ": transform weight is not a matrix");
  t.from_version = static_cast<std::uint64_t>(core::find_tensor(named, "from_version").item());
  t.to_version = static_cast<std::uint64_t>(core::find_tensor(named, "to_version").item());
  t.residual_rms = core::find_tensor(named, "residual_rms").item();
  t.rows_fitted = static_cast<std::size_t>(core::find_tensor(named, "rows_fitted").item());
  return t;
}

}  // namespace star::lifecycle
