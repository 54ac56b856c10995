#include "star/core/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "star/core/error.hpp"

namespace star::core {

double AdamW::lr_at(std::int64_t t) const {
  if (cfg_.warmup_steps > 0 && t < cfg_.warmup_steps) {
    return cfg_.learning_rate * static_cast<double>(t) / static_cast<double>(cfg_.warmup_steps);
  }
  return cfg_.learning_rate;
}

void AdamW::step(ParameterSet& params) {
  auto& entries = params.entries();
  for (const auto& e : entries) {
    if (e.trainable && !e.grad.all_finite()) {
      throw NonFiniteError("AdamW: non-finite gradient for parameter '" + e.name + "'");
    }
  }
  if (m_.size() < entries.size()) {
    for (std::size_t i = m_.size(); i < entries.size(); ++i) {
      m_.emplace_back(entries[i].value.shape());
      v_.emplace_back(entries[i].value.shape());
    }
  }

  ++t_;
  const double lr = lr_at(t_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (!e.trainable) continue;
    if (m_[i].shape() != e.value.shape()) {
      throw ShapeError("AdamW: moment shape " + shape_str(m_[i].shape()) + " vs parameter '" + e.name + "' " +
                       shape_str(e.value.shape()));
    }
    double* p = e.value.data();
    const double* g = e.grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const std::size_t n = e.value.numel();
    const double decay = 1.0 - lr * cfg_.weight_decay;
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] = p[j] * decay - lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

void TrainConfig::validate() const {
  if (per_worker_batch_size == 0 || grad_accumulation_steps == 0 || worker_count == 0) {
    throw Error("train config: batch size, accumulation steps and worker count must be positive");
  }
}

TrainConfig TrainConfig::for_effective_batch(std::size_t target, std::size_t per_worker, std::size_t workers) {
  if (per_worker == 0 || workers == 0) throw Error("train config: per-worker batch and workers must be positive");
  const std::size_t unit = per_worker * workers;
  if (target == 0 || target % unit != 0) {
    throw Error("effective batch " + std::to_string(target) + " is not a multiple of workers x per-worker batch (" +
                std::to_string(workers) + " x " + std::to_string(per_worker) + " = " + std::to_string(unit) + ")");
  }
  TrainConfig cfg;
  cfg.per_worker_batch_size = per_worker;
  cfg.worker_count = workers;
  cfg.grad_accumulation_steps = target / unit;
  return cfg;
}

}  // namespace star::core
