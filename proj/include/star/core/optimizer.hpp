#pragma once

#include <cstdint>
#include <vector>

#include "star/core/parameters.hpp"

namespace star::core {

/// AdamW hyperparameters. beta/eps are not given by the source method; the
/// defaults are the conventional ones.
struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::int64_t warmup_steps = 0;
};

/// Adam with decoupled weight decay, bias correction and a linear warmup.
///
/// Step t (1-based) uses lr * min(1, t / warmup_steps). Non-trainable entries
/// of the ParameterSet are skipped.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update from the gradients stored in `params`. Throws
  /// NonFiniteError, leaving parameters and state untouched, if any
  /// gradient is NaN/Inf.
  void step(ParameterSet& params);

  /// Learning rate that step number `t` (1-based) would use.
  double lr_at(std::int64_t t) const;
  std::int64_t steps_taken() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t t_ = 0;
};

/// Batch bookkeeping: effective batch = workers x per-worker batch x accumulation steps.
/// Execution is single-process; workers are simulated sequentially.
struct TrainConfig {
  std::size_t per_worker_batch_size = 16;
  std::size_t grad_accumulation_steps = 1;
  std::size_t worker_count = 1;
  std::uint64_t seed = 0;

  std::size_t effective_batch_size() const {
    return worker_count * per_worker_batch_size * grad_accumulation_steps;
  }
  /// Micro-batches folded into one optimizer step.
  std::size_t micro_batches_per_step() const { return worker_count * grad_accumulation_steps; }
  void validate() const;

  /// Accumulation steps needed to hit `target` exactly; throws if the target
  /// is not a multiple of workers x per-worker batch.
  static TrainConfig for_effective_batch(std::size_t target, std::size_t per_worker, std::size_t workers);
};

}  // namespace star::core
