#pragma once

#include <vector>

#include "star/core/optimizer.hpp"
#include "star/text/bi_encoder.hpp"
#include "star/text/loss.hpp"

namespace star::text {

struct EncoderTrainOptions {
  LossConfig loss;
  core::TrainConfig batch;
  core::AdamWConfig optimizer{.learning_rate = 1e-3, .warmup_steps = 30};
  std::size_t epochs = 1;
  /// Validation cadence as a fraction of an epoch.
  double eval_every = 0.1;
  bool freeze_encoder = false;
  bool balance = true;
};

struct AucCheck {
  std::size_t step = 0;
  double epoch = 0.0;
  double val_auc = 0.0;
  double train_loss = 0.0;  // mean micro-batch loss since the previous check
};

struct EncoderTrainResult {
  std::vector<AucCheck> trace;
  double best_val_auc = 0.0;
  std::size_t best_step = 0;
  std::size_t train_pairs = 0;  // after balancing
  std::size_t steps = 0;
  std::size_t effective_batch = 0;
};

/// Seeded 1:1 rebalancing by downsampling the majority class; input order kept.
std::vector<TrainingPair> balance_pairs(const std::vector<TrainingPair>& pairs, std::uint64_t seed);

/// Orders by event_time and holds out the latest `val_fraction` as validation.
void split_by_time(const std::vector<TrainingPair>& pairs, double val_fraction, std::vector<TrainingPair>& train,
                   std::vector<TrainingPair>& val);

std::vector<double> predict_pairs(const BiEncoderModel& model, const std::vector<TrainingPair>& pairs);
double evaluate_auc(const BiEncoderModel& model, const std::vector<TrainingPair>& pairs);

/// Mini-batch AdamW with gradient accumulation. When `val` is non-empty the
/// parameters from the best validation check are restored at the end.
EncoderTrainResult train_encoder(BiEncoderModel& model, const std::vector<TrainingPair>& train,
                                 const std::vector<TrainingPair>& val, const EncoderTrainOptions& opts);

}  // namespace star::text
