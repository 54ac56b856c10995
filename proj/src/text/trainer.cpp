#include "star/text/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "star/core/error.hpp"
#include "star/core/rng.hpp"
#include "star/eval/auc.hpp"

namespace star::text {

using core::Shape;
using core::Tensor;
using core::ValueGraph;
using core::Var;

namespace {

constexpr std::size_t kPredictBatch = 256;

struct Tokenized {
  TokenSeq profile, resume, job;
  double label;
};

std::vector<Tokenized> tokenize_pairs(const BiEncoderModel& m, const std::vector<TrainingPair>& pairs) {
  std::vector<Tokenized> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({m.tokens(TextKind::member_profile, p.profile_text), m.tokens(TextKind::member_resume, p.resume_text),
                   m.tokens(TextKind::job_description, p.job_text), p.label});
  }
  return out;
}

struct BatchVars {
  Var profile, resume, document, probs;
};

BatchVars forward(const BiEncoderModel& m, ValueGraph& g, const std::vector<Tokenized>& data,
                  std::span<const std::size_t> idx) {
  std::vector<const TokenSeq*> p, r, d;
  for (std::size_t i : idx) {
    p.push_back(&data[i].profile);
    r.push_back(&data[i].resume);
    d.push_back(&data[i].job);
  }
  BatchVars v;
  v.profile = m.encode(g, p);
  v.resume = m.encode(g, r);
  v.document = m.encode(g, d);
  v.probs = m.head(g, v.profile, v.resume, v.document);
  return v;
}

std::vector<double> predict_tokenized(const BiEncoderModel& m, const std::vector<Tokenized>& data) {
  std::vector<double> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kPredictBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + kPredictBatch); ++i) idx.push_back(i);
    ValueGraph g(const_cast<core::ParameterSet*>(&m.params()));
    const Tensor& probs = g.value(forward(m, g, data, idx).probs);
    out.insert(out.end(), probs.values().begin(), probs.values().end());
  }
  return out;
}

double auc_of(const std::vector<double>& scores, const std::vector<Tokenized>& data) {
  std::vector<double> labels;
  labels.reserve(data.size());
  for (const auto& t : data) labels.push_back(t.label);
  return eval::compute_auc(scores, labels);
}

}  // namespace

std::vector<TrainingPair> balance_pairs(const std::vector<TrainingPair>& pairs, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < pairs.size(); ++i) (pairs[i].label == 1.0 ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) return pairs;
  std::vector<std::size_t>& major = pos.size() > neg.size() ? pos : neg;
  const std::size_t keep = std::min(pos.size(), neg.size());
  core::Rng rng(seed);
  auto chosen = rng.sample_without_replacement(major.size(), keep);
  std::vector<std::uint8_t> take(pairs.size(), 0);
  for (std::size_t i : (&major == &pos ? neg : pos)) take[i] = 1;
  for (std::size_t c : chosen) take[major[c]] = 1;
  std::vector<TrainingPair> out;
  out.reserve(2 * keep);
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (take[i]) out.push_back(pairs[i]);
  return out;
}

void split_by_time(const std::vector<TrainingPair>& pairs, double val_fraction, std::vector<TrainingPair>& train,
                   std::vector<TrainingPair>& val) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw Error("val_fraction must be in [0, 1)");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pairs[a].event_time < pairs[b].event_time; });
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(pairs.size())));
  train.clear();
  val.clear();
  for (std::size_t k = 0; k < order.size(); ++k) (k + n_val < order.size() ? train : val).push_back(pairs[order[k]]);
}

std::vector<double> predict_pairs(const BiEncoderModel& model, const std::vector<TrainingPair>& pairs) {
  return predict_tokenized(model, tokenize_pairs(model, pairs));
}

double evaluate_auc(const BiEncoderModel& model, const std::vector<TrainingPair>& pairs) {
  const auto data = tokenize_pairs(model, pairs);
  return auc_of(predict_tokenized(model, data), data);
}

EncoderTrainResult train_encoder(BiEncoderModel& model, const std::vector<TrainingPair>& train,
                                 const std::vector<TrainingPair>& val, const EncoderTrainOptions& opts) {
  if (train.empty()) throw Error("train_encoder: empty training set");
  opts.loss.validate();
  opts.batch.validate();
  const std::uint64_t seed = opts.batch.seed;

  const auto data =
      tokenize_pairs(model, opts.balance ? balance_pairs(train, core::derive_seed(seed, "balance")) : train);
  const auto val_data = tokenize_pairs(model, val);

  model.set_encoder_trainable(!opts.freeze_encoder);
  core::AdamW opt(opts.optimizer);
  auto& params = model.params();

  EncoderTrainResult res;
  res.train_pairs = data.size();
  res.effective_batch = opts.batch.effective_batch_size();
  const std::size_t micro = opts.batch.per_worker_batch_size;
  const std::size_t per_step = opts.batch.micro_batches_per_step();
  const std::size_t steps_per_epoch = (data.size() + res.effective_batch - 1) / res.effective_batch;
  const std::size_t eval_interval =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(opts.eval_every * static_cast<double>(steps_per_epoch))));

  core::ParameterSet best;
  bool have_best = false;
  res.best_val_auc = -1.0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;

  auto check = [&](std::size_t epoch, std::size_t step_in_epoch) {
    AucCheck c;
    c.step = res.steps;
    c.epoch = static_cast<double>(epoch) + static_cast<double>(step_in_epoch) / static_cast<double>(steps_per_epoch);
    c.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    loss_sum = 0.0;
    loss_count = 0;
    c.val_auc = auc_of(predict_tokenized(model, val_data), val_data);
    res.trace.push_back(c);
    if (c.val_auc > res.best_val_auc) {
      res.best_val_auc = c.val_auc;
      res.best_step = res.steps;
      best = params;
      have_best = true;
    }
  };

  core::Rng rng(core::derive_seed(seed, "shuffle"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(order);
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      params.zero_grad();
      const std::size_t begin = cursor;
      const std::size_t end = std::min(data.size(), begin + res.effective_batch);
      const std::size_t micro_count = (end - begin + micro - 1) / micro;
      for (std::size_t mb = 0; mb < micro_count && mb < per_step; ++mb) {
        const std::size_t lo = begin + mb * micro;
        const std::size_t hi = std::min(end, lo + micro);
        std::span<const std::size_t> idx(order.data() + lo, hi - lo);
        ValueGraph g(&params);
        BatchVars v = forward(model, g, data, idx);
        Tensor labels(Shape{idx.size()});
        for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = data[idx[i]].label;
        LossTerms lt = compute_loss(g, v.profile, v.resume, v.document, v.probs, labels, opts.loss);
        loss_sum += g.value(lt.total).item();
        ++loss_count;
        g.backward(g.scale(lt.total, 1.0 / static_cast<double>(micro_count)));
      }
      cursor = end;
      opt.step(params);
      ++res.steps;
      if (!val_data.empty() && ((s + 1) % eval_interval == 0 || s + 1 == steps_per_epoch)) check(epoch, s + 1);
    }
  }
  if (have_best) params.copy_values_from(best);
  if (val_data.empty()) res.best_step = res.steps;
  model.set_encoder_trainable(true);
  return res;
}

}  // namespace star::text
