#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "star/core/checkpoint.hpp"
#include "star/core/error.hpp"
#include "star/core/rng.hpp"
#include "star/text/bi_encoder.hpp"
#include "star/text/loss.hpp"
#include "star/text/tokenizer.hpp"
#include "star/text/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/text_cases.hpp"

using namespace star;
using namespace star::core;
using namespace star::text;
namespace gc = star::testing;

namespace {

using gc::dot;
using gc::mine_oracle;

// Direct transcription of the composite objective on fixed embeddings.
double loss_transcription(const Tensor& P, const Tensor& R, const Tensor& D, const std::vector<double>& probs,
                          const std::vector<double>& y, double lambda, double tau) {
  const std::size_t b = y.size();
  double bce = 0;
  for (std::size_t i = 0; i < b; ++i) bce += -(y[i] * std::log(probs[i]) + (1 - y[i]) * std::log(1 - probs[i]));
  bce /= static_cast<double>(b);
  double lc = 0;
  for (const Tensor* comp : {&P, &R}) {
    for (std::size_t i = 0; i < b; ++i) {
      if (y[i] != 1) continue;
      std::vector<double> row(b);
      for (std::size_t j = 0; j < b; ++j) row[j] = dot(D, i, *comp, j);
      auto neg = mine_oracle(i, row, row[i]);
      if (!neg) continue;
      const double a = std::exp(row[i] / tau), n = std::exp(row[*neg] / tau);
      lc += -std::log(a / (a + n));
    }
  }
  return bce + lambda * lc;
}

Tensor random_unit_rows(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t(Shape{rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double n = 0;
    for (std::size_t c = 0; c < cols; ++c) n += std::pow(t.at(r, c) = rng.normal(), 2);
    for (std::size_t c = 0; c < cols; ++c) t.at(r, c) /= std::sqrt(n);
  }
  return t;
}

// Two topics; label 1 iff member and job share the topic.
std::vector<TrainingPair> separable_pairs(std::size_t n, std::uint64_t seed) {
  const char* words[2][3] = {{"kernel", "compiler", "linux"}, {"oncology", "nurse", "clinic"}};
  Rng rng(seed);
  std::vector<TrainingPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int mt = static_cast<int>(rng.below(2));
    const int jt = static_cast<int>(rng.below(2));
    auto text = [&](int t) {
      std::string s;
      for (int k = 0; k < 4; ++k) s += std::string(words[t][rng.below(3)]) + " ";
      return s;
    };
    TrainingPair p;
    p.member_id = i;
    p.job_id = 1000 + i;
    p.label = mt == jt ? 1.0 : 0.0;
    p.event_time = static_cast<std::int64_t>(i);
    p.profile_text = text(mt);
    p.resume_text = text(mt);
    p.job_text = text(jt);
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST(Tokenizer, EmptyText) { EXPECT_TRUE(tokenize("", {}).empty()); }

TEST(Tokenizer, CaseFolding) {
  EXPECT_EQ(tokenize("Staff Engineer", {}), tokenize("staff engineer", {}));
}

TEST(Tokenizer, SplitsOnUnicodeSeparators) {
  EXPECT_EQ(split_tokens("data science—ml, C++ résumé"),
            (std::vector<std::string>{"data", "science", "ml", "c", "résumé"}));
}

TEST(Tokenizer, IdsBelowVocabAndTruncated) {
  TokenizerConfig cfg{.vocab_size = 97, .max_tokens = 5};
  auto ids = tokenize("a b c d e f g h i j k", cfg);
  EXPECT_EQ(ids.size(), 5u);
  for (auto id : ids) EXPECT_LT(id, 97);
}

TEST(Tokenizer, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(BiEncoder, EmbeddingsHaveUnitNorm) {
  BiEncoderModel m({.vocab_size = 512, .dim = 16}, 3);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    std::string text;
    for (std::uint64_t k = 0, n = rng.below(20); k < n; ++k) text += "w" + std::to_string(rng.below(300)) + " ";
    for (auto kind : {TextKind::job_description, TextKind::member_profile, TextKind::member_resume}) {
      auto e = m.embed(kind, text);
      double n2 = 0;
      for (double x : e) n2 += x * x;
      EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-9);
    }
  }
}

TEST(BiEncoder, PrefixDistinguishesKinds) {
  BiEncoderModel m({.vocab_size = 512, .dim = 16}, 3);
  EXPECT_NE(m.embed(TextKind::job_description, "python developer"), m.embed(TextKind::member_profile, "python developer"));
  EXPECT_NE(m.embed(TextKind::member_resume, ""), m.embed(TextKind::member_profile, ""));
}

TEST(BiEncoder, SingleLayerIsNormalizedFirstLayer) {
  BiEncoderModel m({.vocab_size = 128, .dim = 8, .layers = 1}, 5);
  const TokenSeq seq = m.tokens(TextKind::member_profile, "graph neural nets");
  const Tensor& table = m.params().value(m.params().require("enc.token"));
  const Tensor& w = m.params().value(m.params().require("enc.layer0.weight"));
  const Tensor& b = m.params().value(m.params().require("enc.layer0.bias"));
  std::vector<double> pooled(8, 0.0), h(8, 0.0);
  for (auto id : seq)
    for (std::size_t c = 0; c < 8; ++c) pooled[c] += table.at(id, c) / static_cast<double>(seq.size());
  double n2 = 0;
  for (std::size_t c = 0; c < 8; ++c) {
    double s = b[c];
    for (std::size_t k = 0; k < 8; ++k) s += pooled[k] * w.at(k, c);
    h[c] = s > 0 ? s : 0.01 * s;
    n2 += h[c] * h[c];
  }
  auto e = m.embed(TextKind::member_profile, "graph neural nets");
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(e[c], h[c] / std::sqrt(n2), 1e-12);
}

TEST(BiEncoder, ZeroHeadGivesHalf) {
  BiEncoderModel m({.vocab_size = 128, .dim = 8}, 5);
  for (auto& e : m.params().entries())
    if (e.name.rfind("head.", 0) == 0) e.value.fill(0.0);
  auto p = m.embed(TextKind::member_profile, "a"), r = m.embed(TextKind::member_resume, "b"),
       d = m.embed(TextKind::job_description, "c");
  EXPECT_EQ(m.predict_pair(p, r, d), 0.5);
}

TEST(BiEncoder, PredictionInOpenIntervalAndDeterministic) {
  BiEncoderModel m({.vocab_size = 128, .dim = 8}, 9);
  auto p = m.embed(TextKind::member_profile, "x y"), r = m.embed(TextKind::member_resume, "z"),
       d = m.embed(TextKind::job_description, "x");
  const double a = m.predict_pair(p, r, d);
  EXPECT_GT(a, 0.0);
  EXPECT_LT(a, 1.0);
  EXPECT_EQ(a, m.predict_pair(p, r, d));
  std::vector<double> short_vec(4, 0.1);
  EXPECT_THROW(m.predict_pair(short_vec, r, d), ShapeError);
}

TEST(BiEncoder, CheckpointRoundTrip) {
  BiEncoderModel m({.vocab_size = 128, .dim = 8, .layers = 3}, 9);
  const auto path = std::filesystem::temp_directory_path() / "star_text_ckpt_test.stnc";
  m.save(path);
  BiEncoderModel back = BiEncoderModel::load(path);
  EXPECT_EQ(back.config().layers, 3u);
  EXPECT_EQ(back.embed(TextKind::job_description, "rust"), m.embed(TextKind::job_description, "rust"));
  std::filesystem::remove(path);
}

TEST(SemiHard, Examples) {
  std::vector<double> a{0.9, 0.7, 0.95, 0.6};
  EXPECT_EQ(mine_semi_hard(0, a, a[0]), std::optional<std::size_t>(1));
  std::vector<double> b{0.5, 0.8, 0.9};
  EXPECT_EQ(mine_semi_hard(0, b, b[0]), std::nullopt);
  std::vector<double> c{0.9, 0.7, 0.7};
  EXPECT_EQ(mine_semi_hard(0, c, c[0]), std::optional<std::size_t>(1));
  std::vector<double> single{0.3};
  EXPECT_EQ(mine_semi_hard(0, single, 0.3), std::nullopt);
}

TEST(SemiHard, MatchesExhaustiveScan) {
  Rng rng(123);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng.below(63);
    std::vector<double> row(n);
    // coarse grid forces ties and equal-to-positive cases
    for (auto& x : row) x = static_cast<double>(rng.below(9)) / 8.0;
    const std::size_t anchor = rng.below(n);
    EXPECT_EQ(mine_semi_hard(anchor, row, row[anchor]), mine_oracle(anchor, row, row[anchor]));
  }
}

TEST(Loss, BceOnlyHalfPrediction) {
  ValueGraph g;
  Tensor e = Tensor::matrix({{1.0, 0.0}});
  Var v = g.constant(e);
  auto lt = compute_loss(g, v, v, v, g.constant(Tensor::vector({0.5})), Tensor::vector({1.0}), {.lambda = 0.0});
  EXPECT_NEAR(g.value(lt.total).item(), std::log(2.0), 1e-15);
}

TEST(Loss, AllNegativeLabelsHaveNoContrastive) {
  Rng rng(4);
  ValueGraph g;
  Var p = g.constant(random_unit_rows(rng, 5, 3)), r = g.constant(random_unit_rows(rng, 5, 3)),
      d = g.constant(random_unit_rows(rng, 5, 3));
  auto lt = compute_loss(g, p, r, d, g.constant(Tensor(Shape{5}, 0.3)), Tensor(Shape{5}, 0.0), {.lambda = 10.0});
  EXPECT_EQ(g.value(lt.contrastive).item(), 0.0);
  EXPECT_EQ(lt.contrastive_terms, 0u);
}

TEST(Loss, RejectsNonPositiveTemperature) {
  ValueGraph g;
  Var v = g.constant(Tensor::matrix({{1.0}}));
  EXPECT_THROW(compute_loss(g, v, v, v, g.constant(Tensor::vector({0.5})), Tensor::vector({1.0}), {.tau = 0.0}),
               Error);
}

TEST(Loss, MatchesTranscriptionOnFixedBatches) {
  Rng rng(77);
  for (int t = 0; t < 50; ++t) {
    const std::size_t b = 4;
    Tensor P = random_unit_rows(rng, b, 6), R = random_unit_rows(rng, b, 6), D = random_unit_rows(rng, b, 6);
    std::vector<double> probs(b), y(b);
    for (std::size_t i = 0; i < b; ++i) {
      probs[i] = rng.uniform(0.05, 0.95);
      y[i] = rng.bernoulli(0.6) ? 1.0 : 0.0;
    }
    const double lambda = rng.uniform(0.0, 2.0), tau = rng.uniform(0.05, 1.0);
    ValueGraph g;
    auto lt = compute_loss(g, g.constant(P), g.constant(R), g.constant(D), g.constant(Tensor::vector(probs)),
                           Tensor::vector(y), {.lambda = lambda, .tau = tau});
    EXPECT_NEAR(g.value(lt.total).item(), loss_transcription(P, R, D, probs, y, lambda, tau), 1e-12);
  }
}

TEST(Loss, LambdaZeroIsExactlyMeanBce) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    const std::size_t b = 1 + rng.below(16);
    std::vector<double> probs(b), y(b);
    for (std::size_t i = 0; i < b; ++i) {
      probs[i] = rng.uniform(0.01, 0.99);
      y[i] = rng.bernoulli(0.5);
    }
    double expected = 0;
    for (std::size_t i = 0; i < b; ++i) expected += -(y[i] * std::log(probs[i]) + (1 - y[i]) * std::log(1 - probs[i]));
    expected /= static_cast<double>(b);
    ValueGraph g;
    Var e = g.constant(random_unit_rows(rng, b, 3));
    auto lt = compute_loss(g, e, e, e, g.constant(Tensor::vector(probs)), Tensor::vector(y), {.lambda = 0.0});
    EXPECT_DOUBLE_EQ(g.value(lt.total).item(), expected);
  }
}

TEST(Loss, CompositeGradientMatchesFiniteDifferences) {
  Rng rng(31);
  for (int inst = 0; inst < 100;) {
    const auto res = gc::composite_loss_instance(rng);
    if (!res) continue;
    EXPECT_LE(res->max_rel_error, 1e-5) << "instance " << inst << " param " << res->worst_param;
    ++inst;
  }
}

TEST(Training, BalanceIsOneToOne) {
  auto pairs = separable_pairs(300, 2);
  auto bal = balance_pairs(pairs, 5);
  std::size_t pos = 0;
  for (auto& p : bal) pos += p.label == 1.0;
  EXPECT_EQ(pos * 2, bal.size());
  EXPECT_EQ(balance_pairs(pairs, 5).size(), bal.size());
}

TEST(Training, EffectiveBatchBookkeeping) {
  TrainConfig cfg{.per_worker_batch_size = 16, .grad_accumulation_steps = 8, .worker_count = 1};
  EXPECT_EQ(cfg.effective_batch_size(), 128u);
}

TEST(Training, SeparableSetReachesHighAuc) {
  auto train = separable_pairs(200, 11);
  auto val = separable_pairs(200, 12);
  BiEncoderModel m({.vocab_size = 1024, .dim = 16}, 1);
  EncoderTrainOptions opts;
  opts.loss.lambda = 0.0;
  opts.batch = {.per_worker_batch_size = 8, .grad_accumulation_steps = 1, .worker_count = 1, .seed = 3};
  opts.optimizer = {.learning_rate = 0.02, .warmup_steps = 0};
  opts.epochs = 1;
  auto res = train_encoder(m, train, val, opts);
  EXPECT_GE(evaluate_auc(m, val), 0.95);
  EXPECT_EQ(res.best_val_auc, evaluate_auc(m, val));
}

TEST(Training, ReproducibleUnderSeed) {
  auto train = separable_pairs(120, 21);
  auto val = separable_pairs(60, 22);
  auto run = [&] {
    BiEncoderModel m({.vocab_size = 256, .dim = 8}, 4);
    EncoderTrainOptions opts;
    opts.batch = {.per_worker_batch_size = 8, .grad_accumulation_steps = 2, .worker_count = 1, .seed = 9};
    opts.optimizer = {.learning_rate = 0.01};
    train_encoder(m, train, val, opts);
    return core::to_named(m.params());
  };
  auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].second, b[i].second) << a[i].first;
}

TEST(Training, FrozenEncoderOnlyMovesHead) {
  auto train = separable_pairs(64, 5);
  BiEncoderModel m({.vocab_size = 256, .dim = 8}, 4);
  const Tensor before = m.params().value(m.params().require("enc.token"));
  EncoderTrainOptions opts;
  opts.freeze_encoder = true;
  opts.batch = {.per_worker_batch_size = 8, .seed = 1};
  train_encoder(m, train, {}, opts);
  EXPECT_EQ(m.params().value(m.params().require("enc.token")), before);
}

TEST(Training, EmptyDatasetIsAnError) {
  BiEncoderModel m({.vocab_size = 64, .dim = 4}, 1);
  EXPECT_THROW(train_encoder(m, {}, {}, {}), Error);
}
