#include "star/text/bi_encoder.hpp"

#include <cmath>

#include "star/core/checkpoint.hpp"
#include "star/core/error.hpp"
#include "star/core/rng.hpp"

namespace star::text {

using core::Shape;
using core::Tensor;
using core::ValueGraph;
using core::Var;

namespace {

constexpr std::size_t kEmbedBatch = 256;

Tensor normal_init(core::Rng& rng, Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = rng.normal(0.0, stddev);
  return t;
}

std::string layer_name(std::size_t l, const char* what) {
  return "enc.layer" + std::to_string(l) + "." + what;
}

}  // namespace

void BiEncoderConfig::validate() const {
  if (vocab_size == 0 || dim == 0 || layers == 0 || max_tokens == 0 || head_hidden == 0) {
    throw Error("bi-encoder config: vocab_size, dim, layers, max_tokens and head_hidden must be positive");
  }
}

BiEncoderModel::BiEncoderModel(BiEncoderConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  declare(seed);
}

void BiEncoderModel::declare(std::uint64_t seed) {
  core::Rng rng(core::derive_seed(seed, "bi-encoder"));
  const std::size_t d = cfg_.dim;
  params_.add("enc.token", normal_init(rng, {cfg_.vocab_size, d}, 1.0));
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    params_.add(layer_name(l, "weight"), normal_init(rng, {d, d}, std::sqrt(2.0 / static_cast<double>(d))));
    params_.add(layer_name(l, "bias"), Tensor(Shape{d}));
  }
  params_.add("head.fc1.weight",
              normal_init(rng, {2 * d, cfg_.head_hidden}, std::sqrt(2.0 / static_cast<double>(2 * d))));
  params_.add("head.fc1.bias", Tensor(Shape{cfg_.head_hidden}));
  params_.add("head.fc2.weight",
              normal_init(rng, {cfg_.head_hidden, 1}, std::sqrt(1.0 / static_cast<double>(cfg_.head_hidden))));
  params_.add("head.fc2.bias", Tensor(Shape{1}));
}

TokenSeq BiEncoderModel::tokens(TextKind kind, std::string_view text) const {
  std::string full(kind_prefix(kind));
  full += text;
  return tokenize(full, cfg_.tokenizer());
}

Var BiEncoderModel::encode(ValueGraph& g, std::span<const TokenSeq* const> seqs) const {
  if (g.params() != &params_) throw Error("encode: graph is not bound to this model's parameters");
  std::vector<std::int64_t> offsets{0}, flat;
  for (const TokenSeq* s : seqs) {
    flat.insert(flat.end(), s->begin(), s->end());
    offsets.push_back(static_cast<std::int64_t>(flat.size()));
  }
  Var h = g.bag_mean(g.parameter("enc.token"), std::move(offsets), std::move(flat));
  Var acc;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    h = g.leaky_relu(g.add(g.matmul(h, g.parameter(layer_name(l, "weight"))), g.parameter(layer_name(l, "bias"))));
    acc = acc.valid() ? g.add(acc, h) : h;
  }
  if (cfg_.layers > 1) acc = g.scale(acc, 1.0 / static_cast<double>(cfg_.layers));
  return g.l2_normalize(acc);
}

Var BiEncoderModel::head(ValueGraph& g, Var profile, Var resume, Var document) const {
  const Shape ps = g.value(profile).shape();
  if (ps != g.value(resume).shape() || ps != g.value(document).shape() || ps.size() != 2 || ps[1] != cfg_.dim) {
    throw ShapeError("predict_pair: embedding shapes " + core::shape_str(ps) + ", " +
                           core::shape_str(g.value(resume).shape()) + ", " +
                           core::shape_str(g.value(document).shape()) + " do not match dim " +
                           std::to_string(cfg_.dim));
  }
  const Var parts[] = {g.mul(profile, document), g.mul(resume, document)};
  Var x = g.concat(parts, 1);
  Var h = g.leaky_relu(g.add(g.matmul(x, g.parameter("head.fc1.weight")), g.parameter("head.fc1.bias")));
  Var logit = g.add(g.matmul(h, g.parameter("head.fc2.weight")), g.parameter("head.fc2.bias"));
  return g.sigmoid(g.reshape(logit, Shape{ps[0]}));
}

ValueGraph BiEncoderModel::inference_graph() const {
  // forward-only: parameters are read, never written
  return ValueGraph(const_cast<core::ParameterSet*>(&params_));
}

std::vector<double> BiEncoderModel::embed(TextKind kind, std::string_view text) const {
  const TokenSeq seq = tokens(kind, text);
  const TokenSeq* p = &seq;
  ValueGraph g = inference_graph();
  const Tensor& v = g.value(encode(g, std::span<const TokenSeq* const>(&p, 1)));
  return {v.values().begin(), v.values().end()};
}

std::vector<double> BiEncoderModel::embed(const TextRecord& record) const { return embed(record.kind, record.text); }

Tensor BiEncoderModel::embed_many(TextKind kind, std::span<const std::string> texts) const {
  Tensor out(Shape{texts.size(), cfg_.dim});
  for (std::size_t start = 0; start < texts.size(); start += kEmbedBatch) {
    const std::size_t end = std::min(texts.size(), start + kEmbedBatch);
    std::vector<TokenSeq> seqs;
    seqs.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) seqs.push_back(tokens(kind, texts[i]));
    std::vector<const TokenSeq*> ptrs;
    for (const auto& s : seqs) ptrs.push_back(&s);
    ValueGraph g = inference_graph();
    const Tensor& v = g.value(encode(g, ptrs));
    std::copy(v.values().begin(), v.values().end(), out.data() + start * cfg_.dim);
  }
  return out;
}

double BiEncoderModel::predict_pair(std::span<const double> profile, std::span<const double> resume,
                                    std::span<const double> document) const {
  auto row = [&](std::span<const double> v) {
    return Tensor(Shape{1, v.size()}, std::vector<double>(v.begin(), v.end()));
  };
  ValueGraph g = inference_graph();
  return g.value(head(g, g.constant(row(profile)), g.constant(row(resume)), g.constant(row(document))))[0];
}

void BiEncoderModel::set_encoder_trainable(bool trainable) { params_.set_trainable_prefix("enc.", trainable); }

void BiEncoderModel::save(const std::filesystem::path& path) const {
  core::NamedTensors t = core::to_named(params_);
  t.emplace_back("config.vocab_size", Tensor::scalar(static_cast<double>(cfg_.vocab_size)));
  t.emplace_back("config.dim", Tensor::scalar(static_cast<double>(cfg_.dim)));
  t.emplace_back("config.layers", Tensor::scalar(static_cast<double>(cfg_.layers)));
  t.emplace_back("config.max_tokens", Tensor::scalar(static_cast<double>(cfg_.max_tokens)));
  t.emplace_back("config.head_hidden", Tensor::scalar(static_cast<double>(cfg_.head_hidden)));
  core::save_checkpoint(path, t);
}

BiEncoderModel BiEncoderModel::load(const std::filesystem::path& path) {
  const core::NamedTensors t = core::load_checkpoint(path);
  auto get = [&](const char* name) { return static_cast<std::size_t>(core::find_tensor(t, name).item()); };
  BiEncoderConfig cfg;
  cfg.vocab_size = get("config.vocab_size");
  cfg.dim = get("config.dim");
  cfg.layers = get("config.layers");
  cfg.max_tokens = get("config.max_tokens");
  cfg.head_hidden = get("config.head_hidden");
  cfg.validate();
  BiEncoderModel m(cfg);
  m.declare(0);
  core::assign_from(m.params_, t);
  return m;
}

}  // namespace star::text
