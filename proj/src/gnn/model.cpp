#include "star/gnn/model.hpp"

#include <cmath>

#include "star/core/checkpoint.hpp"
#include "star/core/error.hpp"
#include "star/core/rng.hpp"

namespace star::gnn {

using core::Shape;
using core::Tensor;
using core::ValueGraph;
using core::Var;
using graph::NodeIndex;

namespace {

Tensor normal_init(core::Rng& rng, Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = rng.normal(0.0, stddev);
  return t;
}

double he(std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

std::string layer_name(const std::string& prefix, std::size_t l, const char* what) {
  return prefix + ".layer" + std::to_string(l) + "." + what;
}

}  // namespace

GraphSchema GraphSchema::of(const graph::HeteroGraph& g) {
  return {g.text_dim(), g.id_slot_count(), g.categorical_cardinality()};
}

GnnModel::GnnModel(EncoderConfig cfg, GraphSchema schema, std::uint64_t seed)
    : cfg_(std::move(cfg)), schema_(std::move(schema)) {
  cfg_.validate();
  declare(seed);
}

std::string GnnModel::tower_prefix(Tower t) const {
  if (!cfg_.dual_encoder) return "tower";
  return t == Tower::source ? "src" : "dst";
}

void GnnModel::declare(std::uint64_t seed) {
  cat_offsets_.clear();
  cat_rows_ = 0;
  for (std::uint32_t c : schema_.categorical_cardinality) {
    cat_offsets_.push_back(cat_rows_);
    cat_rows_ += c;
  }
  core::Rng rng(core::derive_seed(seed, "gnn"));
  const std::size_t f = cfg_.feature_dim;
  if (cfg_.use_id && schema_.id_slots > 0)
    params_.add("id.table", normal_init(rng, {schema_.id_slots, f}, 1.0 / std::sqrt(static_cast<double>(f))));
  if (cfg_.use_categorical && cat_rows_ > 0)
    params_.add("cat.table", normal_init(rng, {cat_rows_, f}, 1.0 / std::sqrt(static_cast<double>(f))));
  if (cfg_.dual_encoder) {
    declare_tower("src", rng);
    declare_tower("dst", rng);
  } else {
    declare_tower("tower", rng);
  }
}

void GnnModel::declare_tower(const std::string& p, core::Rng& rng) {
  std::size_t in = 0;
  if (cfg_.use_text) in += schema_.text_dim;
  if (cfg_.use_id && schema_.id_slots > 0) in += cfg_.feature_dim;
  if (cfg_.use_categorical && cat_rows_ > 0) in += cfg_.feature_dim;
  if (in == 0) throw Error("gnn: the graph provides none of the enabled node features");
  const std::size_t d = cfg_.hidden();
  params_.add(p + ".in.weight", normal_init(rng, {in, d}, he(in)));
  params_.add(p + ".in.bias", Tensor(Shape{d}));
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    if (cfg_.pooling == Pooling::self_attention) {
      params_.add(layer_name(p, l, "query"), normal_init(rng, {d, d}, 1.0 / std::sqrt(static_cast<double>(d))));
      params_.add(layer_name(p, l, "key"), normal_init(rng, {d, d}, 1.0 / std::sqrt(static_cast<double>(d))));
    }
    params_.add(layer_name(p, l, "self"), normal_init(rng, {d, d}, he(2 * d)));
    params_.add(layer_name(p, l, "nbr"), normal_init(rng, {d, d}, he(2 * d)));
    params_.add(layer_name(p, l, "bias"), Tensor(Shape{d}));
  }
  if (cfg_.batch_norm) {
    params_.add(p + ".bn.gamma", Tensor(Shape{d}, 1.0));
    params_.add(p + ".bn.beta", Tensor(Shape{d}));
    params_.add(p + ".bn.running_mean", Tensor(Shape{d}), false);
    params_.add(p + ".bn.running_var", Tensor(Shape{d}, 1.0), false);
  }
  params_.add(p + ".out.weight", normal_init(rng, {d, cfg_.embedding_dim}, 1.0 / std::sqrt(static_cast<double>(d))));
  params_.add(p + ".out.bias", Tensor(Shape{cfg_.embedding_dim}));
}

void GnnModel::check_compatible(const graph::HeteroGraph& graph) const {
  if (cfg_.use_text && graph.text_dim() != schema_.text_dim) {
    throw ShapeError("gnn: graph text embeddings have dim " + std::to_string(graph.text_dim()) +
                     " but the model expects " + std::to_string(schema_.text_dim));
  }
  if (cfg_.use_id && graph.id_slot_count() > schema_.id_slots) {
    throw ShapeError("gnn: graph uses " + std::to_string(graph.id_slot_count()) + " id slots, model has " +
                     std::to_string(schema_.id_slots));
  }
  if (cfg_.use_categorical) {
    const auto& card = graph.categorical_cardinality();
    for (std::size_t f = 0; f < card.size(); ++f) {
      const std::uint32_t have = f < schema_.categorical_cardinality.size() ? schema_.categorical_cardinality[f] : 0;
      if (card[f] > have) {
        throw ShapeError("gnn: categorical feature " + std::to_string(f) + " has " + std::to_string(card[f]) +
                         " values, model supports " + std::to_string(have));
      }
    }
  }
}

Var GnnModel::input_features(ValueGraph& g, const graph::HeteroGraph& graph, std::span<const NodeIndex> nodes) const {
  const std::size_t n = nodes.size();
  std::vector<Var> parts;
  if (cfg_.use_text && schema_.text_dim > 0) {
    Tensor x(Shape{n, schema_.text_dim});
    for (std::size_t r = 0; r < n; ++r) {
      const auto& emb = graph.features(nodes[r]).text_embedding;
      if (emb.empty()) continue;
      if (emb.size() != schema_.text_dim) throw ShapeError("gnn: text embedding dim mismatch");
      for (std::size_t c = 0; c < emb.size(); ++c) x.at(r, c) = emb[c];
    }
    parts.push_back(g.constant(std::move(x)));
  }
  if (cfg_.use_id && schema_.id_slots > 0) {
    std::vector<std::int64_t> idx(n, -1);
    for (std::size_t r = 0; r < n; ++r) {
      const auto& slot = graph.features(nodes[r]).id_slot;
      if (!slot) continue;
      if (*slot >= schema_.id_slots) throw ShapeError("gnn: id slot " + std::to_string(*slot) + " out of range");
      idx[r] = *slot;
    }
    parts.push_back(g.gather_rows(g.parameter("id.table"), std::move(idx)));
  }
  if (cfg_.use_categorical && cat_rows_ > 0) {
    std::vector<std::int64_t> offsets{0}, flat;
    for (std::size_t r = 0; r < n; ++r) {
      for (auto [fid, vid] : graph.features(nodes[r]).categorical) {
        if (fid >= cat_offsets_.size() || vid >= schema_.categorical_cardinality[fid])
          throw ShapeError("gnn: categorical value (" + std::to_string(fid) + ", " + std::to_string(vid) +
                           ") out of range");
        flat.push_back(static_cast<std::int64_t>(cat_offsets_[fid] + vid));
      }
      offsets.push_back(static_cast<std::int64_t>(flat.size()));
    }
    parts.push_back(g.bag_mean(g.parameter("cat.table"), std::move(offsets), std::move(flat)));
  }
  return parts.size() == 1 ? parts[0] : g.concat(parts, 1);
}

Var pool_keys(ValueGraph& g, Var weights, Var keys, std::size_t heads, std::size_t slots) {
  return g.head_combine(weights, keys, heads, slots);
}

Var GnnModel::encode(ValueGraph& g, const graph::HeteroGraph& graph, const graph::SubgraphBatch& batch, Tower tower,
                     bool training) const {
  if (g.params() != &params_) throw Error("gnn encode: graph is not bound to this model's parameters");
  const std::size_t L = cfg_.num_layers;
  if (batch.hops < L) {
    throw Error("gnn encode: batch sampled " + std::to_string(batch.hops) + " hops, model has " + std::to_string(L) +
                " layers");
  }
  if (batch.seed_rows.empty()) throw Error("gnn encode: empty batch");
  const std::string p = tower_prefix(tower);
  const std::size_t heads = cfg_.pooling == Pooling::self_attention ? cfg_.attention_heads : 1;

  // rows are ordered by depth, so every layer works on a prefix
  auto rows_within = [&](std::size_t max_depth) {
    std::size_t n = 0;
    while (n < batch.nodes.size() && batch.depth[n] <= max_depth) ++n;
    return n;
  };

  Var h = g.leaky_relu(g.add(g.matmul(input_features(g, graph, batch.nodes), g.parameter(p + ".in.weight")),
                             g.parameter(p + ".in.bias")));
  std::size_t prev_rows = batch.nodes.size();
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t n = rows_within(L - l - 1);
    std::size_t slots = 1;
    for (std::size_t r = 0; r < n; ++r)
      slots = std::max(slots, batch.neighbors[r].size() + (cfg_.include_target_node ? 1 : 0));
    std::vector<std::int64_t> idx(n * slots, -1);
    std::vector<std::uint8_t> mask(n * heads * slots, 0);
    Tensor uniform(Shape{n, slots});
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t k = 0;
      if (cfg_.include_target_node) idx[r * slots + k++] = static_cast<std::int64_t>(r);
      for (const auto& link : batch.neighbors[r]) {
        if (link.row >= prev_rows) throw Error("gnn encode: neighbor row outside the previous layer");
        idx[r * slots + k++] = static_cast<std::int64_t>(link.row);
      }
      for (std::size_t hh = 0; hh < heads; ++hh)
        for (std::size_t j = 0; j < k; ++j) mask[(r * heads + hh) * slots + j] = 1;
      for (std::size_t j = 0; j < k; ++j) uniform.at(r, j) = 1.0 / static_cast<double>(k);
    }
    Var keys = g.gather_rows(h, idx);
    Var self = n == prev_rows ? h : g.gather_rows(h, [&] {
      std::vector<std::int64_t> first(n);
      for (std::size_t r = 0; r < n; ++r) first[r] = static_cast<std::int64_t>(r);
      return first;
    }());
    Var weights;
    if (cfg_.pooling == Pooling::self_attention) {
      Var q = g.matmul(self, g.parameter(layer_name(p, l, "query")));
      Var k = g.matmul(keys, g.parameter(layer_name(p, l, "key")));
      weights = g.row_softmax(g.head_scores(q, k, heads, slots), std::move(mask));
    } else {
      weights = g.constant(std::move(uniform));
    }
    Var pooled = pool_keys(g, weights, keys, heads, slots);
    Var pre = g.add(g.matmul(self, g.parameter(layer_name(p, l, "self"))),
                    g.matmul(pooled, g.parameter(layer_name(p, l, "nbr"))));
    h = g.leaky_relu(g.add(pre, g.parameter(layer_name(p, l, "bias"))));
    prev_rows = n;
  }
  if (cfg_.batch_norm) {
    h = g.batch_norm(h, g.parameter(p + ".bn.gamma"), g.parameter(p + ".bn.beta"),
                     params_.require(p + ".bn.running_mean"), params_.require(p + ".bn.running_var"), training);
  }
  Var out = g.add(g.matmul(h, g.parameter(p + ".out.weight")), g.parameter(p + ".out.bias"));
  std::vector<std::int64_t> seeds(batch.seed_rows.begin(), batch.seed_rows.end());
  return g.gather_rows(out, std::move(seeds));
}

void GnnModel::tie_towers() {
  if (!cfg_.dual_encoder) return;
  for (auto& e : params_.entries()) {
    if (e.name.rfind("dst.", 0) != 0) continue;
    e.value = params_.value(params_.require("src." + e.name.substr(4)));
  }
}

void GnnModel::save(const std::filesystem::path& path) const {
  core::NamedTensors t = core::to_named(params_);
  auto put = [&](const char* name, double v) { t.emplace_back(name, Tensor::scalar(v)); };
  put("config.embedding_dim", static_cast<double>(cfg_.embedding_dim));
  put("config.units_multiplier", static_cast<double>(cfg_.units_multiplier));
  put("config.attention_heads", static_cast<double>(cfg_.attention_heads));
  put("config.num_layers", static_cast<double>(cfg_.num_layers));
  put("config.pooling", cfg_.pooling == Pooling::mean ? 0.0 : 1.0);
  put("config.dual_encoder", cfg_.dual_encoder ? 1.0 : 0.0);
  put("config.include_target_node", cfg_.include_target_node ? 1.0 : 0.0);
  put("config.l2_reg", cfg_.l2_reg);
  put("config.batch_norm", cfg_.batch_norm ? 1.0 : 0.0);
  put("config.feature_dim", static_cast<double>(cfg_.feature_dim));
  put("config.use_text", cfg_.use_text ? 1.0 : 0.0);
  put("config.use_id", cfg_.use_id ? 1.0 : 0.0);
  put("config.use_categorical", cfg_.use_categorical ? 1.0 : 0.0);
  put("schema.text_dim", static_cast<double>(schema_.text_dim));
  put("schema.id_slots", static_cast<double>(schema_.id_slots));
  std::vector<double> card(schema_.categorical_cardinality.begin(), schema_.categorical_cardinality.end());
  t.emplace_back("schema.categorical", Tensor(Shape{card.size()}, card));
  core::save_checkpoint(path, t);
}

GnnModel GnnModel::load(const std::filesystem::path& path) {
  const core::NamedTensors t = core::load_checkpoint(path);
  auto num = [&](const char* name) { return core::find_tensor(t, name).item(); };
  auto count = [&](const char* name) { return static_cast<std::size_t>(num(name)); };
  EncoderConfig cfg;
  cfg.embedding_dim = count("config.embedding_dim");
  cfg.units_multiplier = count("config.units_multiplier");
  cfg.attention_heads = count("config.attention_heads");
  cfg.num_layers = count("config.num_layers");
  cfg.pooling = num("config.pooling") == 0.0 ? Pooling::mean : Pooling::self_attention;
  cfg.dual_encoder = num("config.dual_encoder") != 0.0;
  cfg.include_target_node = num("config.include_target_node") != 0.0;
  cfg.l2_reg = num("config.l2_reg");
  cfg.batch_norm = num("config.batch_norm") != 0.0;
  cfg.feature_dim = count("config.feature_dim");
  cfg.use_text = num("config.use_text") != 0.0;
  cfg.use_id = num("config.use_id") != 0.0;
  cfg.use_categorical = num("config.use_categorical") != 0.0;
  cfg.validate();
  GraphSchema schema;
  schema.text_dim = count("schema.text_dim");
  schema.id_slots = static_cast<std::uint32_t>(num("schema.id_slots"));
  for (double c : core::find_tensor(t, "schema.categorical").values())
    schema.categorical_cardinality.push_back(static_cast<std::uint32_t>(c));
  GnnModel m(cfg, schema);
  m.declare(0);
  core::assign_from(m.params_, t);
  return m;
}

}  // namespace star::gnn
