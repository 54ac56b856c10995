#include "star/eval/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "star/core/binary_io.hpp"
#include "star/core/error.hpp"
#include "star/core/rng.hpp"
#include "star/eval/pipeline.hpp"
#include "star/graph/graph_io.hpp"
#include "star/lifecycle/compat.hpp"

namespace star::eval {

namespace {

using Clock = std::chrono::steady_clock;
using core::Shape;
using core::Tensor;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct WorldData {
  std::vector<text::TrainingPair> pairs;
  std::vector<text::TextRecord> texts;
  std::filesystem::path nodes, edges;
};

WorldData load_world(const std::filesystem::path& dir) {
  if (dir.empty()) throw Error("this experiment needs a world directory (see gen-world)");
  WorldData w;
  w.nodes = dir / "nodes.tsv";
  w.edges = dir / "edges.tsv";
  for (const auto& p : {w.nodes, w.edges, dir / "pairs.jsonl", dir / "texts.jsonl"})
    if (!std::filesystem::exists(p)) throw Error("world file missing: " + p.string());
  w.pairs = text::load_pairs(dir / "pairs.jsonl");
  w.texts = text::load_texts(dir / "texts.jsonl");
  return w;
}

std::vector<CurvePoint> encoder_curve(const text::EncoderTrainResult& r) {
  std::vector<CurvePoint> out;
  for (const auto& c : r.trace) out.push_back({c.step, c.epoch, c.val_auc, c.train_loss, 0, 0});
  return out;
}

VariantResult gnn_variant(const std::string& name, const gnn::GnnTrainResult& r) {
  VariantResult v;
  v.name = name;
  v.metric = r.best_val_auc;
  v.steps = r.steps;
  v.sampled_edges = r.sampled_edges;
  for (const auto& p : r.trace) {
    v.curve.push_back({p.step, p.epoch, p.val_auc, p.train_loss, p.sample_count, p.sampled_edges});
    v.schedule.push_back(p.sample_count);
  }
  v.extra["best_step"] = r.best_step;
  v.extra["diverged"] = r.diverged;
  if (r.diverged) v.extra["divergence"] = r.divergence;
  return v;
}

// ---- encoder templates ----

struct EncoderSetup {
  std::vector<text::TrainingPair> train, val;
  text::BiEncoderConfig cfg;
  text::EncoderTrainOptions opts;
  std::uint64_t model_seed = 0;
};

EncoderSetup encoder_setup(const ExperimentRequest& req, const WorldData& w) {
  EncoderSetup s;
  const double val_fraction = req.settings.get("encoder.val_fraction", 0.1);
  text::split_by_time(w.pairs, val_fraction, s.train, s.val);
  s.cfg = encoder_config(req.settings, desk_encoder_config());
  s.opts = encoder_train_options(req.settings, desk_encoder_options());
  s.opts.batch.seed = core::derive_seed(req.seed, "encoder-batches");
  s.model_seed = core::derive_seed(req.seed, "encoder-init");
  return s;
}

VariantResult run_encoder(const std::string& name, const EncoderSetup& s, double lambda, bool frozen) {
  const auto t0 = Clock::now();
  text::BiEncoderModel model(s.cfg, s.model_seed);
  auto opts = s.opts;
  opts.loss.lambda = lambda;
  opts.freeze_encoder = frozen;
  if (frozen) model.set_encoder_trainable(false);
  const auto r = text::train_encoder(model, s.train, s.val, opts);
  VariantResult v;
  v.name = name;
  v.metric = r.best_val_auc;
  v.steps = r.steps;
  v.curve = encoder_curve(r);
  v.extra["lambda"] = lambda;
  v.extra["frozen_encoder"] = frozen;
  v.extra["train_pairs"] = r.train_pairs;
  v.extra["effective_batch"] = r.effective_batch;
  v.seconds = seconds_since(t0);
  return v;
}

void encoder_frozen_vs_finetuned(const ExperimentRequest& req, MetricsReport& rep) {
  const auto s = encoder_setup(req, load_world(req.world_dir));
  const double margin = req.settings.get("check.min_lift", 0.03);
  rep.variants.push_back(run_encoder("frozen", s, 0.0, true));
  rep.variants.push_back(run_encoder("finetuned_bce", s, 0.0, false));
  rep.checks.push_back({"finetuned_bce - frozen >= margin", rep.variants[1].metric, rep.variants[0].metric, margin});
}

void encoder_bce_vs_contrastive(const ExperimentRequest& req, MetricsReport& rep) {
  const auto s = encoder_setup(req, load_world(req.world_dir));
  const double margin = req.settings.get("check.min_lift", 0.0);
  const double lambda = s.opts.loss.lambda;
  rep.variants.push_back(run_encoder("bce", s, 0.0, false));
  rep.variants.push_back(run_encoder("bce_plus_contrastive", s, lambda, false));
  rep.checks.push_back({"bce_plus_contrastive - bce >= margin", rep.variants[1].metric, rep.variants[0].metric, margin});
}

// ---- world-graph GNN templates ----

struct GraphSetup {
  graph::HeteroGraph graph;
  gnn::EncoderConfig cfg;
  gnn::GnnTrainOptions opts;
  std::uint64_t model_seed = 0;
  nlohmann::ordered_json extra;
};

/// Text embeddings come from an encoder trained only on pairs observed up to
/// the GNN validation cutoff, so validation edges never leak through them.
GraphSetup world_graph_setup(const ExperimentRequest& req) {
  const WorldData w = load_world(req.world_dir);
  graph::GraphBuilder b;
  graph::read_nodes_tsv(w.nodes, b);
  graph::read_edges_tsv(w.edges, b);

  GraphSetup gs;
  gs.cfg = gnn_config(req.settings, desk_gnn_config());
  gs.opts = gnn_train_options(req.settings, desk_gnn_options());
  gs.opts.seed = core::derive_seed(req.seed, "gnn-train");
  gs.model_seed = core::derive_seed(req.seed, "gnn-init");
  const std::int64_t cutoff = gnn::validation_cutoff(b.build(), gs.opts.val_fraction);

  std::vector<text::TrainingPair> early;
  for (const auto& p : w.pairs)
    if (p.event_time <= cutoff) early.push_back(p);
  WorldData sub;
  sub.pairs = std::move(early);
  auto es = encoder_setup(req, sub);
  text::BiEncoderModel enc(es.cfg, es.model_seed);
  const auto er = text::train_encoder(enc, es.train, es.val, es.opts);
  attach_text_embeddings(b, enc, w.texts);
  gs.graph = b.build();
  gs.extra["time_cutoff"] = cutoff;
  gs.extra["text_encoder_val_auc"] = er.best_val_auc;
  gs.extra["text_encoder_pairs"] = es.train.size() + es.val.size();
  return gs;
}

VariantResult run_gnn(const std::string& name, const graph::HeteroGraph& g, gnn::EncoderConfig cfg,
                      const gnn::GnnTrainOptions& opts, std::uint64_t model_seed) {
  const auto t0 = Clock::now();
  gnn::GnnModel model(cfg, gnn::GraphSchema::of(g), model_seed);
  const auto r = gnn::train_gnn(model, g, opts);
  auto v = gnn_variant(name, r);
  v.extra["use_text"] = cfg.use_text;
  v.extra["use_id"] = cfg.use_id;
  v.extra["use_categorical"] = cfg.use_categorical;
  v.seconds = seconds_since(t0);
  return v;
}

void gnn_baseline_vs_text(const ExperimentRequest& req, MetricsReport& rep) {
  const auto gs = world_graph_setup(req);
  const double margin = req.settings.get("check.min_lift", 0.02);
  auto base = gs.cfg;
  base.use_text = false;
  auto full = gs.cfg;
  full.use_text = true;
  rep.variants.push_back(run_gnn("baseline", gs.graph, base, gs.opts, gs.model_seed));
  rep.variants.push_back(run_gnn("plus_text_embedding", gs.graph, full, gs.opts, gs.model_seed));
  rep.variants[1].extra.update(gs.extra);
  rep.checks.push_back({"plus_text_embedding - baseline >= margin", rep.variants[1].metric, rep.variants[0].metric, margin});
}

void gnn_minus_categorical(const ExperimentRequest& req, MetricsReport& rep) {
  const auto gs = world_graph_setup(req);
  const double tolerance = req.settings.get("check.max_drop", 0.02);
  auto full = gs.cfg;
  full.use_text = true;
  full.use_categorical = true;
  auto minus = full;
  minus.use_categorical = false;
  rep.variants.push_back(run_gnn("full", gs.graph, full, gs.opts, gs.model_seed));
  rep.variants.push_back(run_gnn("minus_categorical", gs.graph, minus, gs.opts, gs.model_seed));
  rep.variants[0].extra.update(gs.extra);
  rep.checks.push_back({"full - minus_categorical <= tolerance", rep.variants[0].metric, rep.variants[1].metric,
                        tolerance, true});
}

// ---- two-community templates ----

struct CommunitySetup {
  graph::HeteroGraph graph;
  gnn::EncoderConfig cfg;
  gnn::GnnTrainOptions opts;
  std::uint64_t model_seed = 0;
};

CommunitySetup community_setup(const ExperimentRequest& req, std::size_t epochs, double eval_every) {
  CommunitySetup s;
  auto tc = two_community_config(req.settings);
  tc.seed = core::derive_seed(req.seed, "two-community");
  s.graph = two_community_graph(tc);
  auto base = desk_gnn_config();
  base.use_id = true;
  s.cfg = gnn_config(req.settings, base);
  auto o = desk_gnn_options();
  o.epochs = epochs;
  o.sampling = gnn::AdaptiveSamplingConfig::fixed(10, eval_every);
  s.opts = gnn_train_options(req.settings, o);
  s.opts.seed = core::derive_seed(req.seed, "gnn-train");
  s.model_seed = core::derive_seed(req.seed, "gnn-init");
  return s;
}

void two_community_learnability(const ExperimentRequest& req, MetricsReport& rep) {
  const auto s = community_setup(req, 20, 0.1);
  const double floor = req.settings.get("check.min_trained_auc", 0.85);
  const double band = req.settings.get("check.untrained_band", 0.05);

  const auto t0 = Clock::now();
  gnn::GnnModel untrained(s.cfg, gnn::GraphSchema::of(s.graph), s.model_seed);
  const auto cutoff = gnn::validation_cutoff(s.graph, s.opts.val_fraction);
  std::vector<graph::EdgeTypeId> types;
  for (graph::EdgeTypeId t = 0; t < s.graph.num_edge_types(); ++t) types.push_back(t);
  VariantResult u;
  u.name = "untrained";
  for (const auto& task : s.opts.tasks) {
    const auto split = gnn::split_task(s.graph, task, cutoff, s.opts.seed);
    u.metric = gnn::evaluate_task(untrained, s.graph, split,
                                  gnn::inference_sampler(untrained, s.opts.sampling.alpha, cutoff), types);
    break;  // headline task only
  }
  u.seconds = seconds_since(t0);
  rep.variants.push_back(u);
  rep.variants.push_back(run_gnn("trained", s.graph, s.cfg, s.opts, s.model_seed));
  rep.checks.push_back({"trained - floor >= 0", rep.variants[1].metric, floor, 0.0});
  rep.checks.push_back({"|untrained - 0.5| <= band", std::abs(u.metric - 0.5), 0.0, band, true});
}

// Coarse validation points: per-eval AUC noise otherwise reads as stalls and
// grows the count to alpha early.
void adaptive_vs_fixed(const ExperimentRequest& req, MetricsReport& rep) {
  const auto s = community_setup(req, 40, 1.0);
  const double tolerance = req.settings.get("check.max_auc_gap", 0.005);
  const double savings = req.settings.get("check.min_edge_savings", 0.2);
  auto fixed = s.opts;
  fixed.sampling = gnn::AdaptiveSamplingConfig::fixed(s.opts.sampling.alpha, s.opts.sampling.eval_every);
  auto adaptive = s.opts;
  adaptive.sampling.sigma = req.settings.get("adaptive.sigma", std::size_t{1});
  adaptive.sampling.delta = req.settings.get("adaptive.delta", std::size_t{1});
  adaptive.sampling.improvement_threshold = req.settings.get("adaptive.improvement_threshold", 1e-3);
  adaptive.sampling.validate();
  rep.variants.push_back(run_gnn("fixed_alpha", s.graph, s.cfg, fixed, s.model_seed));
  rep.variants.push_back(run_gnn("adaptive", s.graph, s.cfg, adaptive, s.model_seed));
  const auto& f = rep.variants[0];
  const auto& a = rep.variants[1];
  rep.checks.push_back({"fixed_alpha - adaptive <= tolerance", f.metric, a.metric, tolerance, true});
  const double ratio = f.sampled_edges ? static_cast<double>(a.sampled_edges) / static_cast<double>(f.sampled_edges) : 1.0;
  rep.checks.push_back({"1 - adaptive_edges / fixed_edges >= savings", 1.0 - ratio, 0.0, savings});
}

// ---- compatibility template ----

void compat_parity(const ExperimentRequest& req, MetricsReport& rep) {
  const std::size_t rows = req.settings.get("compat.rows", std::size_t{2000});
  const std::size_t m = req.settings.get("compat.new_dim", std::size_t{24});
  const std::size_t n = req.settings.get("compat.prev_dim", std::size_t{16});
  const double noise = req.settings.get("compat.noise", 0.01);
  const std::size_t probes = req.settings.get("compat.probes", std::size_t{100});
  const std::size_t candidates = req.settings.get("compat.candidates", std::size_t{50});
  const double max_err = req.settings.get("check.max_weight_error", 1e-6);
  const double min_tau = req.settings.get("check.min_tau", 0.99);
  if (rows == 0 || m == 0 || n == 0 || probes == 0 || candidates < 2 || candidates > rows)
    throw Error("compat_parity: need rows, dims, probes >= 1 and 2 <= candidates <= rows");

  core::Rng rng(core::derive_seed(req.seed, "compat"));
  Tensor w(Shape{n, m}), e_new(Shape{rows, m});
  for (auto& x : w.values()) x = rng.normal() / std::sqrt(static_cast<double>(m));
  for (auto& x : e_new.values()) x = rng.normal();
  Tensor clean(Shape{rows, n}), noisy(Shape{rows, n});
  double ms = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += w.at(i, j) * e_new.at(r, j);
      clean.at(r, i) = acc;
      ms += acc * acc;
    }
  // noise stdev is a fraction of the target RMS
  const double sd = noise * std::sqrt(ms / static_cast<double>(rows * n));
  for (std::size_t k = 0; k < clean.numel(); ++k) noisy[k] = clean[k] + sd * rng.normal();
  Tensor q(Shape{probes, n});
  for (auto& x : q.values()) x = rng.normal();
  std::vector<std::size_t> cand;
  for (std::size_t c : rng.sample_without_replacement(rows, candidates)) cand.push_back(c);

  auto fit = [&](const std::string& name, const Tensor& target) {
    const auto t0 = Clock::now();
    const auto t = lifecycle::fit_backward_transform(e_new, target, {});
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) err = std::max(err, std::abs(t.weight.at(i, j) - w.at(i, j)));
    const auto cr = lifecycle::evaluate_compat(t, e_new, target, q, cand);
    VariantResult v;
    v.name = name;
    v.metric = cr.mean_tau;
    v.extra["max_weight_error"] = err;
    v.extra["residual_rms"] = cr.residual_rms;
    v.extra["mean_tau"] = cr.mean_tau;
    v.extra["min_tau"] = cr.min_tau;
    v.extra["probes"] = cr.probes;
    v.extra["degenerate_probes"] = cr.degenerate;
    v.seconds = seconds_since(t0);
    return v;
  };
  rep.variants.push_back(fit("planted_exact", clean));
  rep.variants.push_back(fit("planted_noisy", noisy));
  rep.checks.push_back({"max_weight_error (exact) <= limit",
                        rep.variants[0].extra["max_weight_error"].get<double>(), 0.0, max_err, true});
  rep.checks.push_back({"mean_tau (noisy) >= min_tau", rep.variants[1].metric, min_tau, 0.0});
}

using Runner = std::function<void(const ExperimentRequest&, MetricsReport&)>;

const std::vector<std::pair<std::string, Runner>>& registry() {
  static const std::vector<std::pair<std::string, Runner>> r = {
      {"encoder_frozen_vs_finetuned", encoder_frozen_vs_finetuned},
      {"encoder_bce_vs_bce_plus_contrastive", encoder_bce_vs_contrastive},
      {"gnn_baseline_vs_plus_text_embedding", gnn_baseline_vs_text},
      {"gnn_minus_categorical", gnn_minus_categorical},
      {"adaptive_vs_fixed_sampling", adaptive_vs_fixed},
      {"compat_parity", compat_parity},
      {"two_community_learnability", two_community_learnability},
  };
  return r;
}

std::string fixed(double v, int prec) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

// Fixed point unless that would round a nonzero value away.
std::string number(double v) {
  if (v != 0.0 && std::abs(v) < 5e-4) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
  }
  return fixed(v, 4);
}

}  // namespace

std::vector<std::string> experiment_templates() {
  std::vector<std::string> out;
  for (const auto& [name, fn] : registry()) out.push_back(name);
  return out;
}

const VariantResult& MetricsReport::variant(const std::string& name) const {
  for (const auto& v : variants)
    if (v.name == name) return v;
  throw Error("report has no variant '" + name + "'");
}

bool MetricsReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed(); });
}

MetricsReport run_experiment(const ExperimentRequest& req) {
  const auto& reg = registry();
  const auto it = std::find_if(reg.begin(), reg.end(), [&](const auto& e) { return e.first == req.name; });
  if (it == reg.end()) {
    std::string names;
    for (const auto& [n, fn] : reg) names += (names.empty() ? "" : ", ") + n;
    throw Error("unknown experiment template '" + req.name + "'; available: " + names);
  }
  const auto t0 = Clock::now();
  MetricsReport rep;
  rep.experiment = req.name;
  rep.seed = req.seed;
  it->second(req, rep);
  rep.settings = req.settings.used();
  rep.ignored_settings = req.settings.unused();
  rep.seconds = seconds_since(t0);
  return rep;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["experiment"] = experiment;
  j["seed"] = seed;
  j["settings"] = settings;
  if (!ignored_settings.empty()) j["ignored_settings"] = ignored_settings;
  j["variants"] = nlohmann::ordered_json::array();
  for (const auto& v : variants) {
    nlohmann::ordered_json vj;
    vj["name"] = v.name;
    vj["metric"] = v.metric;
    vj["steps"] = v.steps;
    vj["sampled_edges"] = v.sampled_edges;
    vj["extra"] = v.extra;
    if (!v.schedule.empty()) vj["sample_count_trace"] = v.schedule;
    vj["curve"] = nlohmann::ordered_json::array();
    for (const auto& c : v.curve)
      vj["curve"].push_back({{"step", c.step},
                             {"epoch", c.epoch},
                             {"val_auc", c.val_auc},
                             {"train_loss", c.train_loss},
                             {"sample_count", c.sample_count},
                             {"sampled_edges", c.sampled_edges}});
    j["variants"].push_back(std::move(vj));
  }
  j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : checks)
    j["checks"].push_back({{"name", c.name},
                           {"lhs", c.lhs},
                           {"rhs", c.rhs},
                           {"difference", c.lhs - c.rhs},
                           {"margin", c.margin},
                           {"at_most", c.at_most},
                           {"passed", c.passed()}});
  j["passed"] = passed();
  return j;
}

std::string MetricsReport::render_table() const {
  std::ostringstream os;
  os << "experiment: " << experiment << "  seed: " << seed << "\n\n";
  std::size_t w = 7;
  for (const auto& v : variants) w = std::max(w, v.name.size());
  auto pad = [](std::string s, std::size_t n) {
    s.resize(std::max(n, s.size()), ' ');
    return s;
  };
  os << pad("variant", w) << "  " << pad("metric", 8) << "  " << pad("steps", 7) << "  sampled_edges\n";
  os << std::string(w + 35, '-') << "\n";
  for (const auto& v : variants)
    os << pad(v.name, w) << "  " << pad(fixed(v.metric, 4), 8) << "  " << pad(std::to_string(v.steps), 7) << "  "
       << v.sampled_edges << "\n";
  os << "\nchecks:\n";
  for (const auto& c : checks)
    os << "  [" << (c.passed() ? "PASS" : "FAIL") << "] " << c.name << "  (lhs " << number(c.lhs) << ", rhs "
       << number(c.rhs) << ", diff " << number(c.lhs - c.rhs) << ", margin " << number(c.margin) << ")\n";
  if (!ignored_settings.empty()) {
    os << "\nignored settings:";
    for (const auto& k : ignored_settings) os << " " << k;
    os << "\n";
  }
  return os.str();
}

void write_report(const MetricsReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  core::write_file_atomic(dir / "report.json", r.to_json().dump(2) + "\n");
  core::write_file_atomic(dir / "report.txt", r.render_table());
  nlohmann::ordered_json t;
  t["total_seconds"] = r.seconds;
  for (const auto& v : r.variants) t["variants"][v.name] = v.seconds;
  core::write_file_atomic(dir / "timing.json", t.dump(2) + "\n");
}

}  // namespace star::eval
