// star: command-line front end for the synthetic world, encoder, graph,
// GNN, compatibility and serving pipelines.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "star/core/binary_io.hpp"
#include "star/core/error.hpp"
#include "star/core/rng.hpp"
#include "star/eval/auc.hpp"
#include "star/eval/experiments.hpp"
#include "star/eval/pipeline.hpp"
#include "star/eval/world.hpp"
#include "star/gnn/training.hpp"
#include "star/graph/graph_io.hpp"
#include "star/lifecycle/compat.hpp"
#include "star/lifecycle/registry.hpp"
#include "star/serving/digest.hpp"
#include "star/serving/ingest.hpp"
#include "star/serving/store.hpp"

using namespace star;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> set;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir = ".";
};

struct Context {
  eval::Settings settings;
  std::uint64_t seed = 0;
  fs::path out;

  fs::path output(const std::string& name) const { return out / name; }
};

Context make_context(const Globals& g) {
  Context c;
  if (!g.config.empty()) c.settings = eval::Settings::from_file(g.config);
  for (const auto& kv : g.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw Error("--set expects key=value, got '" + kv + "'");
    c.settings.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.seed = g.seed_given ? g.seed : c.settings.get_u64("seed", 0);
  c.out = g.out_dir;
  fs::create_directories(c.out);
  return c;
}

void write_json(const fs::path& p, const json& j) { core::write_file_atomic(p, j.dump(2) + "\n"); }

void warn_unused(const std::vector<std::string>& keys) {
  if (keys.empty()) return;
  std::cerr << "note: unused settings:";
  for (const auto& k : keys) std::cerr << ' ' << k;
  std::cerr << '\n';
}

void warn_unused(const Context& c) { warn_unused(c.settings.unused()); }

json trace_json(const text::EncoderTrainResult& r) {
  json t = json::array();
  for (const auto& c : r.trace)
    t.push_back({{"step", c.step}, {"epoch", c.epoch}, {"val_auc", c.val_auc}, {"train_loss", c.train_loss}});
  return t;
}

std::uint64_t parse_key(const std::string& s) {
  // "<namespace>:<id>" or a raw 64-bit key
  const auto colon = s.find(':');
  if (colon == std::string::npos) return std::stoull(s);
  return serving::pack_key(serving::parse_key_namespace(s.substr(0, colon)), std::stoull(s.substr(colon + 1)));
}

std::vector<float> store_row(const serving::EmbeddingStore& s, std::uint64_t key) {
  const std::span<const float> v = *s.lookup(key);
  return {v.begin(), v.end()};
}

// ---- subcommands ----

void cmd_gen_world(const Context& c) {
  auto cfg = eval::world_config(c.settings);
  cfg.seed = c.seed;
  const auto w = eval::generate_world(cfg);
  eval::write_world(w, c.out);
  std::cout << "world: " << w.members.size() << " members, " << w.jobs.size() << " jobs, " << w.pairs.size()
            << " pairs, " << w.interactions.size() << " interactions, " << w.events.size() << " events -> "
            << c.out.string() << "\n";
}

void cmd_train_encoder(const Context& c, const std::string& pairs_path, bool freeze) {
  const auto pairs = text::load_pairs(pairs_path);
  std::vector<text::TrainingPair> train, val;
  text::split_by_time(pairs, c.settings.get("encoder.val_fraction", 0.1), train, val);
  const auto cfg = eval::encoder_config(c.settings, eval::desk_encoder_config());
  auto opts = eval::encoder_train_options(c.settings, eval::desk_encoder_options());
  opts.batch.seed = core::derive_seed(c.seed, "encoder-batches");
  opts.freeze_encoder = freeze;
  text::BiEncoderModel model(cfg, core::derive_seed(c.seed, "encoder-init"));
  if (freeze) model.set_encoder_trainable(false);
  const auto r = text::train_encoder(model, train, val, opts);
  model.save(c.output("encoder.ckpt"));
  json rep;
  rep["best_val_auc"] = r.best_val_auc;
  rep["best_step"] = r.best_step;
  rep["steps"] = r.steps;
  rep["train_pairs"] = r.train_pairs;
  rep["val_pairs"] = val.size();
  rep["effective_batch"] = r.effective_batch;
  rep["seed"] = c.seed;
  rep["settings"] = c.settings.used();
  rep["trace"] = trace_json(r);
  write_json(c.output("encoder_report.json"), rep);
  warn_unused(c);
  std::cout << "encoder: best val AUC " << r.best_val_auc << " after " << r.steps << " steps -> "
            << c.output("encoder.ckpt").string() << "\n";
}

void cmd_build_graph(const Context& c, const std::string& nodes, const std::string& edges, const std::string& texts,
                     const std::string& encoder) {
  graph::GraphBuilder b;
  graph::read_nodes_tsv(nodes, b);
  graph::read_edges_tsv(edges, b);
  if (!texts.empty()) {
    if (encoder.empty()) throw Error("build-graph: --texts needs --encoder");
    eval::attach_text_embeddings(b, text::BiEncoderModel::load(encoder), text::load_texts(texts));
  }
  const auto g = b.build();
  graph::save_graph(c.output("graph.stgr"), g);
  json s;
  s["nodes"] = g.num_nodes();
  s["text_dim"] = g.text_dim();
  s["id_slots"] = g.id_slot_count();
  s["categorical_cardinality"] = g.categorical_cardinality();
  for (graph::EdgeTypeId t = 0; t < g.num_edge_types(); ++t)
    s["edge_types"][g.edge_type(t).key] = g.edge_count(t);
  write_json(c.output("graph_summary.json"), s);
  std::cout << "graph: " << g.num_nodes() << " nodes, " << g.num_edge_types() << " edge types -> "
            << c.output("graph.stgr").string() << "\n";
}

void cmd_train_gnn(const Context& c, const std::string& graph_path) {
  const auto g = graph::load_graph(graph_path);
  const auto cfg = eval::gnn_config(c.settings, eval::desk_gnn_config());
  auto opts = eval::gnn_train_options(c.settings, eval::desk_gnn_options());
  opts.seed = core::derive_seed(c.seed, "gnn-train");
  gnn::GnnModel model(cfg, gnn::GraphSchema::of(g), core::derive_seed(c.seed, "gnn-init"));
  const auto r = gnn::train_gnn(model, g, opts);
  model.save(c.output("gnn.ckpt"));
  json rep;
  rep["best_val_auc"] = r.best_val_auc;
  rep["best_step"] = r.best_step;
  rep["steps"] = r.steps;
  rep["sampled_edges"] = r.sampled_edges;
  rep["time_cutoff"] = r.time_cutoff;
  rep["diverged"] = r.diverged;
  if (r.diverged) rep["divergence"] = r.divergence;
  rep["tasks"] = json::parse(gnn::task_spec_json(opts.tasks));
  rep["seed"] = c.seed;
  rep["settings"] = c.settings.used();
  rep["trace"] = json::array();
  for (const auto& p : r.trace) {
    json pj{{"step", p.step},
            {"epoch", p.epoch},
            {"val_auc", p.val_auc},
            {"sample_count", p.sample_count},
            {"improving", p.improving},
            {"sampled_edges", p.sampled_edges},
            {"train_loss", p.train_loss}};
    json ta = json::array();
    for (double a : p.task_auc) ta.push_back(std::isnan(a) ? json(nullptr) : json(a));
    pj["task_auc"] = ta;
    rep["trace"].push_back(pj);
  }
  rep["step_loss"] = r.step_loss;
  write_json(c.output("gnn_report.json"), rep);
  warn_unused(c);
  std::cout << "gnn: best val AUC " << r.best_val_auc << " after " << r.steps << " steps"
            << (r.diverged ? " (stopped: " + r.divergence + ")" : "") << " -> " << c.output("gnn.ckpt").string()
            << "\n";
}

void cmd_infer(const Context& c, const std::string& graph_path, const std::string& model_path,
               const std::vector<std::string>& types, const std::string& ids_path, const std::string& tower,
               std::uint64_t version) {
  const auto g = graph::load_graph(graph_path);
  const auto model = gnn::GnnModel::load(model_path);
  std::vector<std::pair<graph::NodeType, std::uint64_t>> req;
  if (!ids_path.empty()) {
    // "<node_type>\t<local_id>" per line
    std::ifstream in(ids_path);
    if (!in) throw Error("cannot open " + ids_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string t;
      std::uint64_t id;
      if (!(ls >> t >> id)) throw FormatError(ids_path + ": expected '<node_type> <id>' in '" + line + "'");
      req.emplace_back(graph::parse_node_type(t), id);
    }
  } else {
    for (const auto& t : types)
      for (auto n : g.nodes_of_type(graph::parse_node_type(t))) req.emplace_back(g.type(n), g.local_id(n));
  }
  const std::size_t alpha = c.settings.get("gnn.alpha", std::size_t{5});
  const auto r = gnn::infer(model, g, req, gnn::parse_tower(tower), alpha);
  serving::EmbeddingStore store(version, static_cast<std::uint32_t>(r.dim));
  for (std::size_t i = 0; i < r.ids.size(); ++i)
    store.upsert(serving::pack_key(serving::parse_key_namespace(graph::node_type_name(r.types[i])), r.ids[i]),
                 std::span<const float>(r.data.data() + i * r.dim, r.dim));
  store.save(c.output("embeddings.stes"));
  write_json(c.output("infer_summary.json"),
             {{"embedded", r.ids.size()}, {"unknown", r.unknown}, {"dim", r.dim}, {"version", version},
              {"tower", tower}, {"alpha", alpha}});
  warn_unused(c);
  std::cout << "infer: " << r.ids.size() << " embeddings (" << r.unknown << " unknown ids) -> "
            << c.output("embeddings.stes").string() << "\n";
}

/// Rows of the keys present in both stores, ascending key order.
void paired_rows(const serving::EmbeddingStore& a, const serving::EmbeddingStore& b, core::Tensor& ra,
                 core::Tensor& rb) {
  std::vector<std::uint64_t> keys;
  for (auto k : a.keys())
    if (b.contains(k)) keys.push_back(k);
  if (keys.empty()) throw Error("fit-compat: the two stores share no keys");
  ra = core::Tensor(core::Shape{keys.size(), a.dim()});
  rb = core::Tensor(core::Shape{keys.size(), b.dim()});
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto va = store_row(a, keys[i]), vb = store_row(b, keys[i]);
    std::copy(va.begin(), va.end(), ra.row(i).begin());
    std::copy(vb.begin(), vb.end(), rb.row(i).begin());
  }
}

void cmd_fit_compat(const Context& c, const std::string& new_path, const std::string& prev_path,
                    const std::string& registry) {
  const auto e_new_store = serving::EmbeddingStore::load(new_path);
  const auto e_prev_store = serving::EmbeddingStore::load(prev_path);
  if (e_new_store.version() <= e_prev_store.version())
    throw Error("fit-compat: --new must hold a later embedding version than --prev");
  core::Tensor e_new, e_prev;
  paired_rows(e_new_store, e_prev_store, e_new, e_prev);
  lifecycle::FitOptions fo;
  fo.ridge = c.settings.get("compat.ridge", lifecycle::kRidge);
  fo.max_rows = c.settings.get("compat.max_rows", std::size_t{0});
  fo.seed = core::derive_seed(c.seed, "compat-fit");
  auto t = lifecycle::fit_backward_transform(e_new, e_prev, fo);
  t.from_version = e_new_store.version();
  t.to_version = e_prev_store.version();
  const fs::path out = c.output("transform_v" + std::to_string(t.from_version) + "_to_v" +
                                std::to_string(t.to_version) + ".ckpt");
  lifecycle::save_transform(out, t);

  // ranking agreement on random probe queries
  const std::size_t probes = c.settings.get("compat.probes", std::size_t{100});
  const std::size_t cands = std::min(e_new.rows(), c.settings.get("compat.candidates", std::size_t{50}));
  core::Rng rng(core::derive_seed(c.seed, "compat-probes"));
  core::Tensor q(core::Shape{probes, e_prev.cols()});
  for (auto& x : q.values()) x = rng.normal();
  const auto cand = rng.sample_without_replacement(e_new.rows(), cands);
  const auto rep = lifecycle::evaluate_compat(t, e_new, e_prev, q, cand);
  json j{{"from_version", t.from_version}, {"to_version", t.to_version}, {"rows_fitted", t.rows_fitted},
         {"residual_rms", rep.residual_rms}, {"mean_tau", rep.mean_tau}, {"min_tau", rep.min_tau},
         {"probes", rep.probes}, {"degenerate_probes", rep.degenerate}, {"transform", out.filename().string()},
         {"settings", c.settings.used()}};
  write_json(c.output("compat_report.json"), j);

  if (!registry.empty()) {
    const fs::path reg_path = registry;
    const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    const auto rel = fs::relative(fs::absolute(out), fs::absolute(reg_path).parent_path());
    lifecycle::update_registry(reg_path, [&](lifecycle::Registry& reg) {
      for (const auto* s : {&e_prev_store, &e_new_store}) {
        if (reg.find(s->version())) continue;
        lifecycle::EmbeddingVersion v;
        v.version_id = s->version();
        v.dim = s->dim();
        v.created_at = now;
        const auto bytes = s->encode();
        v.model_checksum = serving::md5_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
        v.store = s == &e_new_store ? new_path : prev_path;
        reg.register_version(v);
      }
      reg.add_transform({t.from_version, t.to_version, rel.string(), t.residual_rms}, t.in_dim(), t.out_dim());
    });
  }
  warn_unused(c);
  std::cout << "fit-compat: v" << t.from_version << " -> v" << t.to_version << " residual RMS " << t.residual_rms
            << ", mean tau " << rep.mean_tau << " -> " << out.string() << "\n";
}

void cmd_apply_compat(const Context& c, const std::string& input, const std::string& transform,
                      const std::string& registry, std::uint64_t target) {
  const auto store = serving::EmbeddingStore::load(input);
  lifecycle::VersionTransform t;
  if (!transform.empty()) {
    t = lifecycle::load_transform(transform);
  } else {
    if (registry.empty()) throw Error("apply-compat: needs --transform or --registry with --target-version");
    const auto reg = lifecycle::Registry::load(registry);
    t = lifecycle::load_chain(reg, store.version(), target, fs::absolute(registry).parent_path());
  }
  if (t.from_version != store.version())
    throw Error("apply-compat: transform starts at v" + std::to_string(t.from_version) + " but the store holds v" +
                std::to_string(store.version()));
  if (t.in_dim() != store.dim()) throw ShapeError("apply-compat: transform input dim does not match the store");
  serving::EmbeddingStore out(t.to_version, static_cast<std::uint32_t>(t.out_dim()));
  for (auto k : store.keys()) {
    const auto row = store_row(store, k);
    const auto mapped = lifecycle::apply_transform(t, std::vector<double>(row.begin(), row.end()));
    out.upsert(k, std::vector<float>(mapped.begin(), mapped.end()));
  }
  const fs::path path = c.output("embeddings_v" + std::to_string(t.to_version) + ".stes");
  out.save(path);
  std::cout << "apply-compat: " << out.size() << " rows v" << t.from_version << " -> v" << t.to_version << " -> "
            << path.string() << "\n";
}

void cmd_ingest(const Context& c, const std::string& events, const std::string& encoder, std::string store,
                std::string cache, std::uint64_t version) {
  if (store.empty()) store = c.output("text_store.stes").string();
  if (cache.empty()) cache = c.output("digests.tsv").string();
  const auto model = text::BiEncoderModel::load(encoder);
  const auto ev = serving::load_events(events);
  serving::IngestOptions o;
  o.embedding_version = version;
  o.dim = model.config().dim;
  const auto s = serving::ingest(ev, serving::model_embedder(model), store, cache, o);
  write_json(c.output("ingest_stats.json"), {{"total", s.total},
                                             {"computed", s.computed},
                                             {"skipped", s.skipped},
                                             {"updated_entities", s.updated_entities},
                                             {"skip_rate", s.total ? double(s.skipped) / double(s.total) : 0.0}});
  std::cout << "ingest: " << s.total << " events, " << s.computed << " embedded, " << s.skipped << " skipped\n";
}

void cmd_lookup(const std::string& store_path, const std::vector<std::string>& keys) {
  const auto snap = serving::StoreSnapshot::open(store_path);
  for (const auto& ks : keys) {
    const auto key = parse_key(ks);
    json j{{"key", ks},
           {"namespace", std::string(serving::key_namespace_name(serving::key_namespace(key)))},
           {"entity_id", serving::key_entity(key)},
           {"version", snap.store().version()}};
    if (const auto v = snap.lookup(key)) {
      j["vector"] = std::vector<float>(v->begin(), v->end());
    } else {
      j["vector"] = nullptr;
    }
    std::cout << j.dump() << "\n";
  }
}

void cmd_bench_ingest(const Context& c, const std::string& events, const std::string& encoder) {
  const auto model = text::BiEncoderModel::load(encoder);
  const auto ev = serving::load_events(events);
  const fs::path dir = c.output("bench_ingest");
  fs::remove_all(dir);
  fs::create_directories(dir);
  serving::IngestOptions o;
  o.dim = model.config().dim;
  const auto embed = serving::model_embedder(model);
  json rounds = json::array();
  // cold run embeds everything, the replay is pure digest hits
  for (const char* phase : {"cold", "replay"}) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto s = serving::ingest(ev, embed, dir / "store.stes", dir / "digests.tsv", o);
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rounds.push_back({{"phase", phase},
                      {"events", s.total},
                      {"computed", s.computed},
                      {"skipped", s.skipped},
                      {"seconds", sec},
                      {"events_per_second", sec > 0 ? double(s.total) / sec : 0.0},
                      {"mean_latency_ms", s.total ? 1e3 * sec / double(s.total) : 0.0}});
  }
  write_json(c.output("bench_ingest.json"), {{"rounds", rounds}});
  std::cout << rounds.dump(2) << "\n";
}

void cmd_eval(const Context& c, const std::string& scores, const std::string& graph_path,
              const std::string& model_path) {
  json out;
  if (!scores.empty()) {
    // "score<TAB>label" per line
    std::ifstream in(scores);
    if (!in) throw Error("cannot open " + scores);
    std::vector<double> s, l;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      double a, b;
      if (!(ls >> a >> b)) throw FormatError(scores + ":" + std::to_string(n) + ": expected '<score> <label>'");
      s.push_back(a);
      l.push_back(b);
    }
    out["auc"] = eval::compute_auc(s, l);
    out["examples"] = s.size();
  } else {
    if (graph_path.empty() || model_path.empty()) throw Error("eval: give --scores, or --graph with --model");
    const auto g = graph::load_graph(graph_path);
    const auto model = gnn::GnnModel::load(model_path);
    const auto opts = eval::gnn_train_options(c.settings, eval::desk_gnn_options());
    const auto cutoff = gnn::validation_cutoff(g, opts.val_fraction);
    std::vector<graph::EdgeTypeId> types;
    for (graph::EdgeTypeId t = 0; t < g.num_edge_types(); ++t) types.push_back(t);
    const auto sampler = gnn::inference_sampler(model, opts.sampling.alpha, cutoff);
    const auto seed = core::derive_seed(c.seed, "gnn-train");
    out["time_cutoff"] = cutoff;
    for (const auto& task : opts.tasks) {
      const auto split = gnn::split_task(g, task, cutoff, seed);
      out["tasks"][task.name] = split.val.empty() ? json(nullptr)
                                                  : json(gnn::evaluate_task(model, g, split, sampler, types));
    }
  }
  write_json(c.output("eval.json"), out);
  warn_unused(c);
  std::cout << out.dump(2) << "\n";
}

/// Returns whether every check passed.
bool cmd_run_experiment(const Context& c, const std::string& name, const std::string& world) {
  eval::ExperimentRequest req{name, world, c.seed, c.settings};
  const auto rep = eval::run_experiment(req);
  eval::write_report(rep, c.out);
  warn_unused(rep.ignored_settings);
  std::cout << rep.render_table();
  return rep.passed();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"star: synthetic talent-marketplace embedding pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "key = value settings file")->check(CLI::ExistingFile);
  app.add_option("--set", g.set, "key=value setting override (repeatable; wins over --config)");
  app.add_option_function<std::uint64_t>(
      "--seed", [&](const std::uint64_t& s) { g.seed = s, g.seed_given = true; }, "random seed");
  app.add_option("--out-dir", g.out_dir, "output directory");

  std::function<void()> run;

  auto* gw = app.add_subcommand("gen-world", "generate a synthetic world with planted affinities");
  gw->callback([&] { run = [&] { cmd_gen_world(make_context(g)); }; });

  std::string pairs;
  bool freeze = false;
  auto* te = app.add_subcommand("train-encoder", "fine-tune the text bi-encoder on labelled pairs");
  te->add_option("--pairs", pairs, "pairs JSONL")->required()->check(CLI::ExistingFile);
  te->add_flag("--freeze-encoder", freeze, "train the prediction head only");
  te->callback([&] { run = [&] { cmd_train_encoder(make_context(g), pairs, freeze); }; });

  std::string nodes, edges, texts, encoder;
  auto* bg = app.add_subcommand("build-graph", "build a binary graph from TSV files, optionally with text embeddings");
  bg->add_option("--nodes", nodes)->required()->check(CLI::ExistingFile);
  bg->add_option("--edges", edges)->required()->check(CLI::ExistingFile);
  bg->add_option("--texts", texts, "texts JSONL")->check(CLI::ExistingFile);
  bg->add_option("--encoder", encoder, "encoder checkpoint")->check(CLI::ExistingFile);
  bg->callback([&] { run = [&] { cmd_build_graph(make_context(g), nodes, edges, texts, encoder); }; });

  std::string graph_path, model_path;
  auto* tg = app.add_subcommand("train-gnn", "train the GNN link-prediction model");
  tg->add_option("--graph", graph_path)->required()->check(CLI::ExistingFile);
  tg->callback([&] { run = [&] { cmd_train_gnn(make_context(g), graph_path); }; });

  std::vector<std::string> types{"member", "job"};
  std::string ids_path, tower = "source";
  std::uint64_t version = 1;
  auto* inf = app.add_subcommand("infer", "embed nodes with a trained GNN into an embedding store");
  inf->add_option("--graph", graph_path)->required()->check(CLI::ExistingFile);
  inf->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  inf->add_option("--types", types, "node types to embed (ignored with --ids)");
  inf->add_option("--ids", ids_path, "file of '<node_type> <id>' lines")->check(CLI::ExistingFile);
  inf->add_option("--tower", tower, "source or destination");
  inf->add_option("--version", version, "embedding version written to the store");
  inf->callback([&] {
    run = [&] { cmd_infer(make_context(g), graph_path, model_path, types, ids_path, tower, version); };
  });

  std::string new_store, prev_store, registry;
  auto* fc = app.add_subcommand("fit-compat", "fit the backward-compatibility map between two embedding versions");
  fc->add_option("--new", new_store, "store of the newer version")->required()->check(CLI::ExistingFile);
  fc->add_option("--prev", prev_store, "store of the previous version")->required()->check(CLI::ExistingFile);
  fc->add_option("--registry", registry, "registry JSON to record the versions and transform in");
  fc->callback([&] { run = [&] { cmd_fit_compat(make_context(g), new_store, prev_store, registry); }; });

  std::string input, transform;
  std::uint64_t target = 0;
  auto* ac = app.add_subcommand("apply-compat", "map a store into an older embedding space");
  ac->add_option("--input", input)->required()->check(CLI::ExistingFile);
  ac->add_option("--transform", transform)->check(CLI::ExistingFile);
  ac->add_option("--registry", registry)->check(CLI::ExistingFile);
  ac->add_option("--target-version", target);
  ac->callback([&] { run = [&] { cmd_apply_compat(make_context(g), input, transform, registry, target); }; });

  std::string events, store, cache;
  auto* ing = app.add_subcommand("ingest", "embed changed texts from an update stream");
  ing->add_option("--events", events)->required()->check(CLI::ExistingFile);
  ing->add_option("--encoder", encoder)->required()->check(CLI::ExistingFile);
  ing->add_option("--store", store, "embedding store (default <out-dir>/text_store.stes)");
  ing->add_option("--cache", cache, "digest cache (default <out-dir>/digests.tsv)");
  ing->add_option("--version", version, "embedding version of a new store");
  ing->callback([&] { run = [&] { cmd_ingest(make_context(g), events, encoder, store, cache, version); }; });

  std::vector<std::string> keys;
  auto* lk = app.add_subcommand("lookup", "print stored vectors as JSON lines");
  lk->add_option("--store", store)->required()->check(CLI::ExistingFile);
  lk->add_option("keys", keys, "'<namespace>:<id>' or raw 64-bit keys")->required();
  lk->callback([&] { run = [&] { cmd_lookup(store, keys); }; });

  auto* bi = app.add_subcommand("bench-ingest", "time cold and replayed ingest of an event stream");
  bi->add_option("--events", events)->required()->check(CLI::ExistingFile);
  bi->add_option("--encoder", encoder)->required()->check(CLI::ExistingFile);
  bi->callback([&] { run = [&] { cmd_bench_ingest(make_context(g), events, encoder); }; });

  std::string scores;
  auto* ev = app.add_subcommand("eval", "AUC of a score file, or validation AUC of a GNN checkpoint");
  ev->add_option("--scores", scores, "'<score> <label>' lines")->check(CLI::ExistingFile);
  ev->add_option("--graph", graph_path)->check(CLI::ExistingFile);
  ev->add_option("--model", model_path)->check(CLI::ExistingFile);
  ev->callback([&] { run = [&] { cmd_eval(make_context(g), scores, graph_path, model_path); }; });

  std::string tmpl, world;
  bool strict = false;
  int exit_code = 0;
  std::string names;
  for (const auto& n : eval::experiment_templates()) names += "\n  " + n;
  auto* re = app.add_subcommand("run-experiment", "run a named experiment template; templates:" + names);
  re->add_option("--template", tmpl)->required();
  re->add_option("--world", world, "world directory (from gen-world)");
  re->add_flag("--strict", strict, "exit with status 3 when a check fails");
  re->callback([&] {
    run = [&] {
      if (!cmd_run_experiment(make_context(g), tmpl, world) && strict) exit_code = 3;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    run();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
