#include "star/eval/world.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <json.hpp>
#include <map>
#include <numeric>
#include <set>

#include "star/core/binary_io.hpp"
#include "star/core/error.hpp"
#include "star/core/rng.hpp"
#include "star/graph/graph_io.hpp"

namespace star::eval {

using graph::NodeType;

namespace {

constexpr const char* kSyllables[] = {"ka", "lo", "mi", "ren", "ta", "vo", "sel", "dar", "nu", "pi",
                                      "qua", "zen", "bor", "fi", "gal", "hex", "jo", "mar", "tri", "ux"};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<std::string> make_words(core::Rng& rng, std::size_t n, std::set<std::string>& used) {
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w;
    const std::size_t parts = 2 + rng.below(2);
    for (std::size_t i = 0; i < parts; ++i) w += kSyllables[rng.below(std::size(kSyllables))];
    if (used.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

struct Vocabulary {
  // topic[k][0] positive pole, topic[k][1] negative pole
  std::vector<std::array<std::vector<std::string>, 2>> topic;
  std::vector<std::string> filler;
};

Vocabulary make_vocabulary(const WorldConfig& c) {
  core::Rng rng(core::derive_seed(c.seed, "vocabulary"));
  std::set<std::string> used;
  Vocabulary v;
  v.topic.resize(c.latent_dim);
  for (auto& poles : v.topic) {
    poles[0] = make_words(rng, c.topic_words, used);
    poles[1] = make_words(rng, c.topic_words, used);
  }
  v.filler = make_words(rng, c.filler_words, used);
  return v;
}

std::string synth_text(core::Rng& rng, const Vocabulary& voc, const std::vector<double>& latent, std::size_t words,
                       double topic_fraction) {
  double total = 0.0;
  for (double x : latent) total += std::abs(x);
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    const std::string* w;
    if (total > 0.0 && rng.uniform() < topic_fraction) {
      double r = rng.uniform() * total;
      std::size_t k = 0;
      while (k + 1 < latent.size() && r >= std::abs(latent[k])) r -= std::abs(latent[k++]);
      const auto& pole = voc.topic[k][latent[k] >= 0.0 ? 0 : 1];
      w = &pole[rng.below(pole.size())];
    } else {
      w = &voc.filler[rng.below(voc.filler.size())];
    }
    if (!out.empty()) out += ' ';
    out += *w;
  }
  return out;
}

std::vector<double> gaussian(core::Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

/// k distinct indices drawn by softmax(sharpness * a.c / sqrt(d)) without replacement.
std::vector<std::uint32_t> attach(core::Rng& rng, const std::vector<double>& latent,
                                  const std::vector<std::vector<double>>& centroids, std::size_t k, double sharpness) {
  const double scale = sharpness / std::sqrt(static_cast<double>(latent.size()));
  std::vector<double> w(centroids.size());
  for (std::size_t i = 0; i < centroids.size(); ++i) w[i] = scale * dot(latent, centroids[i]);
  const double mx = *std::max_element(w.begin(), w.end());
  for (auto& x : w) x = std::exp(x - mx);
  std::vector<std::uint32_t> out;
  for (std::size_t pick = 0; pick < std::min(k, centroids.size()); ++pick) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    double r = rng.uniform() * total;
    std::size_t i = 0;
    while (i + 1 < w.size() && (r >= w[i] || w[i] == 0.0)) r -= w[i++];
    out.push_back(static_cast<std::uint32_t>(i));
    w[i] = 0.0;
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Bias b with mean(sigmoid(s + b)) == rate.
double calibrate(const std::vector<double>& scores, double rate) {
  double lo = -60.0, hi = 60.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double m = 0.0;
    for (double s : scores) m += sigmoid(s + mid);
    (m / static_cast<double>(scores.size()) < rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

}  // namespace

void WorldConfig::validate() const {
  if (members == 0 || jobs == 0 || skills == 0 || titles == 0 || companies == 0 || latent_dim == 0)
    throw Error("world: entity counts and latent_dim must be >= 1");
  if (!(noise >= 0.0)) throw Error("world: noise must be >= 0");
  for (double r : {apply_rate, save_rate, inmail_rate})
    if (!(r > 0.0 && r < 1.0)) throw Error("world: apply, save and inmail rates must be in (0, 1)");
  if (candidates_per_member == 0 || candidates_per_member > jobs)
    throw Error("world: candidates_per_member must be in [1, jobs]");
  if (regions == 0 || seniority_levels == 0 || topic_words == 0 || filler_words == 0)
    throw Error("world: regions, seniority levels and vocabulary sizes must be >= 1");
  if (topic_fraction < 0.0 || topic_fraction > 1.0) throw Error("world: topic_fraction must be in [0, 1]");
  if (update_fraction < 0.0 || unchanged_fraction < 0.0 || update_fraction + unchanged_fraction > 1.0)
    throw Error("world: update and unchanged fractions must be >= 0 and sum to at most 1");
  if (time_span <= 0) throw Error("world: time_span must be > 0");
}

World generate_world(const WorldConfig& cfg) {
  cfg.validate();
  World w;
  w.cfg = cfg;
  const std::size_t d = cfg.latent_dim;
  const Vocabulary voc = make_vocabulary(cfg);

  core::Rng crng(core::derive_seed(cfg.seed, "centroids"));
  auto centroids = [&](std::size_t n) {
    std::vector<std::vector<double>> c(n);
    for (auto& v : c) v = gaussian(crng, d);
    return c;
  };
  const auto skill_c = centroids(cfg.skills);
  const auto title_c = centroids(cfg.titles);
  const auto company_c = centroids(cfg.companies);

  auto make_entities = [&](std::size_t n, const char* label, bool member) {
    core::Rng rng(core::derive_seed(cfg.seed, label));
    std::vector<WorldEntity> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& e = out[i];
      e.id = i;
      e.latent = gaussian(rng, d);
      e.skills = attach(rng, e.latent, skill_c, member ? cfg.skills_per_member : cfg.skills_per_job,
                        cfg.attribute_sharpness);
      e.title = attach(rng, e.latent, title_c, 1, cfg.attribute_sharpness)[0];
      e.company = attach(rng, e.latent, company_c, 1, cfg.attribute_sharpness)[0];
      e.region = static_cast<std::uint32_t>(rng.below(cfg.regions));
      e.seniority = static_cast<std::uint32_t>(rng.below(cfg.seniority_levels));
      e.text = synth_text(rng, voc, e.latent, member ? cfg.profile_words : cfg.job_words, cfg.topic_fraction);
      if (member) e.resume = synth_text(rng, voc, e.latent, cfg.resume_words, cfg.topic_fraction);
    }
    return out;
  };
  w.members = make_entities(cfg.members, "members", true);
  w.jobs = make_entities(cfg.jobs, "jobs", false);

  // candidate pairs and their affinity scores
  core::Rng prng(core::derive_seed(cfg.seed, "pairs"));
  struct Cand {
    std::size_t m, j;
    double dot, apply_score, save_score, inmail_score;
    std::int64_t time;
  };
  std::vector<Cand> cands;
  const double norm = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t m = 0; m < cfg.members; ++m) {
    for (std::size_t j : prng.sample_without_replacement(cfg.jobs, cfg.candidates_per_member)) {
      Cand c{m, j, 0, 0, 0, 0, 0};
      c.dot = dot(w.members[m].latent, w.jobs[j].latent) * norm;
      const double base = cfg.affinity_scale * c.dot + (w.members[m].region == w.jobs[j].region ? cfg.region_bonus : 0.0);
      c.apply_score = base + cfg.noise * prng.normal();
      c.save_score = base + cfg.noise * prng.normal();
      c.inmail_score = base + cfg.noise * prng.normal();
      c.time = static_cast<std::int64_t>(prng.below(static_cast<std::uint64_t>(cfg.time_span)));
      cands.push_back(c);
    }
  }
  std::vector<double> apply_scores, save_scores, inmail_scores;
  for (const auto& c : cands) {
    apply_scores.push_back(c.apply_score);
    save_scores.push_back(c.save_score);
    inmail_scores.push_back(c.inmail_score);
  }
  w.apply_bias = calibrate(apply_scores, cfg.apply_rate);
  w.save_bias = calibrate(save_scores, cfg.save_rate);
  w.inmail_bias = calibrate(inmail_scores, cfg.inmail_rate);

  std::vector<double> labels, dots;
  for (const auto& c : cands) {
    const bool applied = prng.bernoulli(sigmoid(c.apply_score + w.apply_bias));
    const bool saved = prng.bernoulli(sigmoid(c.save_score + w.save_bias));
    const bool inmailed = prng.bernoulli(sigmoid(c.inmail_score + w.inmail_bias));
    const auto& mem = w.members[c.m];
    const auto& job = w.jobs[c.j];
    w.pairs.push_back({mem.id, job.id, applied ? 1.0 : 0.0, c.time, mem.text, mem.resume, job.text});
    if (applied) w.interactions.push_back({mem.id, job.id, c.time, "APPLY"});
    if (saved) w.interactions.push_back({mem.id, job.id, c.time + 1, "SAVE"});
    if (inmailed) w.interactions.push_back({mem.id, job.id, c.time + 2, "INMAIL"});
    labels.push_back(applied ? 1.0 : 0.0);
    dots.push_back(c.dot);
  }
  w.label_latent_correlation = pearson(labels, dots);

  // update stream: announce every text, then re-announce a subset
  core::Rng erng(core::derive_seed(cfg.seed, "events"));
  struct Src {
    text::TextKind kind;
    const WorldEntity* e;
    bool member;
  };
  std::vector<Src> sources;
  for (const auto& j : w.jobs) sources.push_back({text::TextKind::job_description, &j, false});
  for (const auto& m : w.members) {
    sources.push_back({text::TextKind::member_profile, &m, true});
    sources.push_back({text::TextKind::member_resume, &m, true});
  }
  for (const auto& s : sources) {
    const std::string& body = s.kind == text::TextKind::member_resume ? s.e->resume : s.e->text;
    w.events.push_back({s.e->id, s.kind, body, static_cast<std::int64_t>(erng.below(cfg.time_span / 2))});
  }
  for (const auto& s : sources) {
    const double r = erng.uniform();
    const std::string& body = s.kind == text::TextKind::member_resume ? s.e->resume : s.e->text;
    const auto t = cfg.time_span / 2 + static_cast<std::int64_t>(erng.below(cfg.time_span / 2));
    if (r < cfg.unchanged_fraction) {
      w.events.push_back({s.e->id, s.kind, body, t});
    } else if (r < cfg.unchanged_fraction + cfg.update_fraction) {
      const std::size_t words = s.kind == text::TextKind::member_resume ? cfg.resume_words
                                : s.member                               ? cfg.profile_words
                                                                         : cfg.job_words;
      w.events.push_back({s.e->id, s.kind, synth_text(erng, voc, s.e->latent, words, cfg.topic_fraction), t});
    }
  }
  std::stable_sort(w.events.begin(), w.events.end(),
                   [](const auto& a, const auto& b) { return a.event_time < b.event_time; });
  return w;
}

graph::GraphBuilder world_graph_builder(const World& w) {
  graph::GraphBuilder b;
  std::uint32_t slot = 0;
  for (const auto& m : w.members) {
    graph::FeatureBundle f{.id_slot = slot++};
    f.categorical = {{0, m.region}, {1, m.seniority}};
    b.add_node(NodeType::member, m.id, std::move(f));
  }
  for (const auto& j : w.jobs) {
    graph::FeatureBundle f{.id_slot = slot++};
    f.categorical = {{2, j.region}, {3, j.seniority}};
    b.add_node(NodeType::job, j.id, std::move(f));
  }
  for (std::size_t i = 0; i < w.cfg.skills; ++i) b.add_node(NodeType::skill, i, {.id_slot = slot++});
  for (std::size_t i = 0; i < w.cfg.titles; ++i) b.add_node(NodeType::title, i, {.id_slot = slot++});
  for (std::size_t i = 0; i < w.cfg.companies; ++i) b.add_node(NodeType::company, i, {.id_slot = slot++});
  for (const auto& m : w.members) {
    for (auto s : m.skills) b.add_edge(NodeType::member, m.id, "member-skill", NodeType::skill, s, 0, 1.0);
    b.add_edge(NodeType::member, m.id, "member-title", NodeType::title, m.title, 0, 1.0);
    b.add_edge(NodeType::member, m.id, "member-company", NodeType::company, m.company, 0, 1.0);
  }
  for (const auto& j : w.jobs) {
    for (auto s : j.skills) b.add_edge(NodeType::job, j.id, "job-skill", NodeType::skill, s, 0, 1.0);
    b.add_edge(NodeType::job, j.id, "job-title", NodeType::title, j.title, 0, 1.0);
    b.add_edge(NodeType::job, j.id, "job-company", NodeType::company, j.company, 0, 1.0);
  }
  for (const auto& it : w.interactions)
    b.add_edge(NodeType::member, it.member, "member-job-" + it.action, NodeType::job, it.job, it.time, 1.0);
  return b;
}

void write_world(const World& w, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& c = w.cfg;
  std::size_t node_lines = 0, edge_lines = 0, attribute_edges = 0;
  std::map<std::string, std::size_t> actions{{"APPLY", 0}, {"SAVE", 0}, {"INMAIL", 0}};

  // nodes and edges, in the same order as world_graph_builder
  std::string nodes = "# node_type\tlocal_id\ttext_embedding\tid_slot\tcategorical\n";
  std::uint32_t slot = 0;
  auto node = [&](NodeType t, std::uint64_t id, graph::FeatureBundle f) {
    nodes += graph::node_tsv_line(t, id, f) + "\n";
    ++node_lines;
  };
  for (const auto& m : w.members) node(NodeType::member, m.id, {.id_slot = slot++, .categorical = {{0, m.region}, {1, m.seniority}}});
  for (const auto& j : w.jobs) node(NodeType::job, j.id, {.id_slot = slot++, .categorical = {{2, j.region}, {3, j.seniority}}});
  for (std::size_t i = 0; i < c.skills; ++i) node(NodeType::skill, i, {.id_slot = slot++});
  for (std::size_t i = 0; i < c.titles; ++i) node(NodeType::title, i, {.id_slot = slot++});
  for (std::size_t i = 0; i < c.companies; ++i) node(NodeType::company, i, {.id_slot = slot++});

  std::string edges = "# src_type\tsrc_id\tedge_type\tdst_type\tdst_id\ttimestamp\tweight\n";
  auto edge = [&](NodeType st, std::uint64_t sid, const std::string& key, NodeType dt, std::uint64_t did,
                  std::int64_t ts) {
    edges += graph::edge_tsv_line(st, sid, key, dt, did, ts, 1.0) + "\n";
    ++edge_lines;
  };
  for (const auto& m : w.members) {
    for (auto s : m.skills) edge(NodeType::member, m.id, "member-skill", NodeType::skill, s, 0);
    edge(NodeType::member, m.id, "member-title", NodeType::title, m.title, 0);
    edge(NodeType::member, m.id, "member-company", NodeType::company, m.company, 0);
    attribute_edges += m.skills.size() + 2;
  }
  for (const auto& j : w.jobs) {
    for (auto s : j.skills) edge(NodeType::job, j.id, "job-skill", NodeType::skill, s, 0);
    edge(NodeType::job, j.id, "job-title", NodeType::title, j.title, 0);
    edge(NodeType::job, j.id, "job-company", NodeType::company, j.company, 0);
    attribute_edges += j.skills.size() + 2;
  }
  for (const auto& it : w.interactions) {
    edge(NodeType::member, it.member, "member-job-" + it.action, NodeType::job, it.job, it.time);
    ++actions[it.action];
  }

  std::string texts;
  for (const auto& j : w.jobs) texts += text::text_to_json_line({j.id, text::TextKind::job_description, j.text, 0}) + "\n";
  for (const auto& m : w.members) {
    texts += text::text_to_json_line({m.id, text::TextKind::member_profile, m.text, 0}) + "\n";
    texts += text::text_to_json_line({m.id, text::TextKind::member_resume, m.resume, 0}) + "\n";
  }

  std::string pairs;
  std::size_t positives = 0;
  for (const auto& p : w.pairs) {
    pairs += text::pair_to_json_line(p) + "\n";
    positives += p.label == 1.0;
  }
  std::string events;
  for (const auto& e : w.events) events += serving::event_json_line(e) + "\n";

  std::string latent = "# node_type\tlocal_id\tlatent...\n";
  auto latent_line = [&](const char* type, const WorldEntity& e) {
    latent += std::string(type) + "\t" + std::to_string(e.id);
    for (double x : e.latent) latent += "\t" + fmt(x);
    latent += "\n";
  };
  for (const auto& m : w.members) latent_line("member", m);
  for (const auto& j : w.jobs) latent_line("job", j);

  nlohmann::ordered_json man;
  man["config"] = {{"members", c.members},
                   {"jobs", c.jobs},
                   {"skills", c.skills},
                   {"titles", c.titles},
                   {"companies", c.companies},
                   {"latent_dim", c.latent_dim},
                   {"noise", c.noise},
                   {"affinity_scale", c.affinity_scale},
                   {"region_bonus", c.region_bonus},
                   {"apply_rate", c.apply_rate},
                   {"save_rate", c.save_rate},
                   {"inmail_rate", c.inmail_rate},
                   {"candidates_per_member", c.candidates_per_member},
                   {"skills_per_member", c.skills_per_member},
                   {"skills_per_job", c.skills_per_job},
                   {"attribute_sharpness", c.attribute_sharpness},
                   {"regions", c.regions},
                   {"seniority_levels", c.seniority_levels},
                   {"topic_words", c.topic_words},
                   {"filler_words", c.filler_words},
                   {"profile_words", c.profile_words},
                   {"resume_words", c.resume_words},
                   {"job_words", c.job_words},
                   {"topic_fraction", c.topic_fraction},
                   {"time_span", c.time_span},
                   {"update_fraction", c.update_fraction},
                   {"unchanged_fraction", c.unchanged_fraction},
                   {"seed", c.seed}};
  man["ground_truth"] = {{"apply_bias", w.apply_bias},
                         {"save_bias", w.save_bias},
                         {"inmail_bias", w.inmail_bias},
                         {"label_latent_correlation", w.label_latent_correlation},
                         {"affinity", "sigmoid(affinity_scale * dot(u, v) / sqrt(latent_dim) + region_bonus * "
                                      "[region match] + noise * N(0,1) + bias)"},
                         {"latent_file", "latent.tsv"}};
  man["counts"] = {{"nodes", node_lines},
                   {"edges", edge_lines},
                   {"attribute_edges", attribute_edges},
                   {"apply_edges", actions["APPLY"]},
                   {"save_edges", actions["SAVE"]},
                   {"inmail_edges", actions["INMAIL"]},
                   {"pairs", w.pairs.size()},
                   {"positive_pairs", positives},
                   {"texts", w.jobs.size() + 2 * w.members.size()},
                   {"events", w.events.size()},
                   {"latent", w.members.size() + w.jobs.size()}};
  man["files"] = {{"nodes", "nodes.tsv"}, {"edges", "edges.tsv"},   {"texts", "texts.jsonl"},
                  {"pairs", "pairs.jsonl"}, {"events", "events.jsonl"}, {"latent", "latent.tsv"}};

  core::write_file_atomic(dir / "nodes.tsv", nodes);
  core::write_file_atomic(dir / "edges.tsv", edges);
  core::write_file_atomic(dir / "texts.jsonl", texts);
  core::write_file_atomic(dir / "pairs.jsonl", pairs);
  core::write_file_atomic(dir / "events.jsonl", events);
  core::write_file_atomic(dir / "latent.tsv", latent);
  core::write_file_atomic(dir / "manifest.json", man.dump(2) + "\n");
}

graph::HeteroGraph two_community_graph(const TwoCommunityConfig& c) {
  if (c.members == 0 || c.jobs == 0 || c.subclusters == 0 || c.skills_per_subcluster == 0)
    throw Error("two-community graph: counts must be >= 1");
  if (c.in_subcluster < 0 || c.in_community < 0 || c.in_subcluster + c.in_community > 1.0)
    throw Error("two-community graph: probabilities must be >= 0 and sum to at most 1");
  core::Rng rng(core::derive_seed(c.seed, "two-community"));
  const std::size_t clusters = 2 * c.subclusters;
  graph::GraphBuilder b;
  std::uint32_t slot = 0;
  auto cluster_of = [&](std::size_t i) { return i % clusters; };
  for (std::size_t m = 0; m < c.members; ++m) {
    graph::FeatureBundle f{.id_slot = slot++};
    f.categorical = {{0, static_cast<std::uint32_t>(rng.below(c.categorical_values))}};
    b.add_node(NodeType::member, m, std::move(f));
  }
  for (std::size_t j = 0; j < c.jobs; ++j) {
    graph::FeatureBundle f{.id_slot = slot++};
    f.categorical = {{1, static_cast<std::uint32_t>(rng.below(c.categorical_values))}};
    b.add_node(NodeType::job, j, std::move(f));
  }
  const std::size_t n_skills = clusters * c.skills_per_subcluster;
  for (std::size_t s = 0; s < n_skills; ++s) b.add_node(NodeType::skill, s, {.id_slot = slot++});

  // jobs of each cluster
  std::vector<std::vector<std::size_t>> jobs_in(clusters);
  for (std::size_t j = 0; j < c.jobs; ++j) jobs_in[cluster_of(j)].push_back(j);
  for (const auto& v : jobs_in)
    if (v.empty()) throw Error("two-community graph: every sub-cluster needs at least one job");
  auto skill_of = [&](std::size_t cluster) {
    return cluster * c.skills_per_subcluster + rng.below(c.skills_per_subcluster);
  };
  for (std::size_t m = 0; m < c.members; ++m) {
    const std::size_t k = cluster_of(m);
    b.add_edge(NodeType::member, m, "member-skill", NodeType::skill, skill_of(k), 0, 1.0);
    for (std::size_t a = 0; a < c.applies_per_member; ++a) {
      const double r = rng.uniform();
      std::size_t target;
      const std::size_t community = k / c.subclusters;
      if (r < c.in_subcluster) target = k;
      else if (r < c.in_subcluster + c.in_community) target = community * c.subclusters + rng.below(c.subclusters);
      else target = (1 - community) * c.subclusters + rng.below(c.subclusters);
      const auto& pool = jobs_in[target];
      b.add_edge(NodeType::member, m, "member-job-APPLY", NodeType::job, pool[rng.below(pool.size())],
                 static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(c.time_span))), 1.0);
    }
  }
  for (std::size_t j = 0; j < c.jobs; ++j)
    b.add_edge(NodeType::job, j, "job-skill", NodeType::skill, skill_of(cluster_of(j)), 0, 1.0);
  return b.build();
}

}  // namespace star::eval
