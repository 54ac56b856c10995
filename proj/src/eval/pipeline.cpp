#include "star/eval/pipeline.hpp"

#include <map>

#include "star/core/error.hpp"

namespace star::eval {

WorldConfig world_config(const Settings& s, WorldConfig c) {
  c.members = s.get("world.members", c.members);
  c.jobs = s.get("world.jobs", c.jobs);
  c.skills = s.get("world.skills", c.skills);
  c.titles = s.get("world.titles", c.titles);
  c.companies = s.get("world.companies", c.companies);
  c.latent_dim = s.get("world.latent_dim", c.latent_dim);
  c.noise = s.get("world.noise", c.noise);
  c.affinity_scale = s.get("world.affinity_scale", c.affinity_scale);
  c.region_bonus = s.get("world.region_bonus", c.region_bonus);
  c.apply_rate = s.get("world.apply_rate", c.apply_rate);
  c.save_rate = s.get("world.save_rate", c.save_rate);
  c.inmail_rate = s.get("world.inmail_rate", c.inmail_rate);
  c.candidates_per_member = s.get("world.candidates_per_member", c.candidates_per_member);
  c.skills_per_member = s.get("world.skills_per_member", c.skills_per_member);
  c.skills_per_job = s.get("world.skills_per_job", c.skills_per_job);
  c.attribute_sharpness = s.get("world.attribute_sharpness", c.attribute_sharpness);
  c.regions = s.get("world.regions", c.regions);
  c.seniority_levels = s.get("world.seniority_levels", c.seniority_levels);
  c.topic_words = s.get("world.topic_words", c.topic_words);
  c.filler_words = s.get("world.filler_words", c.filler_words);
  c.profile_words = s.get("world.profile_words", c.profile_words);
  c.resume_words = s.get("world.resume_words", c.resume_words);
  c.job_words = s.get("world.job_words", c.job_words);
  c.topic_fraction = s.get("world.topic_fraction", c.topic_fraction);
  c.time_span = s.get("world.time_span", c.time_span);
  c.update_fraction = s.get("world.update_fraction", c.update_fraction);
  c.unchanged_fraction = s.get("world.unchanged_fraction", c.unchanged_fraction);
  return c;
}

TwoCommunityConfig two_community_config(const Settings& s, TwoCommunityConfig c) {
  c.members = s.get("tc.members", c.members);
  c.jobs = s.get("tc.jobs", c.jobs);
  c.subclusters = s.get("tc.subclusters", c.subclusters);
  c.skills_per_subcluster = s.get("tc.skills_per_subcluster", c.skills_per_subcluster);
  c.applies_per_member = s.get("tc.applies_per_member", c.applies_per_member);
  c.in_subcluster = s.get("tc.in_subcluster", c.in_subcluster);
  c.in_community = s.get("tc.in_community", c.in_community);
  c.categorical_values = s.get("tc.categorical_values", c.categorical_values);
  c.time_span = s.get("tc.time_span", c.time_span);
  return c;
}

text::BiEncoderConfig encoder_config(const Settings& s, text::BiEncoderConfig c) {
  c.vocab_size = s.get_u64("encoder.vocab_size", c.vocab_size);
  c.dim = s.get("encoder.dim", c.dim);
  c.layers = s.get("encoder.layers", c.layers);
  c.max_tokens = s.get("encoder.max_tokens", c.max_tokens);
  c.head_hidden = s.get("encoder.head_hidden", c.head_hidden);
  c.validate();
  return c;
}

text::EncoderTrainOptions encoder_train_options(const Settings& s, text::EncoderTrainOptions o) {
  o.loss.lambda = s.get("encoder.lambda", o.loss.lambda);
  o.loss.tau = s.get("encoder.tau", o.loss.tau);
  o.batch.per_worker_batch_size = s.get("encoder.batch_size", o.batch.per_worker_batch_size);
  o.batch.grad_accumulation_steps = s.get("encoder.grad_accumulation", o.batch.grad_accumulation_steps);
  o.batch.worker_count = s.get("encoder.workers", o.batch.worker_count);
  o.optimizer.learning_rate = s.get("encoder.lr", o.optimizer.learning_rate);
  o.optimizer.warmup_steps = s.get("encoder.warmup", o.optimizer.warmup_steps);
  o.optimizer.weight_decay = s.get("encoder.weight_decay", o.optimizer.weight_decay);
  o.epochs = s.get("encoder.epochs", o.epochs);
  o.eval_every = s.get("encoder.eval_every", o.eval_every);
  o.balance = s.get("encoder.balance", o.balance);
  o.loss.validate();
  o.batch.validate();
  return o;
}

gnn::EncoderConfig gnn_config(const Settings& s, gnn::EncoderConfig c) {
  c.embedding_dim = s.get("gnn.embedding_dim", c.embedding_dim);
  c.units_multiplier = s.get("gnn.units_multiplier", c.units_multiplier);
  c.attention_heads = s.get("gnn.attention_heads", c.attention_heads);
  c.num_layers = s.get("gnn.num_layers", c.num_layers);
  c.pooling = gnn::parse_pooling(s.get("gnn.pooling", std::string(gnn::pooling_name(c.pooling))));
  c.dual_encoder = s.get("gnn.dual_encoder", c.dual_encoder);
  c.include_target_node = s.get("gnn.include_target_node", c.include_target_node);
  c.l2_reg = s.get("gnn.l2_reg", c.l2_reg);
  c.batch_norm = s.get("gnn.batch_norm", c.batch_norm);
  c.feature_dim = s.get("gnn.feature_dim", c.feature_dim);
  c.use_text = s.get("gnn.use_text", c.use_text);
  c.use_id = s.get("gnn.use_id", c.use_id);
  c.use_categorical = s.get("gnn.use_categorical", c.use_categorical);
  c.validate();
  return c;
}

gnn::GnnTrainOptions gnn_train_options(const Settings& s, gnn::GnnTrainOptions o) {
  const std::string tasks = s.get("gnn.tasks", std::string());
  if (!tasks.empty()) o.tasks = gnn::load_task_spec(tasks);
  if (o.tasks.empty()) o.tasks = {default_apply_task()};
  o.strategy = graph::parse_strategy(s.get("gnn.strategy", std::string(graph::strategy_name(o.strategy))));
  const bool adaptive = s.get("gnn.adaptive", true);
  auto& a = o.sampling;
  a.alpha = s.get("gnn.alpha", a.alpha);
  a.eval_every = s.get("gnn.eval_every", a.eval_every);
  if (adaptive) {
    a.sigma = s.get("gnn.sigma", a.sigma);
    a.delta = s.get("gnn.delta", a.delta);
    a.improvement_threshold = s.get("gnn.improvement_threshold", a.improvement_threshold);
  } else {
    a = gnn::AdaptiveSamplingConfig::fixed(a.alpha, a.eval_every);
  }
  a.validate();
  o.batch_size = s.get("gnn.batch_size", o.batch_size);
  o.epochs = s.get("gnn.epochs", o.epochs);
  o.optimizer.learning_rate = s.get("gnn.lr", o.optimizer.learning_rate);
  o.optimizer.warmup_steps = s.get("gnn.warmup", o.optimizer.warmup_steps);
  o.val_fraction = s.get("gnn.val_fraction", o.val_fraction);
  return o;
}

text::BiEncoderConfig desk_encoder_config() {
  return {.vocab_size = 4096, .dim = 32, .layers = 2, .max_tokens = 64, .head_hidden = 32};
}

text::EncoderTrainOptions desk_encoder_options() {
  text::EncoderTrainOptions o;
  o.batch.per_worker_batch_size = 32;
  o.optimizer.learning_rate = 1e-2;
  o.epochs = 6;
  return o;
}

gnn::EncoderConfig desk_gnn_config() {
  gnn::EncoderConfig c;
  c.embedding_dim = 16;
  c.units_multiplier = 2;
  c.feature_dim = 16;
  c.use_id = false;
  return c;
}

gnn::GnnTrainOptions desk_gnn_options() {
  gnn::GnnTrainOptions o;
  o.tasks = {default_apply_task()};
  o.sampling = gnn::AdaptiveSamplingConfig::fixed(5, 0.25);
  o.epochs = 10;
  o.optimizer.learning_rate = 1e-2;
  return o;
}

void attach_text_embeddings(graph::GraphBuilder& b, const text::BiEncoderModel& model,
                            const std::vector<text::TextRecord>& texts) {
  // latest record per (kind, entity) wins
  std::map<std::pair<text::TextKind, std::uint64_t>, const text::TextRecord*> latest;
  for (const auto& r : texts) {
    auto& slot = latest[{r.kind, r.entity_id}];
    if (!slot || r.snapshot_time >= slot->snapshot_time) slot = &r;
  }
  auto embed = [&](text::TextKind kind, std::uint64_t id) -> std::optional<std::vector<double>> {
    const auto it = latest.find({kind, id});
    if (it == latest.end()) return std::nullopt;
    return model.embed(kind, it->second->text);
  };
  for (graph::NodeIndex n = 0; n < b.num_nodes(); ++n) {
    const auto id = b.local_id(n);
    std::vector<double> v;
    if (b.type(n) == graph::NodeType::job) {
      if (auto d = embed(text::TextKind::job_description, id)) v = std::move(*d);
    } else if (b.type(n) == graph::NodeType::member) {
      auto p = embed(text::TextKind::member_profile, id);
      auto r = embed(text::TextKind::member_resume, id);
      if (p && r) {
        v = *p;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.5 * (v[i] + (*r)[i]);
      } else if (p) {
        v = std::move(*p);
      } else if (r) {
        v = std::move(*r);
      }
    }
    if (!v.empty()) b.set_text_embedding(n, std::vector<float>(v.begin(), v.end()));
  }
}

gnn::LinkPredictionTask default_apply_task() {
  return {"apply", "member-job-APPLY", graph::NodeType::member, graph::NodeType::job, 1.0, 1};
}

}  // namespace star::eval
