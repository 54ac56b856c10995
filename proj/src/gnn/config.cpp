#include "star/gnn/config.hpp"

#include <json.hpp>

#include "star/core/binary_io.hpp"
#include "star/core/error.hpp"

namespace star::gnn {

Pooling parse_pooling(std::string_view name) {
  if (name == "mean") return Pooling::mean;
  if (name == "self_attention") return Pooling::self_attention;
  throw Error("unknown pooling '" + std::string(name) + "' (mean, self_attention)");
}

std::string_view pooling_name(Pooling p) { return p == Pooling::mean ? "mean" : "self_attention"; }

Tower parse_tower(std::string_view name) {
  if (name == "source" || name == "src") return Tower::source;
  if (name == "destination" || name == "dst") return Tower::destination;
  throw Error("unknown tower '" + std::string(name) + "' (source, destination)");
}

void EncoderConfig::validate() const {
  if (embedding_dim == 0) throw Error("embedding_dim must be > 0");
  if (units_multiplier == 0 || attention_heads == 0 || num_layers == 0 || feature_dim == 0)
    throw Error("units_multiplier, attention_heads, num_layers and feature_dim must be > 0");
  if (hidden() % attention_heads != 0) {
    throw Error("hidden width " + std::to_string(hidden()) + " is not divisible by " +
                std::to_string(attention_heads) + " attention heads");
  }
  if (!(l2_reg >= 0.0)) throw Error("l2_reg must be >= 0");
  if (!use_text && !use_id && !use_categorical) throw Error("at least one node feature source must be enabled");
}

void LinkPredictionTask::validate() const {
  if (name.empty()) throw Error("task needs a name");
  if (!(lambda >= 0.0)) throw Error("task '" + name + "': lambda must be >= 0");
  if (neg_ratio == 0) throw Error("task '" + name + "': neg_ratio must be >= 1");
  const auto info = graph::parse_edge_key(edge_type);
  if (info.src != src_type || info.dst != dst_type) {
    throw Error("task '" + name + "': edge type " + edge_type + " does not connect " +
                std::string(graph::node_type_name(src_type)) + " to " + std::string(graph::node_type_name(dst_type)));
  }
}

std::vector<LinkPredictionTask> parse_task_spec(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  if (!j.is_array() || j.empty()) throw Error("task spec must be a non-empty JSON array");
  std::vector<LinkPredictionTask> out;
  for (const auto& t : j) {
    LinkPredictionTask task;
    task.name = t.at("name").get<std::string>();
    task.edge_type = t.at("edge_type").get<std::string>();
    task.src_type = graph::parse_node_type(t.at("src_type").get<std::string>());
    task.dst_type = graph::parse_node_type(t.at("dst_type").get<std::string>());
    task.lambda = t.value("lambda", 1.0);
    task.neg_ratio = t.value("neg_ratio", std::size_t{1});
    task.validate();
    out.push_back(std::move(task));
  }
  return out;
}

std::vector<LinkPredictionTask> load_task_spec(const std::filesystem::path& path) {
  return parse_task_spec(core::read_file_text(path));
}

std::string task_spec_json(const std::vector<LinkPredictionTask>& tasks) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& t : tasks) {
    nlohmann::ordered_json o;
    o["name"] = t.name;
    o["edge_type"] = t.edge_type;
    o["src_type"] = graph::node_type_name(t.src_type);
    o["dst_type"] = graph::node_type_name(t.dst_type);
    o["lambda"] = t.lambda;
    o["neg_ratio"] = t.neg_ratio;
    arr.push_back(o);
  }
  return arr.dump(2);
}

void AdaptiveSamplingConfig::validate() const {
  if (sigma < 1 || alpha < 1) throw Error("adaptive sampling: sigma and alpha must be >= 1");
  if (sigma > alpha) throw Error("adaptive sampling: sigma must be <= alpha");
  if (delta == 0) throw Error("adaptive sampling: delta must be > 0");
  if (!(eval_every > 0.0)) throw Error("adaptive sampling: eval_every must be > 0");
}

AdaptiveSamplingConfig AdaptiveSamplingConfig::fixed(std::size_t alpha, double eval_every) {
  return {.alpha = alpha, .sigma = alpha, .delta = 1, .eval_every = eval_every};
}

}  // namespace star::gnn
