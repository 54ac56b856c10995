#pragma once

#include <vector>

#include "star/eval/settings.hpp"
#include "star/eval/world.hpp"
#include "star/gnn/config.hpp"
#include "star/gnn/training.hpp"
#include "star/graph/hetero_graph.hpp"
#include "star/text/bi_encoder.hpp"
#include "star/text/records.hpp"
#include "star/text/trainer.hpp"

// Settings readers shared by the CLI and the experiment templates. Each takes
// the defaults to fall back on, so desk-scale experiments and the CLI can
// differ without separate key sets.
namespace star::eval {

WorldConfig world_config(const Settings& s, WorldConfig base = {});
TwoCommunityConfig two_community_config(const Settings& s, TwoCommunityConfig base = {});

text::BiEncoderConfig encoder_config(const Settings& s, text::BiEncoderConfig base = {});
text::EncoderTrainOptions encoder_train_options(const Settings& s, text::EncoderTrainOptions base = {});

gnn::EncoderConfig gnn_config(const Settings& s, gnn::EncoderConfig base = {});
/// Tasks come from gnn.tasks (a task-spec JSON path) or default to the apply task.
gnn::GnnTrainOptions gnn_train_options(const Settings& s, gnn::GnnTrainOptions base = {});

/// Encoder and GNN sizes used by the experiment templates.
text::BiEncoderConfig desk_encoder_config();
text::EncoderTrainOptions desk_encoder_options();
gnn::EncoderConfig desk_gnn_config();
gnn::GnnTrainOptions desk_gnn_options();

/// Members get the mean of their profile and resume embeddings, jobs their
/// description embedding. Records for entities absent from the graph are ignored.
void attach_text_embeddings(graph::GraphBuilder& b, const text::BiEncoderModel& model,
                            const std::vector<text::TextRecord>& texts);

gnn::LinkPredictionTask default_apply_task();

}  // namespace star::eval
