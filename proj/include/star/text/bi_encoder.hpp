#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "star/core/parameters.hpp"
#include "star/core/value_graph.hpp"
#include "star/text/records.hpp"
#include "star/text/tokenizer.hpp"

namespace star::text {

struct BiEncoderConfig {
  std::uint64_t vocab_size = 32768;
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t max_tokens = 256;
  std::size_t head_hidden = 64;

  void validate() const;
  TokenizerConfig tokenizer() const { return {vocab_size, max_tokens}; }
};

using TokenSeq = std::vector<std::int64_t>;

/// Shared text encoder plus the pairwise prediction head.
///
/// Encoder: mean of token embeddings, then `layers` dense leaky-ReLU layers;
/// the embedding is the L2-normalized average of every layer's output. The
/// three record kinds share all weights and differ only by their prefix.
/// Head: [profile*doc, resume*doc] -> hidden (leaky-ReLU) -> 1 -> sigmoid.
class BiEncoderModel {
 public:
  BiEncoderModel(BiEncoderConfig cfg, std::uint64_t seed);

  const BiEncoderConfig& config() const { return cfg_; }
  core::ParameterSet& params() { return params_; }
  const core::ParameterSet& params() const { return params_; }

  /// Token ids of prefix + text, truncated to max_tokens.
  TokenSeq tokens(TextKind kind, std::string_view text) const;

  /// Embeddings [B, dim] for the given sequences; `g` must be bound to params().
  core::Var encode(core::ValueGraph& g, std::span<const TokenSeq* const> seqs) const;
  /// Probabilities [B].
  core::Var head(core::ValueGraph& g, core::Var profile, core::Var resume, core::Var document) const;

  std::vector<double> embed(const TextRecord& record) const;
  std::vector<double> embed(TextKind kind, std::string_view text) const;
  /// Rows in input order; batched internally.
  core::Tensor embed_many(TextKind kind, std::span<const std::string> texts) const;
  double predict_pair(std::span<const double> profile, std::span<const double> resume,
                      std::span<const double> document) const;

  /// Frozen encoder: only head parameters receive updates.
  void set_encoder_trainable(bool trainable);

  void save(const std::filesystem::path& path) const;
  static BiEncoderModel load(const std::filesystem::path& path);

 private:
  BiEncoderModel(BiEncoderConfig cfg) : cfg_(cfg) {}
  void declare(std::uint64_t seed);
  core::ValueGraph inference_graph() const;

  BiEncoderConfig cfg_;
  core::ParameterSet params_;
};

}  // namespace star::text
