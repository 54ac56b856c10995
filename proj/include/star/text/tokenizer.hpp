#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace star::text {

std::uint64_t fnv1a64(std::string_view bytes);

struct TokenizerConfig {
  std::uint64_t vocab_size = 32768;
  std::size_t max_tokens = 256;
};

/// Lowercases ASCII letters, splits on whitespace and punctuation (ASCII and
/// the common Unicode separator blocks), hashes each token with FNV-1a 64 mod V.
/// Invalid UTF-8 bytes are kept inside tokens as-is.
std::vector<std::int64_t> tokenize(std::string_view text, const TokenizerConfig& cfg);

/// Token strings before hashing; exposed for tests and diagnostics.
std::vector<std::string> split_tokens(std::string_view text);

}  // namespace star::text
