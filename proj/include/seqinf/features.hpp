#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqinf/crf.hpp"

namespace seqinf {

enum class OovPolicy : std::uint8_t { ZeroVector = 0, HashedBucket = 1 };

// Pretrained token embeddings, immutable after load.
struct EmbeddingTable {
  int dim = 0;
  std::unordered_map<std::string, Eigen::VectorXd> entries;
  OovPolicy oov_policy = OovPolicy::ZeroVector;
  int hash_buckets = 0;
  bool lowercase_lookup = true;

  // Applies case normalization, then the OOV policy.
  Eigen::VectorXd lookup(const std::string& token) const;
};

// Text format: one "token v1 ... v_dim" line per entry; dimension is fixed by
// the first line, duplicates keep the first occurrence.
EmbeddingTable load_embeddings(const std::string& path,
                               OovPolicy oov_policy = OovPolicy::ZeroVector,
                               int hash_buckets = 0);

enum SyntacticFlag : std::uint8_t {
  kFlagDigit = 1,
  kFlagCapitalized = 2,
  kFlagTitleCase = 4,
  kFlagStopword = 8,
};

struct FeatureConfig {
  bool use_embeddings = true;
  std::uint8_t syntactic_flags =
      kFlagDigit | kFlagCapitalized | kFlagTitleCase | kFlagStopword;
  int context_window = 1;  // 0 or 1
  std::vector<std::string> stopword_list;
  bool lowercase_lookup = true;

  int flag_count() const;
  // Total feature dimension implied by this config and an embedding dim.
  int dimension(int embedding_dim) const;
};

// One token per line, '#' starts a comment.
std::vector<std::string> load_stopwords(const std::string& path);
std::vector<std::string> default_stopwords();

// Indicator block for one token, in flag order digit, capitalized,
// title_case, stopword (enabled flags only).
Eigen::VectorXd syntactic_indicators(const std::string& token, const FeatureConfig& config);

// Per-token vector: [embedding | own indicators | left indicators | right
// indicators]; neighbor blocks are zero at the boundaries and absent when
// context_window is 0.
ObservationSequence extract_features(const std::vector<std::string>& tokens,
                                     const EmbeddingTable& table, const FeatureConfig& config);

}  // namespace seqinf
