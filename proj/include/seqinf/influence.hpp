#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "seqinf/crf.hpp"

namespace seqinf {

enum class Granularity : std::uint8_t { Instance = 0, Token = 1 };

// How the inverse training-loss Hessian is handled in influence products.
struct HessianMode {
  enum class Kind { Identity, ExplicitDamped, CgHvp };
  Kind kind = Kind::Identity;
  double damping = 1e-3;  // > 0 for the two Hessian-using variants
  int max_cg_iters = 2000;
  double cg_tol = 1e-10;

  static HessianMode identity() { return {Kind::Identity, 0.0, 0, 0.0}; }
  static HessianMode explicit_damped(double damping) {
    return {Kind::ExplicitDamped, damping, 0, 0.0};
  }
  static HessianMode cg_hvp(double damping, int max_iters = 2000, double tol = 1e-10) {
    return {Kind::CgHvp, damping, max_iters, tol};
  }
};

struct Locator {
  int example = 0;
  Segment segment;
  bool operator==(const Locator&) const = default;
};

enum class Direction { Supporting, Opposing, Neutral };

// Signed influence of a train segment on a test segment; negative values
// support the test labels (their inclusion lowers the test loss).
struct InfluenceResult {
  Locator train;
  Locator test;
  double value = 0.0;
  Direction direction = Direction::Neutral;
};

inline Direction direction_of(double value) {
  if (value < 0.0) return Direction::Supporting;
  if (value > 0.0) return Direction::Opposing;
  return Direction::Neutral;
}

// Factored single-token conditional-loss gradient: dW = error (x) features,
// dT rebuilt from the neighbor labels. O(d + C) per record.
struct TokenGradientRecord {
  std::int32_t example = 0;
  std::int32_t position = 0;    // 1-based
  std::int32_t prev_label = -1; // -1 at the left boundary
  std::int32_t next_label = -1; // -1 at the right boundary
  Eigen::VectorXd error;        // length C
  Eigen::VectorXd features;     // length d

  CrfGradient reconstruct(int num_labels) const;
};

struct GradientCache {
  Granularity granularity = Granularity::Token;
  int num_labels = 0;
  int feature_dim = 0;
  std::vector<TokenGradientRecord> tokens;    // Token granularity
  std::vector<CrfGradient> instances;         // Instance granularity

  std::size_t size() const {
    return granularity == Granularity::Token ? tokens.size() : instances.size();
  }
};

GradientCache build_gradient_cache(const Dataset& dataset, const CrfParams& params,
                                   Granularity granularity, int threads = 1);

// Versioned little-endian binary cache file.
void save_cache(const GradientCache& cache, const std::string& path);
GradientCache load_cache(const std::string& path);
// Exact on-disk size of a cache, from the documented layout.
std::size_t cache_file_size(const GradientCache& cache);

// (H + damping*I) v where H is the exact Hessian of the mean joint training
// loss restricted to (W, T), computed from forward-backward conditionals.
CrfGradient hvp(const Dataset& dataset, const CrfParams& params, const CrfGradient& v,
                double damping);

// Shared solve state for a fixed (dataset, params, mode): the dense damped
// Hessian is built and factored once, CG reuses hvp, Identity is a no-op.
class InfluenceEngine {
 public:
  InfluenceEngine(const Dataset& dataset, const CrfParams& params, HessianMode mode);

  const Dataset& dataset() const { return *dataset_; }
  const CrfParams& params() const { return params_; }
  const HessianMode& mode() const { return mode_; }

  // H^-1 g per the mode.
  CrfGradient solve(const CrfGradient& g) const;
  // -a^T H^-1 b
  double influence_value(const CrfGradient& test_grad, const CrfGradient& train_grad) const;
  // dot of a pre-solved test direction with a factored record
  double record_dot(const CrfGradient& solved_test, const TokenGradientRecord& rec) const;

 private:
  const Dataset* dataset_;
  CrfParams params_;
  HessianMode mode_;
  mutable std::shared_ptr<Eigen::LDLT<Eigen::MatrixXd>> dense_factor_;

  void ensure_dense_factor() const;
  Eigen::VectorXd cg_solve(const Eigen::VectorXd& b) const;
};

// Eq.-9 style products. Test gradients are joint-loss gradients at instance
// level and conditional segment-loss gradients at segment level.
InfluenceResult instance_influence(const InfluenceEngine& engine, const TaggedExample& test,
                                   int test_index, int train_index, const GradientCache& cache);

InfluenceResult segment_influence(const InfluenceEngine& engine, const TaggedExample& test,
                                  const Locator& test_loc, const Locator& train_loc,
                                  const GradientCache& cache);

enum class RankBy { Signed, Absolute };

struct TopKResult {
  std::vector<InfluenceResult> results;
  bool truncated_to_cache = false;  // set when k exceeded the cache size
};

// Exhaustive scan over the Token-granularity cache, descending by the chosen
// key, ties toward lower (example, position).
TopKResult top_k_influential(const InfluenceEngine& engine, const TaggedExample& test,
                             const Locator& test_loc, int k, const GradientCache& cache,
                             RankBy rank_by);

enum class Similarity { Dot, Cosine };

struct NeighborResult {
  int example = 0;
  int position = 0;  // 1-based
  double similarity = 0.0;
  int label = -1;
  bool zero_norm = false;  // cosine against a zero-norm candidate
};

// Top-k train tokens by feature similarity to a query vector. Zero-norm
// candidates rank last under cosine and are flagged.
std::vector<NeighborResult> segment_nn(const Eigen::VectorXd& query, const Dataset& train,
                                       Similarity similarity, int k);

}  // namespace seqinf
