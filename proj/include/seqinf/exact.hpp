#pragma once

#include <optional>
#include <vector>

#include "seqinf/influence.hpp"
#include "seqinf/trainer.hpp"

namespace seqinf {

// What gets removed before retraining: a labeled segment of one example, or
// the whole example.
struct RemovalSpec {
  int example = 0;
  std::optional<Segment> segment;  // nullopt = instance removal

  static RemovalSpec of_segment(int example, Segment seg) { return {example, seg}; }
  static RemovalSpec of_instance(int example) { return {example, std::nullopt}; }
};

struct ExactInfluenceRecord {
  RemovalSpec removal;
  Locator test;
  double actual_delta = 0.0;
  double predicted_delta = 0.0;
  Diagnostics retrain_diagnostics;
};

// Objective for training without the removed piece: the mean joint loss with
// either a -1 weighted conditional term for the segment (the Eq.-4 rewrite)
// or the example's joint term dropped. The 1/|D| normalizer is kept, so the
// conditional term enters the objective with coefficient -1/|D|.
Objective removal_objective(const Dataset& dataset, const RemovalSpec& spec, double l2_ridge);

// Warm-started retraining from the converged base parameters.
std::pair<CrfParams, Diagnostics> retrain_without_segment(const Dataset& dataset,
                                                          const RemovalSpec& spec,
                                                          const CrfParams& base_params,
                                                          const TrainConfig& config);

// Change in the test segment's conditional loss caused by the removal.
ExactInfluenceRecord exact_segment_influence(const Dataset& dataset, const RemovalSpec& spec,
                                             const TaggedExample& test_example,
                                             const Locator& test, const CrfParams& base_params,
                                             const TrainConfig& config);

struct ValidationOptions {
  int n_test_tokens = 20;
  int top_k = 20;
  std::uint64_t seed = 0;
  std::optional<HessianMode> mode;  // defaults to ExplicitDamped(l2_ridge)
};

struct ValidationPair {
  Locator test;        // validation token (example index in the val set)
  double predicted;    // first-order delta from the pooled removals
  double actual;       // retrained minus base conditional loss
};

struct ValidationResult {
  std::vector<ValidationPair> pairs;
  double pearson_r = 0.0;
  double sign_agreement = 0.0;
  std::vector<Locator> pool;  // deduplicated removal pool, in removal order
  bool fewer_mispredictions_than_requested = false;
  int total_retrain_iterations = 0;
  std::vector<double> spearman_log;  // optional rank-stability measurements
};

// Samples mispredicted validation tokens, pools their top-k influential train
// tokens by absolute value, removes the pool sequentially (one accumulated
// conditional term per step, retraining after each), and correlates the
// first-order predictions with the observed conditional-loss deltas.
ValidationResult validation_experiment(const Dataset& train, const Dataset& val,
                                       const CrfParams& params, const TrainConfig& config,
                                       const ValidationOptions& options);

}  // namespace seqinf
