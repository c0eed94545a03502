#pragma once

#include <functional>
#include <string>
#include <vector>

#include "seqinf/crf.hpp"

namespace seqinf {

// One weighted loss species over one example. Conditional and Marginal refer
// to the segment's labels; Marginal masks them out.
struct LossTerm {
  enum class Kind { Joint, Conditional, Marginal };
  int example_index = 0;
  Kind kind = Kind::Joint;
  Segment segment;  // ignored for Joint
  double weight = 1.0;
};

// loss(theta) = normalizer * sum_i weight_i * term_loss_i + (l2_ridge/2)*|theta|^2.
// The default objective carries one Joint term of weight 1 per example with
// normalizer 1/|D|, i.e. the mean negative log-likelihood.
struct Objective {
  const Dataset* dataset = nullptr;
  std::vector<LossTerm> terms;
  double normalizer = 1.0;
  double l2_ridge = 0.0;

  static Objective mean_joint(const Dataset& dataset, double l2_ridge);
};

struct TrainConfig {
  double l2_ridge = 1e-3;
  int max_iters = 500;
  double grad_tol = 1e-6;  // stop when max |grad entry| <= grad_tol
  int lbfgs_memory = 10;
  std::uint64_t seed = 0;
  double init_uniform_scale = 0.0;  // 0 keeps the all-zeros init
};

struct Diagnostics {
  int iterations = 0;
  int evaluations = 0;
  double final_loss = 0.0;
  double final_grad_inf_norm = 0.0;
  bool converged = false;
  std::vector<double> loss_history;  // loss at each accepted iterate, init first
};

// Exact loss and analytic gradient of the composite objective.
std::pair<double, CrfGradient> evaluate(const Objective& objective, const CrfParams& params);

// L-BFGS (two-loop recursion, Armijo backtracking). Deterministic given
// (objective, config, init). Throws NumericError when the loss turns
// non-finite and no backtracking step recovers.
std::pair<CrfParams, Diagnostics> minimize(const Objective& objective, const TrainConfig& config,
                                           const CrfParams& init);

// Generic flat-vector variant used by the tests and the CRF path above.
using FlatObjective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;
std::pair<Eigen::VectorXd, Diagnostics> minimize_flat(const FlatObjective& fn,
                                                      const Eigen::VectorXd& init, int max_iters,
                                                      double grad_tol, int memory);

CrfParams initial_params(const TrainConfig& config, int num_labels, int feature_dim);

}  // namespace seqinf
