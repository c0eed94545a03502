#include "seqinf/exact.hpp"

#include <algorithm>
#include <cmath>

#include "seqinf/errors.hpp"
#include "seqinf/rng.hpp"
#include "seqinf/stats.hpp"

namespace seqinf {

Objective removal_objective(const Dataset& dataset, const RemovalSpec& spec, double l2_ridge) {
  require(spec.example >= 0 && spec.example < static_cast<int>(dataset.size()),
          "removal references an example outside the dataset");
  Objective obj = Objective::mean_joint(dataset, l2_ridge);
  if (spec.segment.has_value()) {
    detail::check_segment(*spec.segment, dataset[spec.example].obs.length());
    obj.terms.push_back(LossTerm{spec.example, LossTerm::Kind::Conditional, *spec.segment, -1.0});
  } else {
    obj.terms.erase(obj.terms.begin() + spec.example);
  }
  return obj;
}

std::pair<CrfParams, Diagnostics> retrain_without_segment(const Dataset& dataset,
                                                          const RemovalSpec& spec,
                                                          const CrfParams& base_params,
                                                          const TrainConfig& config) {
  const Objective obj = removal_objective(dataset, spec, config.l2_ridge);
  auto result = minimize(obj, config, base_params);
  if (!result.second.converged)
    throw NumericError("retraining did not converge; final grad inf-norm " +
                       std::to_string(result.second.final_grad_inf_norm));
  return result;
}

ExactInfluenceRecord exact_segment_influence(const Dataset& dataset, const RemovalSpec& spec,
                                             const TaggedExample& test_example,
                                             const Locator& test, const CrfParams& base_params,
                                             const TrainConfig& config) {
  const auto [retrained, diag] = retrain_without_segment(dataset, spec, base_params, config);
  const double before =
      -conditional_segment_log_prob(test_example.obs, test_example.labels, test.segment,
                                    base_params);
  const double after = -conditional_segment_log_prob(test_example.obs, test_example.labels,
                                                     test.segment, retrained);
  ExactInfluenceRecord rec;
  rec.removal = spec;
  rec.test = test;
  rec.actual_delta = after - before;
  rec.retrain_diagnostics = diag;
  return rec;
}

namespace {

struct TokenRef {
  int example;
  int position;  // 1-based
};

}  // namespace

ValidationResult validation_experiment(const Dataset& train, const Dataset& val,
                                       const CrfParams& params, const TrainConfig& config,
                                       const ValidationOptions& options) {
  require(config.l2_ridge > 0.0, "validation experiment needs a strictly convex objective");
  require(!train.empty() && !val.empty(), "empty dataset");

  // mispredicted validation tokens under the Viterbi rule
  std::vector<TokenRef> mispredicted;
  for (int i = 0; i < static_cast<int>(val.size()); ++i) {
    const LabelSequence decoded = viterbi_decode(val[i].obs, params).first;
    for (int t = 0; t < val[i].obs.length(); ++t)
      if (decoded[t] != val[i].labels[t]) mispredicted.push_back({i, t + 1});
  }
  if (mispredicted.empty())
    throw NumericError("no mispredicted validation tokens; nothing to validate");

  ValidationResult result;
  Rng rng(options.seed);
  rng.shuffle(mispredicted);
  if (static_cast<int>(mispredicted.size()) > options.n_test_tokens) {
    mispredicted.resize(options.n_test_tokens);
  } else {
    result.fewer_mispredictions_than_requested =
        static_cast<int>(mispredicted.size()) < options.n_test_tokens;
  }

  const HessianMode mode =
      options.mode.value_or(HessianMode::explicit_damped(config.l2_ridge));
  const InfluenceEngine engine(train, params, mode);
  const GradientCache cache = build_gradient_cache(train, params, Granularity::Token);

  // record index lookup: records are laid out example-major, position-minor
  std::vector<std::size_t> offset(train.size() + 1, 0);
  for (std::size_t i = 0; i < train.size(); ++i)
    offset[i + 1] = offset[i] + train[i].obs.length();

  // top-k scans, one pre-solved direction per test token
  std::vector<CrfGradient> solved_tests;
  solved_tests.reserve(mispredicted.size());
  std::vector<Locator> pool;
  for (const TokenRef& tok : mispredicted) {
    const Locator loc{tok.example, Segment{tok.position, tok.position}};
    const TopKResult top = top_k_influential(engine, val[tok.example], loc, options.top_k, cache,
                                             RankBy::Absolute);
    for (const auto& res : top.results) {
      const bool seen = std::find_if(pool.begin(), pool.end(), [&](const Locator& l) {
                          return l.example == res.train.example &&
                                 l.segment == res.train.segment;
                        }) != pool.end();
      if (!seen) pool.push_back(res.train);
    }
    solved_tests.push_back(engine.solve(grad_conditional_loss(
        val[tok.example].obs, val[tok.example].labels, loc.segment, params)));
  }
  if (pool.empty()) throw NumericError("empty removal pool; correlation undefined");
  result.pool = pool;

  // sequential removal: accumulate one conditional term per pool token and
  // retrain after each addition, warm-starting from the previous iterate
  Objective obj = Objective::mean_joint(train, config.l2_ridge);
  CrfParams current = params;
  for (const Locator& loc : pool) {
    obj.terms.push_back(LossTerm{loc.example, LossTerm::Kind::Conditional, loc.segment, -1.0});
    auto [next, diag] = minimize(obj, config, current);
    if (!diag.converged)
      throw NumericError("sequential removal retrain did not converge at pool size " +
                         std::to_string(obj.terms.size() - train.size()));
    current = std::move(next);
    result.total_retrain_iterations += diag.iterations;
  }

  // pair up first-order predictions with observed deltas
  const double inv_n = 1.0 / static_cast<double>(train.size());
  std::vector<double> predicted, actual;
  for (std::size_t i = 0; i < mispredicted.size(); ++i) {
    const TokenRef& tok = mispredicted[i];
    const Locator loc{tok.example, Segment{tok.position, tok.position}};
    double pred = 0.0;
    for (const Locator& rem : pool) {
      const TokenGradientRecord& rec = cache.tokens[offset[rem.example] + rem.segment.a - 1];
      const double value = -engine.record_dot(solved_tests[i], rec);
      pred += -inv_n * value;  // removal is an epsilon step of -1/|D|
    }
    const double before = -conditional_segment_log_prob(val[tok.example].obs,
                                                        val[tok.example].labels, loc.segment,
                                                        params);
    const double after = -conditional_segment_log_prob(val[tok.example].obs,
                                                       val[tok.example].labels, loc.segment,
                                                       current);
    ValidationPair pair;
    pair.test = loc;
    pair.predicted = pred;
    pair.actual = after - before;
    result.pairs.push_back(pair);
    predicted.push_back(pred);
    actual.push_back(pair.actual);
  }

  result.pearson_r = pearson(predicted, actual);
  int agree = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] * actual[i] > 0.0 ||
        (std::abs(predicted[i]) < 1e-12 && std::abs(actual[i]) < 1e-12))
      ++agree;
  }
  result.sign_agreement =
      predicted.empty() ? 0.0 : static_cast<double>(agree) / predicted.size();
  return result;
}

}  // namespace seqinf
