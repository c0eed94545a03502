#include "seqinf/trainer.hpp"

#include <cmath>
#include <deque>

#include "seqinf/errors.hpp"
#include "seqinf/rng.hpp"

namespace seqinf {

Objective Objective::mean_joint(const Dataset& dataset, double l2_ridge) {
  Objective obj;
  obj.dataset = &dataset;
  obj.l2_ridge = l2_ridge;
  obj.normalizer = dataset.empty() ? 1.0 : 1.0 / static_cast<double>(dataset.size());
  obj.terms.reserve(dataset.size());
  for (int i = 0; i < static_cast<int>(dataset.size()); ++i)
    obj.terms.push_back(LossTerm{i, LossTerm::Kind::Joint, Segment{}, 1.0});
  return obj;
}

std::pair<double, CrfGradient> evaluate(const Objective& objective, const CrfParams& params) {
  require(objective.dataset != nullptr, "objective has no dataset");
  const Dataset& data = *objective.dataset;
  double loss = 0.0;
  CrfGradient grad = CrfGradient::zero(params.num_labels(), params.feature_dim());

  for (const LossTerm& term : objective.terms) {
    if (term.example_index < 0 || term.example_index >= static_cast<int>(data.size()))
      throw DataError("loss term references example " + std::to_string(term.example_index) +
                      " outside the dataset");
    const TaggedExample& ex = data[term.example_index];
    double term_loss = 0.0;
    CrfGradient term_grad;
    try {
      switch (term.kind) {
        case LossTerm::Kind::Joint:
          term_loss = -joint_log_prob(ex.obs, ex.labels, params);
          term_grad = grad_joint_loss(ex.obs, ex.labels, params);
          break;
        case LossTerm::Kind::Conditional:
          term_loss = -conditional_segment_log_prob(ex.obs, ex.labels, term.segment, params);
          term_grad = grad_conditional_loss(ex.obs, ex.labels, term.segment, params);
          break;
        case LossTerm::Kind::Marginal: {
          PartialLabelSequence partial(ex.labels.begin(), ex.labels.end());
          for (int t = term.segment.a - 1; t <= term.segment.b - 1; ++t) partial[t] = kMasked;
          term_loss = -marginal_log_prob(ex.obs, partial, params);
          term_grad = grad_marginal_loss(ex.obs, partial, params);
          break;
        }
      }
    } catch (const std::invalid_argument& e) {
      throw DataError("loss term on example " + std::to_string(term.example_index) + ": " +
                      e.what());
    }
    loss += term.weight * term_loss;
    term_grad *= term.weight;
    grad += term_grad;
  }

  loss *= objective.normalizer;
  grad *= objective.normalizer;

  if (objective.l2_ridge > 0.0) {
    loss += 0.5 * objective.l2_ridge *
            (params.emission.squaredNorm() + params.transition.squaredNorm());
    grad.d_emission += objective.l2_ridge * params.emission;
    grad.d_transition += objective.l2_ridge * params.transition;
  }
  return {loss, grad};
}

std::pair<Eigen::VectorXd, Diagnostics> minimize_flat(const FlatObjective& fn,
                                                      const Eigen::VectorXd& init, int max_iters,
                                                      double grad_tol, int memory) {
  const auto n = init.size();
  Eigen::VectorXd x = init;
  Eigen::VectorXd g(n);
  Diagnostics diag;

  double f = fn(x, g);
  ++diag.evaluations;
  if (!std::isfinite(f)) throw NumericError("objective is non-finite at the initial point");
  diag.loss_history.push_back(f);

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;

  for (int iter = 0; iter < max_iters; ++iter) {
    diag.iterations = iter;
    if (g.lpNorm<Eigen::Infinity>() <= grad_tol) {
      diag.converged = true;
      break;
    }

    // two-loop recursion
    Eigen::VectorXd q = g;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (!s_hist.empty()) {
      const double gamma =
          s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Eigen::VectorXd dir = -q;

    double slope = g.dot(dir);
    if (!(slope < 0.0)) {  // fall back to steepest descent
      dir = -g;
      slope = -g.squaredNorm();
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    // Armijo backtracking
    double step = s_hist.empty() ? std::min(1.0, 1.0 / std::max(1.0, g.lpNorm<Eigen::Infinity>()))
                                 : 1.0;
    const double c1 = 1e-4;
    Eigen::VectorXd x_new(n), g_new(n);
    double f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + step * dir;
      f_new = fn(x_new, g_new);
      ++diag.evaluations;
      if (std::isfinite(f_new) && f_new <= f + c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // cannot make progress along this direction; report where we stopped
      diag.final_loss = f;
      diag.final_grad_inf_norm = g.lpNorm<Eigen::Infinity>();
      if (!std::isfinite(f_new))
        throw NumericError("line search hit a non-finite loss; last finite loss " +
                           std::to_string(f));
      break;
    }

    Eigen::VectorXd s = x_new - x;
    Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x = std::move(x_new);
    g = g_new;
    f = f_new;
    diag.loss_history.push_back(f);
    diag.iterations = iter + 1;
  }

  if (!diag.converged && g.lpNorm<Eigen::Infinity>() <= grad_tol) diag.converged = true;
  diag.final_loss = f;
  diag.final_grad_inf_norm = g.lpNorm<Eigen::Infinity>();
  return {x, diag};
}

CrfParams initial_params(const TrainConfig& config, int num_labels, int feature_dim) {
  CrfParams p = CrfParams::zero(num_labels, feature_dim);
  if (config.init_uniform_scale > 0.0) {
    Rng rng(config.seed);
    const double s = config.init_uniform_scale;
    for (int i = 0; i < p.emission.size(); ++i) p.emission.data()[i] = rng.uniform(-s, s);
    for (int i = 0; i < p.transition.size(); ++i) p.transition.data()[i] = rng.uniform(-s, s);
  }
  return p;
}

std::pair<CrfParams, Diagnostics> minimize(const Objective& objective, const TrainConfig& config,
                                           const CrfParams& init) {
  const int C = init.num_labels();
  const int d = init.feature_dim();
  const FlatObjective fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const CrfParams p = unflatten(x, C, d);
    const auto [loss, grad] = evaluate(objective, p);
    g = flatten(grad);
    return loss;
  };
  auto [x, diag] =
      minimize_flat(fn, flatten(init), config.max_iters, config.grad_tol, config.lbfgs_memory);
  return {unflatten(x, C, d), diag};
}

}  // namespace seqinf
