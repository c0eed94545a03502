#pragma once

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "seqinf/errors.hpp"

// Linear-chain CRF in log space: joint / marginal / conditional segment
// likelihoods, Viterbi, posteriors, and analytic gradients restricted to the
// emission matrix W (C x d) and transition matrix T (C x C). The score of a
// labeling is sum_t W(y_t,:) . F_t + sum_{t>=2} T(y_{t-1}, y_t); there are no
// start/end potentials.
namespace seqinf {

inline constexpr int kMasked = -1;

// Inclusive token range [a, b], 1-based, the unit of attribution.
struct Segment {
  int a = 1;
  int b = 1;
  bool operator==(const Segment&) const = default;
};

struct LabelSet {
  std::vector<std::string> names;

  int size() const { return static_cast<int>(names.size()); }

  int index_of(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (names[i] == name) return i;
    return -1;
  }

  static LabelSet from_names(std::vector<std::string> names) {
    require(names.size() >= 2, "label set needs at least 2 labels");
    for (std::size_t i = 0; i < names.size(); ++i)
      for (std::size_t j = i + 1; j < names.size(); ++j)
        require(names[i] != names[j], "duplicate label name: " + names[i]);
    return LabelSet{std::move(names)};
  }
};

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using DenseVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Token features, one column per token (d x T), plus surface forms.
// tokens may be left empty for purely numeric instances.
template <typename Scalar>
struct ObservationSequenceT {
  DenseMatrix<Scalar> features;
  std::vector<std::string> tokens;

  int length() const { return static_cast<int>(features.cols()); }
  int dim() const { return static_cast<int>(features.rows()); }
};

using LabelSequence = std::vector<int>;
// Entries are label indices or kMasked.
using PartialLabelSequence = std::vector<int>;

template <typename Scalar>
struct CrfParamsT {
  DenseMatrix<Scalar> emission;    // C x d
  DenseMatrix<Scalar> transition;  // C x C, row = previous label

  int num_labels() const { return static_cast<int>(emission.rows()); }
  int feature_dim() const { return static_cast<int>(emission.cols()); }

  static CrfParamsT zero(int num_labels, int feature_dim) {
    CrfParamsT p;
    p.emission = DenseMatrix<Scalar>::Zero(num_labels, feature_dim);
    p.transition = DenseMatrix<Scalar>::Zero(num_labels, num_labels);
    return p;
  }
};

template <typename Scalar>
struct CrfGradientT {
  DenseMatrix<Scalar> d_emission;
  DenseMatrix<Scalar> d_transition;

  static CrfGradientT zero(int num_labels, int feature_dim) {
    CrfGradientT g;
    g.d_emission = DenseMatrix<Scalar>::Zero(num_labels, feature_dim);
    g.d_transition = DenseMatrix<Scalar>::Zero(num_labels, num_labels);
    return g;
  }

  CrfGradientT& operator+=(const CrfGradientT& o) {
    d_emission += o.d_emission;
    d_transition += o.d_transition;
    return *this;
  }

  CrfGradientT& operator*=(Scalar c) {
    d_emission *= c;
    d_transition *= c;
    return *this;
  }

  Scalar inf_norm() const {
    return std::max(d_emission.size() ? d_emission.template lpNorm<Eigen::Infinity>() : Scalar(0),
                    d_transition.size() ? d_transition.template lpNorm<Eigen::Infinity>() : Scalar(0));
  }

  Scalar squared_norm() const {
    return d_emission.squaredNorm() + d_transition.squaredNorm();
  }

  Scalar dot(const CrfGradientT& o) const {
    return d_emission.cwiseProduct(o.d_emission).sum() +
           d_transition.cwiseProduct(o.d_transition).sum();
  }
};

template <typename Scalar>
struct TaggedExampleT {
  ObservationSequenceT<Scalar> obs;
  LabelSequence labels;
};

// Flat parameter order: emission column-major, then transition column-major.
template <typename Scalar>
DenseVector<Scalar> flatten(const CrfParamsT<Scalar>& p) {
  DenseVector<Scalar> v(p.emission.size() + p.transition.size());
  v.head(p.emission.size()) =
      Eigen::Map<const DenseVector<Scalar>>(p.emission.data(), p.emission.size());
  v.tail(p.transition.size()) =
      Eigen::Map<const DenseVector<Scalar>>(p.transition.data(), p.transition.size());
  return v;
}

template <typename Scalar>
DenseVector<Scalar> flatten(const CrfGradientT<Scalar>& g) {
  DenseVector<Scalar> v(g.d_emission.size() + g.d_transition.size());
  v.head(g.d_emission.size()) =
      Eigen::Map<const DenseVector<Scalar>>(g.d_emission.data(), g.d_emission.size());
  v.tail(g.d_transition.size()) =
      Eigen::Map<const DenseVector<Scalar>>(g.d_transition.data(), g.d_transition.size());
  return v;
}

template <typename Scalar>
CrfParamsT<Scalar> unflatten(const DenseVector<Scalar>& v, int num_labels, int feature_dim) {
  require(v.size() == num_labels * feature_dim + num_labels * num_labels,
          "flat parameter size mismatch");
  CrfParamsT<Scalar> p;
  p.emission = Eigen::Map<const DenseMatrix<Scalar>>(v.data(), num_labels, feature_dim);
  p.transition = Eigen::Map<const DenseMatrix<Scalar>>(v.data() + num_labels * feature_dim,
                                                       num_labels, num_labels);
  return p;
}

template <typename Scalar>
CrfGradientT<Scalar> unflatten_gradient(const DenseVector<Scalar>& v, int num_labels,
                                        int feature_dim) {
  const CrfParamsT<Scalar> p = unflatten(v, num_labels, feature_dim);
  return CrfGradientT<Scalar>{p.emission, p.transition};
}

namespace detail {

template <typename Scalar>
Scalar neg_inf() {
  return -std::numeric_limits<Scalar>::infinity();
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = v.maxCoeff();
  if (!(m > neg_inf<Scalar>())) return neg_inf<Scalar>();
  return m + std::log((v.array() - m).exp().sum());
}

template <typename Scalar>
void check_instance(const ObservationSequenceT<Scalar>& obs, const CrfParamsT<Scalar>& params) {
  require(obs.length() >= 1, "sequence must have at least one token");
  require(obs.dim() == params.feature_dim(), "feature dimension mismatch");
  require(params.num_labels() >= 2, "need at least 2 labels");
  require(obs.features.allFinite(), "non-finite feature entries");
}

template <typename Scalar>
void check_labels(const ObservationSequenceT<Scalar>& obs, const LabelSequence& labels,
                  const CrfParamsT<Scalar>& params) {
  require(static_cast<int>(labels.size()) == obs.length(), "label length mismatch");
  for (int y : labels) require(y >= 0 && y < params.num_labels(), "label index out of range");
}

inline void check_segment(const Segment& seg, int length) {
  require(seg.a >= 1 && seg.a <= seg.b && seg.b <= length, "invalid segment bounds");
}

// Emission score matrix with disallowed labels pinned to -inf.
template <typename Scalar>
DenseMatrix<Scalar> constrained_scores(const DenseMatrix<Scalar>& scores,
                                       const PartialLabelSequence& partial) {
  DenseMatrix<Scalar> out = scores;
  for (int t = 0; t < static_cast<int>(partial.size()); ++t) {
    if (partial[t] == kMasked) continue;
    for (int c = 0; c < static_cast<int>(scores.rows()); ++c)
      if (c != partial[t]) out(c, t) = neg_inf<Scalar>();
  }
  return out;
}

// Forward/backward messages over a score lattice (C x T) with shared
// transitions. alpha(c,t) = log sum over prefixes ending in c; beta(c,t) the
// suffix analogue with beta(:,T-1) = 0.
template <typename Scalar>
struct ChainLattice {
  DenseMatrix<Scalar> alpha;
  DenseMatrix<Scalar> beta;
  Scalar log_z;
};

template <typename Scalar>
ChainLattice<Scalar> run_forward_backward(const DenseMatrix<Scalar>& scores,
                                          const DenseMatrix<Scalar>& trans) {
  const int C = static_cast<int>(scores.rows());
  const int T = static_cast<int>(scores.cols());
  ChainLattice<Scalar> lat;
  lat.alpha.resize(C, T);
  lat.beta.resize(C, T);

  lat.alpha.col(0) = scores.col(0);
  for (int t = 1; t < T; ++t) {
    for (int c = 0; c < C; ++c) {
      lat.alpha(c, t) = log_sum_exp((lat.alpha.col(t - 1) + trans.col(c)).eval()) + scores(c, t);
    }
  }

  lat.beta.col(T - 1).setZero();
  for (int t = T - 2; t >= 0; --t) {
    for (int c = 0; c < C; ++c) {
      lat.beta(c, t) = log_sum_exp(
          (trans.row(c).transpose() + scores.col(t + 1) + lat.beta.col(t + 1)).eval());
    }
  }

  lat.log_z = log_sum_exp(lat.alpha.col(T - 1).eval());
  return lat;
}

// Unary and adjacent-pair posteriors of a lattice.
template <typename Scalar>
struct ChainPosteriors {
  DenseMatrix<Scalar> unary;                 // C x T
  std::vector<DenseMatrix<Scalar>> pairwise; // T-1 entries, (prev, cur)
  Scalar log_z;
};

template <typename Scalar>
ChainPosteriors<Scalar> run_posteriors(const DenseMatrix<Scalar>& scores,
                                       const DenseMatrix<Scalar>& trans,
                                       bool want_pairwise = true) {
  const int C = static_cast<int>(scores.rows());
  const int T = static_cast<int>(scores.cols());
  const ChainLattice<Scalar> lat = run_forward_backward(scores, trans);
  require(std::isfinite(lat.log_z), "lattice has no admissible path");

  ChainPosteriors<Scalar> post;
  post.log_z = lat.log_z;
  post.unary = (lat.alpha + lat.beta).array() - lat.log_z;
  post.unary = post.unary.array().exp();

  if (want_pairwise) {
    post.pairwise.reserve(T - 1);
    for (int t = 1; t < T; ++t) {
      DenseMatrix<Scalar> lp = trans;
      lp.colwise() += lat.alpha.col(t - 1);
      lp.rowwise() += (scores.col(t) + lat.beta.col(t)).transpose();
      post.pairwise.push_back(((lp.array() - lat.log_z).exp()).matrix());
    }
  }
  return post;
}

// Restricted lattice for a segment [a,b]: only the segment's labels vary;
// interactions with the fixed boundary labels fold into the end emissions.
template <typename Scalar>
DenseMatrix<Scalar> segment_scores(const DenseMatrix<Scalar>& scores,
                                   const LabelSequence& labels, const Segment& seg,
                                   const CrfParamsT<Scalar>& params) {
  const int len = seg.b - seg.a + 1;
  const int T = static_cast<int>(scores.cols());
  DenseMatrix<Scalar> s = scores.middleCols(seg.a - 1, len);
  if (seg.a > 1) s.col(0) += params.transition.row(labels[seg.a - 2]).transpose();
  if (seg.b < T) s.col(len - 1) += params.transition.col(labels[seg.b]);
  return s;
}

}  // namespace detail

template <typename Scalar>
DenseMatrix<Scalar> emission_scores(const ObservationSequenceT<Scalar>& obs,
                                    const CrfParamsT<Scalar>& params) {
  return params.emission * obs.features;  // C x T
}

// Unnormalized score s(y, x).
template <typename Scalar>
Scalar sequence_score(const ObservationSequenceT<Scalar>& obs, const LabelSequence& labels,
                      const CrfParamsT<Scalar>& params) {
  detail::check_instance(obs, params);
  detail::check_labels(obs, labels, params);
  const DenseMatrix<Scalar> em = emission_scores(obs, params);
  Scalar s = em(labels[0], 0);
  for (int t = 1; t < obs.length(); ++t)
    s += params.transition(labels[t - 1], labels[t]) + em(labels[t], t);
  return s;
}

template <typename Scalar>
Scalar log_partition(const ObservationSequenceT<Scalar>& obs, const CrfParamsT<Scalar>& params) {
  detail::check_instance(obs, params);
  const DenseMatrix<Scalar> em = emission_scores(obs, params);
  return detail::run_forward_backward(em, params.transition).log_z;
}

template <typename Scalar>
Scalar joint_log_prob(const ObservationSequenceT<Scalar>& obs, const LabelSequence& labels,
                      const CrfParamsT<Scalar>& params) {
  return sequence_score(obs, labels, params) - log_partition(obs, params);
}

// log p(observed part | x): masked positions admit every label.
template <typename Scalar>
Scalar marginal_log_prob(const ObservationSequenceT<Scalar>& obs,
                         const PartialLabelSequence& partial, const CrfParamsT<Scalar>& params) {
  detail::check_instance(obs, params);
  require(static_cast<int>(partial.size()) == obs.length(), "partial label length mismatch");
  for (int y : partial)
    require(y == kMasked || (y >= 0 && y < params.num_labels()), "partial label out of range");
  const DenseMatrix<Scalar> em = emission_scores(obs, params);
  const Scalar log_z = detail::run_forward_backward(em, params.transition).log_z;
  const DenseMatrix<Scalar> masked = detail::constrained_scores(em, partial);
  const Scalar log_z_masked = detail::run_forward_backward(masked, params.transition).log_z;
  return log_z_masked - log_z;
}

// log p(y_[a,b] | y_-[a,b], x) on the restricted segment lattice.
template <typename Scalar>
Scalar conditional_segment_log_prob(const ObservationSequenceT<Scalar>& obs,
                                    const LabelSequence& labels, const Segment& seg,
                                    const CrfParamsT<Scalar>& params) {
  detail::check_instance(obs, params);
  detail::check_labels(obs, labels, params);
  detail::check_segment(seg, obs.length());

  const DenseMatrix<Scalar> em = emission_scores(obs, params);
  const DenseMatrix<Scalar> seg_scores = detail::segment_scores(em, labels, seg, params);
  const int len = seg.b - seg.a + 1;

  Scalar observed = seg_scores(labels[seg.a - 1], 0);
  for (int j = 1; j < len; ++j) {
    observed +=
        params.transition(labels[seg.a - 2 + j], labels[seg.a - 1 + j]) + seg_scores(labels[seg.a - 1 + j], j);
  }
  const Scalar log_z_seg = detail::run_forward_backward(seg_scores, params.transition).log_z;
  const Scalar result = observed - log_z_seg;

#ifndef NDEBUG
  // Independent route: conditional = joint - marginal (the segment masked).
  {
    PartialLabelSequence partial(labels.begin(), labels.end());
    for (int t = seg.a - 1; t <= seg.b - 1; ++t) partial[t] = kMasked;
    const Scalar via_identity =
        joint_log_prob(obs, labels, params) - marginal_log_prob(obs, partial, params);
    const Scalar scale = std::max<Scalar>(
        Scalar(1), std::max(std::abs(result), std::abs(via_identity)));
    assert(std::abs(result - via_identity) <= Scalar(1e-9) * scale);
  }
#endif
  return result;
}

// Highest-scoring labeling; ties resolved toward the lowest label index.
template <typename Scalar>
std::pair<LabelSequence, Scalar> viterbi_decode(const ObservationSequenceT<Scalar>& obs,
                                                const CrfParamsT<Scalar>& params) {
  detail::check_instance(obs, params);
  const int C = params.num_labels();
  const int T = obs.length();
  const DenseMatrix<Scalar> em = emission_scores(obs, params);

  DenseMatrix<Scalar> delta(C, T);
  Eigen::MatrixXi back(C, T);
  delta.col(0) = em.col(0);
  back.col(0).setConstant(-1);
  for (int t = 1; t < T; ++t) {
    for (int c = 0; c < C; ++c) {
      int best_prev = 0;
      Scalar best = delta(0, t - 1) + params.transition(0, c);
      for (int p = 1; p < C; ++p) {
        const Scalar cand = delta(p, t - 1) + params.transition(p, c);
        if (cand > best) {
          best = cand;
          best_prev = p;
        }
      }
      delta(c, t) = best + em(c, t);
      back(c, t) = best_prev;
    }
  }

  int best_last = 0;
  for (int c = 1; c < C; ++c)
    if (delta(c, T - 1) > delta(best_last, T - 1)) best_last = c;

  LabelSequence path(T);
  path[T - 1] = best_last;
  for (int t = T - 1; t > 0; --t) path[t - 1] = back(path[t], t);
  return {path, delta(best_last, T - 1)};
}

// p(y_t = c | x) as a T x C matrix; rows sum to 1.
template <typename Scalar>
DenseMatrix<Scalar> position_marginals(const ObservationSequenceT<Scalar>& obs,
                                       const CrfParamsT<Scalar>& params) {
  detail::check_instance(obs, params);
  const DenseMatrix<Scalar> em = emission_scores(obs, params);
  const auto post = detail::run_posteriors(em, params.transition, /*want_pairwise=*/false);
  return post.unary.transpose();
}

// Gradient of -log p(y|x) w.r.t. (W, T).
template <typename Scalar>
CrfGradientT<Scalar> grad_joint_loss(const ObservationSequenceT<Scalar>& obs,
                                     const LabelSequence& labels,
                                     const CrfParamsT<Scalar>& params) {
  detail::check_instance(obs, params);
  detail::check_labels(obs, labels, params);
  const int C = params.num_labels();
  const int T = obs.length();
  const DenseMatrix<Scalar> em = emission_scores(obs, params);
  const auto post = detail::run_posteriors(em, params.transition);

  DenseMatrix<Scalar> residual = post.unary;  // C x T
  for (int t = 0; t < T; ++t) residual(labels[t], t) -= Scalar(1);

  CrfGradientT<Scalar> g;
  g.d_emission = residual * obs.features.transpose();
  g.d_transition = DenseMatrix<Scalar>::Zero(C, C);
  for (int t = 1; t < T; ++t) {
    g.d_transition += post.pairwise[t - 1];
    g.d_transition(labels[t - 1], labels[t]) -= Scalar(1);
  }
  return g;
}

// Gradient of -log p(observed part | x).
template <typename Scalar>
CrfGradientT<Scalar> grad_marginal_loss(const ObservationSequenceT<Scalar>& obs,
                                        const PartialLabelSequence& partial,
                                        const CrfParamsT<Scalar>& params) {
  detail::check_instance(obs, params);
  require(static_cast<int>(partial.size()) == obs.length(), "partial label length mismatch");
  for (int y : partial)
    require(y == kMasked || (y >= 0 && y < params.num_labels()), "partial label out of range");

  const DenseMatrix<Scalar> em = emission_scores(obs, params);
  const auto full = detail::run_posteriors(em, params.transition);
  const auto constrained =
      detail::run_posteriors(detail::constrained_scores(em, partial), params.transition);

  CrfGradientT<Scalar> g;
  g.d_emission = (full.unary - constrained.unary) * obs.features.transpose();
  g.d_transition = DenseMatrix<Scalar>::Zero(params.num_labels(), params.num_labels());
  for (std::size_t t = 0; t < full.pairwise.size(); ++t)
    g.d_transition += full.pairwise[t] - constrained.pairwise[t];
  return g;
}

// Conditional posterior of the segment positions given everything else:
// unary (C x len) and adjacent pairs within the segment.
template <typename Scalar>
detail::ChainPosteriors<Scalar> conditional_segment_posteriors(
    const ObservationSequenceT<Scalar>& obs, const LabelSequence& labels, const Segment& seg,
    const CrfParamsT<Scalar>& params) {
  detail::check_instance(obs, params);
  detail::check_labels(obs, labels, params);
  detail::check_segment(seg, obs.length());
  const DenseMatrix<Scalar> em = emission_scores(obs, params);
  return detail::run_posteriors(detail::segment_scores(em, labels, seg, params),
                                params.transition);
}

// Gradient of -log p(y_[a,b] | y_-[a,b], x).
template <typename Scalar>
CrfGradientT<Scalar> grad_conditional_loss(const ObservationSequenceT<Scalar>& obs,
                                           const LabelSequence& labels, const Segment& seg,
                                           const CrfParamsT<Scalar>& params) {
  const auto post = conditional_segment_posteriors(obs, labels, seg, params);
  const int C = params.num_labels();
  const int T = obs.length();
  const int len = seg.b - seg.a + 1;

  DenseMatrix<Scalar> residual = post.unary;  // C x len
  for (int j = 0; j < len; ++j) residual(labels[seg.a - 1 + j], j) -= Scalar(1);

  CrfGradientT<Scalar> g;
  g.d_emission = residual * obs.features.middleCols(seg.a - 1, len).transpose();
  g.d_transition = DenseMatrix<Scalar>::Zero(C, C);
  for (int j = 1; j < len; ++j) {
    g.d_transition += post.pairwise[j - 1];
    g.d_transition(labels[seg.a - 2 + j], labels[seg.a - 1 + j]) -= Scalar(1);
  }
  if (seg.a > 1) g.d_transition.row(labels[seg.a - 2]) += residual.col(0).transpose();
  if (seg.b < T) g.d_transition.col(labels[seg.b]) += residual.col(len - 1);
  return g;
}

// Error vector of a single-token conditional: e_t = q_t - onehot(y_t), the
// factored-storage building block (dW = e_t (x) F_t).
template <typename Scalar>
DenseVector<Scalar> conditional_error_vector(const ObservationSequenceT<Scalar>& obs,
                                             const LabelSequence& labels, int position,
                                             const CrfParamsT<Scalar>& params) {
  const auto post =
      conditional_segment_posteriors(obs, labels, Segment{position, position}, params);
  DenseVector<Scalar> e = post.unary.col(0);
  e(labels[position - 1]) -= Scalar(1);
  return e;
}

using ObservationSequence = ObservationSequenceT<double>;
using CrfParams = CrfParamsT<double>;
using CrfGradient = CrfGradientT<double>;
using TaggedExample = TaggedExampleT<double>;
using Dataset = std::vector<TaggedExample>;

}  // namespace seqinf
