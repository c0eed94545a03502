#include "seqinf/influence.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <thread>

#include "seqinf/binio.hpp"
#include "seqinf/errors.hpp"

namespace seqinf {

namespace {

// Forward-backward byproducts of one example that the Hessian-vector product
// needs: unary/pairwise posteriors plus the backward- and forward-conditional
// transition distributions p(y_{t-1}|y_t) and p(y_{t+1}|y_t).
struct ExampleFb {
  Eigen::MatrixXd unary;                     // C x T
  std::vector<Eigen::MatrixXd> pairwise;     // T-1, (prev, cur)
  std::vector<Eigen::MatrixXd> back_cond;    // T-1, (prev, cur), columns sum to 1
  std::vector<Eigen::MatrixXd> fwd_cond;     // T-1, (cur, next), rows sum to 1
};

ExampleFb example_fb(const TaggedExample& ex, const CrfParams& params) {
  const int C = params.num_labels();
  const int T = ex.obs.length();
  const Eigen::MatrixXd em = emission_scores(ex.obs, params);
  const auto lat = detail::run_forward_backward(em, params.transition);

  ExampleFb fb;
  fb.unary = ((lat.alpha + lat.beta).array() - lat.log_z).exp().matrix();
  fb.pairwise.reserve(T - 1);
  fb.back_cond.reserve(T - 1);
  fb.fwd_cond.reserve(T - 1);
  for (int t = 1; t < T; ++t) {
    Eigen::MatrixXd lp = params.transition;
    lp.colwise() += lat.alpha.col(t - 1);
    lp.rowwise() += (em.col(t) + lat.beta.col(t)).transpose();
    fb.pairwise.push_back(((lp.array() - lat.log_z).exp()).matrix());

    Eigen::MatrixXd bc = params.transition;
    bc.colwise() += lat.alpha.col(t - 1);
    bc.rowwise() += (em.col(t) - lat.alpha.col(t)).transpose();
    fb.back_cond.push_back(bc.array().exp().matrix());

    Eigen::MatrixXd fc = params.transition;
    fc.rowwise() += (em.col(t) + lat.beta.col(t)).transpose();
    fc.colwise() -= lat.beta.col(t - 1);
    fb.fwd_cond.push_back(fc.array().exp().matrix());
  }
  return fb;
}

// Covariance-form Hessian-vector product for one example: carries the
// conditional expectations of the additive score perturbation r(y) = phi(y).v
// along the chain (prefix rho, suffix sigma), then assembles E[phi r] - E[phi]E[r].
void accumulate_hvp(const TaggedExample& ex, const ExampleFb& fb, const CrfGradient& v,
                    CrfGradient& out) {
  const int C = static_cast<int>(fb.unary.rows());
  const int T = static_cast<int>(fb.unary.cols());
  const Eigen::MatrixXd vem = v.d_emission * ex.obs.features;  // C x T
  const Eigen::MatrixXd& vT = v.d_transition;

  Eigen::MatrixXd rho(C, T), sigma(C, T);
  rho.col(0) = vem.col(0);
  for (int t = 1; t < T; ++t) {
    const Eigen::MatrixXd& bc = fb.back_cond[t - 1];
    rho.col(t) = vem.col(t) + bc.transpose() * rho.col(t - 1) +
                 bc.cwiseProduct(vT).colwise().sum().transpose();
  }
  sigma.col(T - 1).setZero();
  for (int t = T - 2; t >= 0; --t) {
    const Eigen::MatrixXd& fc = fb.fwd_cond[t];
    sigma.col(t) = fc.cwiseProduct(vT).rowwise().sum() + fc * (vem.col(t + 1) + sigma.col(t + 1));
  }

  const double expected_r = fb.unary.col(0).dot(rho.col(0) + sigma.col(0));

  const Eigen::MatrixXd weighted =
      fb.unary.cwiseProduct(rho + sigma) - fb.unary * expected_r;  // C x T
  out.d_emission += weighted * ex.obs.features.transpose();
  for (int t = 1; t < T; ++t) {
    Eigen::MatrixXd inner = vT;
    inner.colwise() += rho.col(t - 1);
    inner.rowwise() += (vem.col(t) + sigma.col(t)).transpose();
    inner.array() -= expected_r;
    out.d_transition += fb.pairwise[t - 1].cwiseProduct(inner);
  }
}

void run_chunked(int n, int threads, const std::function<void(int, int)>& body) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const int chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const int lo = t * chunk;
    const int hi = std::min(n, lo + chunk);
    if (lo < hi) pool.emplace_back(body, lo, hi);
  }
  for (auto& th : pool) th.join();
}

}  // namespace

CrfGradient TokenGradientRecord::reconstruct(int num_labels) const {
  CrfGradient g = CrfGradient::zero(num_labels, static_cast<int>(features.size()));
  g.d_emission = error * features.transpose();
  if (prev_label >= 0) g.d_transition.row(prev_label) += error.transpose();
  if (next_label >= 0) g.d_transition.col(next_label) += error;
  return g;
}

GradientCache build_gradient_cache(const Dataset& dataset, const CrfParams& params,
                                   Granularity granularity, int threads) {
  GradientCache cache;
  cache.granularity = granularity;
  cache.num_labels = params.num_labels();
  cache.feature_dim = params.feature_dim();
  const int n = static_cast<int>(dataset.size());

  if (granularity == Granularity::Instance) {
    cache.instances.resize(n);
    run_chunked(n, threads, [&](int lo, int hi) {
      for (int i = lo; i < hi; ++i)
        cache.instances[i] = grad_joint_loss(dataset[i].obs, dataset[i].labels, params);
    });
    return cache;
  }

  std::vector<std::size_t> offset(n + 1, 0);
  for (int i = 0; i < n; ++i) offset[i + 1] = offset[i] + dataset[i].obs.length();
  cache.tokens.resize(offset[n]);
  run_chunked(n, threads, [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      const TaggedExample& ex = dataset[i];
      const int T = ex.obs.length();
      for (int t = 1; t <= T; ++t) {
        TokenGradientRecord& rec = cache.tokens[offset[i] + t - 1];
        rec.example = i;
        rec.position = t;
        rec.prev_label = t > 1 ? ex.labels[t - 2] : -1;
        rec.next_label = t < T ? ex.labels[t] : -1;
        rec.error = conditional_error_vector(ex.obs, ex.labels, t, params);
        rec.features = ex.obs.features.col(t - 1);
      }
    }
  });
  return cache;
}

namespace {
constexpr char kCacheMagic[8] = {'S', 'Q', 'I', 'N', 'F', 'G', 'C', 'H'};
constexpr std::uint32_t kCacheVersion = 1;
constexpr std::size_t kCacheHeaderBytes = 8 + 4 + 1 + 4 + 4 + 8;
}  // namespace

std::size_t cache_file_size(const GradientCache& cache) {
  const std::size_t C = cache.num_labels, d = cache.feature_dim;
  if (cache.granularity == Granularity::Token)
    return kCacheHeaderBytes + cache.tokens.size() * (16 + 8 * (C + d));
  return kCacheHeaderBytes + cache.instances.size() * 8 * C * (d + C);
}

void save_cache(const GradientCache& cache, const std::string& path) {
  binio::Writer w(path);
  w.magic(kCacheMagic);
  w.u32(kCacheVersion);
  w.u8(static_cast<std::uint8_t>(cache.granularity));
  w.u32(static_cast<std::uint32_t>(cache.num_labels));
  w.u32(static_cast<std::uint32_t>(cache.feature_dim));
  w.u64(cache.size());
  if (cache.granularity == Granularity::Token) {
    for (const auto& rec : cache.tokens) {
      w.i32(rec.example);
      w.i32(rec.position);
      w.i32(rec.prev_label);
      w.i32(rec.next_label);
      w.raw(rec.error.data(), sizeof(double) * rec.error.size());
      w.raw(rec.features.data(), sizeof(double) * rec.features.size());
    }
  } else {
    for (const auto& g : cache.instances) {
      w.raw(g.d_emission.data(), sizeof(double) * g.d_emission.size());    // column-major
      w.raw(g.d_transition.data(), sizeof(double) * g.d_transition.size());
    }
  }
}

GradientCache load_cache(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic(kCacheMagic);
  const std::uint32_t version = r.u32();
  if (version != kCacheVersion)
    throw DataError("unsupported cache version " + std::to_string(version) + " in " + path);

  GradientCache cache;
  cache.granularity = static_cast<Granularity>(r.u8());
  cache.num_labels = static_cast<int>(r.u32());
  cache.feature_dim = static_cast<int>(r.u32());
  const std::uint64_t count = r.u64();
  if (cache.granularity == Granularity::Token) {
    cache.tokens.resize(count);
    for (auto& rec : cache.tokens) {
      rec.example = r.i32();
      rec.position = r.i32();
      rec.prev_label = r.i32();
      rec.next_label = r.i32();
      rec.error.resize(cache.num_labels);
      r.raw(rec.error.data(), sizeof(double) * cache.num_labels);
      rec.features.resize(cache.feature_dim);
      r.raw(rec.features.data(), sizeof(double) * cache.feature_dim);
    }
  } else {
    cache.instances.resize(count);
    for (auto& g : cache.instances) {
      g.d_emission.resize(cache.num_labels, cache.feature_dim);
      r.raw(g.d_emission.data(), sizeof(double) * g.d_emission.size());
      g.d_transition.resize(cache.num_labels, cache.num_labels);
      r.raw(g.d_transition.data(), sizeof(double) * g.d_transition.size());
    }
  }
  return cache;
}

CrfGradient hvp(const Dataset& dataset, const CrfParams& params, const CrfGradient& v,
                double damping) {
  require(v.d_emission.rows() == params.emission.rows() &&
              v.d_emission.cols() == params.emission.cols() &&
              v.d_transition.rows() == params.transition.rows(),
          "hvp direction shape mismatch");
  CrfGradient out = CrfGradient::zero(params.num_labels(), params.feature_dim());
  for (const TaggedExample& ex : dataset) accumulate_hvp(ex, example_fb(ex, params), v, out);
  if (!dataset.empty()) out *= 1.0 / static_cast<double>(dataset.size());
  out.d_emission += damping * v.d_emission;
  out.d_transition += damping * v.d_transition;
  return out;
}

InfluenceEngine::InfluenceEngine(const Dataset& dataset, const CrfParams& params,
                                 HessianMode mode)
    : dataset_(&dataset), params_(params), mode_(mode) {
  if (mode_.kind != HessianMode::Kind::Identity)
    require(mode_.damping > 0.0, "Hessian modes require positive damping");
}

void InfluenceEngine::ensure_dense_factor() const {
  if (dense_factor_) return;
  const int C = params_.num_labels();
  const int d = params_.feature_dim();
  const int P = C * d + C * C;

  std::vector<ExampleFb> fbs;
  fbs.reserve(dataset_->size());
  for (const auto& ex : *dataset_) fbs.push_back(example_fb(ex, params_));

  Eigen::MatrixXd H(P, P);
  const double inv_n = dataset_->empty() ? 1.0 : 1.0 / static_cast<double>(dataset_->size());
  for (int j = 0; j < P; ++j) {
    Eigen::VectorXd unit = Eigen::VectorXd::Zero(P);
    unit[j] = 1.0;
    const CrfGradient dir = unflatten_gradient(unit, C, d);
    CrfGradient col = CrfGradient::zero(C, d);
    for (std::size_t i = 0; i < dataset_->size(); ++i)
      accumulate_hvp((*dataset_)[i], fbs[i], dir, col);
    col *= inv_n;
    H.col(j) = flatten(col);
    H(j, j) += mode_.damping;
  }
  dense_factor_ = std::make_shared<Eigen::LDLT<Eigen::MatrixXd>>(H);
  if (dense_factor_->info() != Eigen::Success)
    throw NumericError("damped Hessian factorization failed");
}

Eigen::VectorXd InfluenceEngine::cg_solve(const Eigen::VectorXd& b) const {
  const int C = params_.num_labels();
  const int d = params_.feature_dim();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd r = b;
  Eigen::VectorXd p = r;
  double rs = r.squaredNorm();
  const double stop = mode_.cg_tol * std::sqrt(b.squaredNorm());
  if (std::sqrt(rs) <= stop) return x;
  for (int it = 0; it < mode_.max_cg_iters; ++it) {
    const CrfGradient hp = hvp(*dataset_, params_, unflatten_gradient(p, C, d), mode_.damping);
    const Eigen::VectorXd hp_flat = flatten(hp);
    const double alpha = rs / p.dot(hp_flat);
    x += alpha * p;
    r -= alpha * hp_flat;
    const double rs_new = r.squaredNorm();
    if (std::sqrt(rs_new) <= stop) return x;
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }
  throw NumericError("conjugate gradient did not converge; residual norm " +
                     std::to_string(std::sqrt(rs)));
}

CrfGradient InfluenceEngine::solve(const CrfGradient& g) const {
  switch (mode_.kind) {
    case HessianMode::Kind::Identity:
      return g;
    case HessianMode::Kind::ExplicitDamped: {
      ensure_dense_factor();
      const Eigen::VectorXd x = dense_factor_->solve(flatten(g));
      return unflatten_gradient(x, params_.num_labels(), params_.feature_dim());
    }
    case HessianMode::Kind::CgHvp: {
      const Eigen::VectorXd x = cg_solve(flatten(g));
      return unflatten_gradient(x, params_.num_labels(), params_.feature_dim());
    }
  }
  throw NumericError("unreachable Hessian mode");
}

double InfluenceEngine::influence_value(const CrfGradient& test_grad,
                                        const CrfGradient& train_grad) const {
  return -solve(test_grad).dot(train_grad);
}

double InfluenceEngine::record_dot(const CrfGradient& solved_test,
                                   const TokenGradientRecord& rec) const {
  double v = rec.error.dot(solved_test.d_emission * rec.features);
  if (rec.prev_label >= 0) v += solved_test.d_transition.row(rec.prev_label).dot(rec.error);
  if (rec.next_label >= 0) v += rec.error.dot(solved_test.d_transition.col(rec.next_label));
  return v;
}

InfluenceResult instance_influence(const InfluenceEngine& engine, const TaggedExample& test,
                                   int test_index, int train_index, const GradientCache& cache) {
  const Dataset& train_set = engine.dataset();
  require(train_index >= 0 && train_index < static_cast<int>(train_set.size()),
          "train index out of range");
  const CrfGradient test_grad = grad_joint_loss(test.obs, test.labels, engine.params());
  CrfGradient train_grad;
  if (cache.granularity == Granularity::Instance && !cache.instances.empty()) {
    train_grad = cache.instances[train_index];
  } else {
    const TaggedExample& tr = train_set[train_index];
    train_grad = grad_joint_loss(tr.obs, tr.labels, engine.params());
  }
  const double value = engine.influence_value(test_grad, train_grad);
  InfluenceResult res;
  res.test = Locator{test_index, Segment{1, test.obs.length()}};
  res.train = Locator{train_index, Segment{1, train_set[train_index].obs.length()}};
  res.value = value;
  res.direction = direction_of(value);
  return res;
}

InfluenceResult segment_influence(const InfluenceEngine& engine, const TaggedExample& test,
                                  const Locator& test_loc, const Locator& train_loc,
                                  const GradientCache& cache) {
  (void)cache;  // general segments are always computed on demand
  const Dataset& train_set = engine.dataset();
  require(train_loc.example >= 0 && train_loc.example < static_cast<int>(train_set.size()),
          "train index out of range");
  const CrfGradient test_grad =
      grad_conditional_loss(test.obs, test.labels, test_loc.segment, engine.params());
  const TaggedExample& tr = train_set[train_loc.example];
  const CrfGradient train_grad =
      grad_conditional_loss(tr.obs, tr.labels, train_loc.segment, engine.params());
  const double value = engine.influence_value(test_grad, train_grad);
  InfluenceResult res;
  res.test = test_loc;
  res.train = train_loc;
  res.value = value;
  res.direction = direction_of(value);
  return res;
}

TopKResult top_k_influential(const InfluenceEngine& engine, const TaggedExample& test,
                             const Locator& test_loc, int k, const GradientCache& cache,
                             RankBy rank_by) {
  require(cache.granularity == Granularity::Token, "top-k scan needs a token-granularity cache");
  const CrfGradient test_grad =
      grad_conditional_loss(test.obs, test.labels, test_loc.segment, engine.params());
  const CrfGradient solved = engine.solve(test_grad);

  std::vector<InfluenceResult> all;
  all.reserve(cache.tokens.size());
  for (const auto& rec : cache.tokens) {
    const double value = -engine.record_dot(solved, rec);
    InfluenceResult res;
    res.test = test_loc;
    res.train = Locator{rec.example, Segment{rec.position, rec.position}};
    res.value = value;
    res.direction = direction_of(value);
    all.push_back(res);
  }

  const auto key = [rank_by](const InfluenceResult& r) {
    return rank_by == RankBy::Absolute ? std::abs(r.value) : r.value;
  };
  std::sort(all.begin(), all.end(), [&](const InfluenceResult& x, const InfluenceResult& y) {
    const double kx = key(x), ky = key(y);
    if (kx != ky) return kx > ky;
    if (x.train.example != y.train.example) return x.train.example < y.train.example;
    return x.train.segment.a < y.train.segment.a;
  });

  TopKResult out;
  out.truncated_to_cache = k > static_cast<int>(all.size());
  if (k < static_cast<int>(all.size())) all.resize(std::max(k, 0));
  out.results = std::move(all);
  return out;
}

std::vector<NeighborResult> segment_nn(const Eigen::VectorXd& query, const Dataset& train,
                                       Similarity similarity, int k) {
  const double query_norm = query.norm();
  std::vector<NeighborResult> all;
  for (int i = 0; i < static_cast<int>(train.size()); ++i) {
    const TaggedExample& ex = train[i];
    for (int t = 1; t <= ex.obs.length(); ++t) {
      NeighborResult r;
      r.example = i;
      r.position = t;
      r.label = ex.labels[t - 1];
      const auto col = ex.obs.features.col(t - 1);
      const double dot = query.dot(col);
      if (similarity == Similarity::Dot) {
        r.similarity = dot;
      } else {
        const double denom = query_norm * col.norm();
        if (denom <= 0.0) {
          r.zero_norm = true;
          r.similarity = 0.0;
        } else {
          r.similarity = dot / denom;
        }
      }
      all.push_back(r);
    }
  }
  std::sort(all.begin(), all.end(), [](const NeighborResult& x, const NeighborResult& y) {
    if (x.zero_norm != y.zero_norm) return !x.zero_norm;  // zero-norm candidates last
    if (x.similarity != y.similarity) return x.similarity > y.similarity;
    if (x.example != y.example) return x.example < y.example;
    return x.position < y.position;
  });
  if (k >= 0 && k < static_cast<int>(all.size())) all.resize(k);
  return all;
}

}  // namespace seqinf
