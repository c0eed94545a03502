#include <doctest.h>

#include <cmath>

#include "seqinf/crf.hpp"
#include "support/oracles.hpp"

using namespace seqinf;

namespace {

ObservationSequence zero_obs(int length, int dim) {
  ObservationSequence obs;
  obs.features = Eigen::MatrixXd::Zero(dim, length);
  return obs;
}

}  // namespace

TEST_CASE("log_partition trivial cases") {
  const int C = 3, d = 2;
  const CrfParams zero = CrfParams::zero(C, d);

  SUBCASE("all-zero parameters give T log C") {
    for (int T : {1, 2, 5, 9}) {
      const auto obs = zero_obs(T, d);
      CHECK(log_partition(obs, zero) == doctest::Approx(T * std::log(C)).epsilon(1e-12));
    }
  }

  SUBCASE("single token reduces to logsumexp of emissions") {
    Rng rng(7);
    CrfParams p = oracle::random_params(rng, C, d);
    const auto obs = oracle::random_obs(rng, 1, d);
    const Eigen::VectorXd s = p.emission * obs.features.col(0);
    double m = s.maxCoeff();
    CHECK(log_partition(obs, p) ==
          doctest::Approx(m + std::log((s.array() - m).exp().sum())).epsilon(1e-12));
  }
}

TEST_CASE("log_partition matches exhaustive enumeration") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int C = 3, d = 4, T = 5;
    const CrfParams p = oracle::random_params(rng, C, d);
    const auto obs = oracle::random_obs(rng, T, d);
    CHECK(log_partition(obs, p) ==
          doctest::Approx(oracle::enum_log_partition(obs, p)).epsilon(1e-10));
  }
}

TEST_CASE("joint_log_prob") {
  const int C = 3, d = 2;
  const CrfParams zero = CrfParams::zero(C, d);

  SUBCASE("uniform under zero parameters") {
    const auto obs = zero_obs(4, d);
    CHECK(joint_log_prob(obs, {0, 1, 2, 1}, zero) ==
          doctest::Approx(-4 * std::log(C)).epsilon(1e-12));
    CHECK(joint_log_prob(obs, {2, 2, 2, 2}, zero) ==
          doctest::Approx(-4 * std::log(C)).epsilon(1e-12));
  }

  SUBCASE("single token is a softmax") {
    ObservationSequence obs;
    obs.features = Eigen::MatrixXd::Ones(1, 1);
    CrfParams p = CrfParams::zero(C, 1);
    p.emission << 3.0, 0.5, -1.0;
    const Eigen::VectorXd s = p.emission;
    const double lse = std::log(s.array().exp().sum());
    CHECK(joint_log_prob(obs, {0}, p) == doctest::Approx(3.0 - lse).epsilon(1e-12));
  }

  SUBCASE("matches enumeration on random instances") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
      const CrfParams p = oracle::random_params(rng, 3, 4);
      const auto obs = oracle::random_obs(rng, 4, 4);
      const auto y = oracle::random_labels(rng, 4, 3);
      CHECK(joint_log_prob(obs, y, p) ==
            doctest::Approx(oracle::enum_joint_log_prob(obs, y, p)).epsilon(1e-10));
    }
  }

  SUBCASE("length mismatch rejected") {
    const auto obs = zero_obs(3, d);
    CHECK_THROWS_AS((void)joint_log_prob(obs, {0, 1}, zero), std::invalid_argument);
  }
}

TEST_CASE("marginal_log_prob") {
  Rng rng(17);
  const int C = 3, d = 3, T = 5;
  const CrfParams p = oracle::random_params(rng, C, d);
  const auto obs = oracle::random_obs(rng, T, d);

  SUBCASE("all masked marginalizes to probability one") {
    const PartialLabelSequence all_masked(T, kMasked);
    CHECK(marginal_log_prob(obs, all_masked, p) == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("no mask degenerates to the joint") {
    const auto y = oracle::random_labels(rng, T, C);
    const PartialLabelSequence full(y.begin(), y.end());
    CHECK(marginal_log_prob(obs, full, p) ==
          doctest::Approx(joint_log_prob(obs, y, p)).epsilon(1e-12));
  }

  SUBCASE("interior mask matches completion enumeration") {
    for (int trial = 0; trial < 10; ++trial) {
      const CrfParams q = oracle::random_params(rng, C, d);
      const auto o = oracle::random_obs(rng, T, d);
      const auto y = oracle::random_labels(rng, T, C);
      PartialLabelSequence partial(y.begin(), y.end());
      partial[1] = kMasked;
      partial[2] = kMasked;
      CHECK(marginal_log_prob(o, partial, q) ==
            doctest::Approx(oracle::enum_marginal_log_prob(o, partial, q)).epsilon(1e-10));
    }
  }
}

TEST_CASE("conditional_segment_log_prob") {
  Rng rng(19);
  const int C = 3, d = 3, T = 5;

  SUBCASE("full-span segment equals the joint") {
    const CrfParams p = oracle::random_params(rng, C, d);
    const auto obs = oracle::random_obs(rng, T, d);
    const auto y = oracle::random_labels(rng, T, C);
    CHECK(conditional_segment_log_prob(obs, y, {1, T}, p) ==
          doctest::Approx(joint_log_prob(obs, y, p)).epsilon(1e-11));
  }

  SUBCASE("uniform single-token conditional under zero parameters") {
    const CrfParams zero = CrfParams::zero(C, d);
    const auto obs = zero_obs(T, d);
    const LabelSequence y(T, 1);
    CHECK(conditional_segment_log_prob(obs, y, {3, 3}, zero) ==
          doctest::Approx(-std::log(C)).epsilon(1e-12));
  }

  SUBCASE("matches enumeration over segment completions") {
    for (int trial = 0; trial < 10; ++trial) {
      const CrfParams p = oracle::random_params(rng, C, d);
      const auto obs = oracle::random_obs(rng, T, d);
      const auto y = oracle::random_labels(rng, T, C);
      for (const Segment seg : {Segment{2, 4}, Segment{1, 2}, Segment{4, 5}, Segment{3, 3}}) {
        CHECK(conditional_segment_log_prob(obs, y, seg, p) ==
              doctest::Approx(oracle::enum_conditional_log_prob(obs, y, seg, p)).epsilon(1e-10));
      }
    }
  }

  SUBCASE("invalid segment bounds rejected") {
    const CrfParams p = CrfParams::zero(C, d);
    const auto obs = zero_obs(T, d);
    const LabelSequence y(T, 0);
    CHECK_THROWS_AS((void)conditional_segment_log_prob(obs, y, {0, 2}, p),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)conditional_segment_log_prob(obs, y, {4, 3}, p),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)conditional_segment_log_prob(obs, y, {1, T + 1}, p),
                    std::invalid_argument);
  }
}

TEST_CASE("viterbi_decode") {
  SUBCASE("dominant emissions with zero transitions pick the per-position argmax") {
    const int C = 4, T = 5;
    CrfParams p = CrfParams::zero(C, C);
    p.emission = Eigen::MatrixXd::Identity(C, C) * 10.0;
    ObservationSequence obs;
    obs.features = Eigen::MatrixXd::Zero(C, T);
    const LabelSequence want = {2, 0, 3, 1, 2};
    for (int t = 0; t < T; ++t) obs.features(want[t], t) = 1.0;
    const auto [path, score] = viterbi_decode(obs, p);
    CHECK(path == want);
    CHECK(score == doctest::Approx(10.0 * T));
  }

  SUBCASE("ties break toward label 0") {
    const CrfParams zero = CrfParams::zero(3, 2);
    ObservationSequence obs;
    obs.features = Eigen::MatrixXd::Zero(2, 4);
    const auto [path, score] = viterbi_decode(obs, zero);
    CHECK(path == LabelSequence{0, 0, 0, 0});
    CHECK(score == doctest::Approx(0.0));
  }

  SUBCASE("matches exhaustive argmax") {
    Rng rng(23);
    for (int trial = 0; trial < 15; ++trial) {
      const CrfParams p = oracle::random_params(rng, 4, 3);
      const auto obs = oracle::random_obs(rng, 6, 3);
      const auto [path, score] = viterbi_decode(obs, p);
      const auto [want_path, want_score] = oracle::enum_argmax(obs, p);
      CHECK(path == want_path);
      CHECK(score == doctest::Approx(want_score).epsilon(1e-10));
    }
  }
}

TEST_CASE("position_marginals") {
  SUBCASE("uniform under zero parameters") {
    const CrfParams zero = CrfParams::zero(3, 2);
    const auto obs = zero_obs(4, 2);
    const Eigen::MatrixXd m = position_marginals(obs, zero);
    CHECK((m.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-12);
  }

  SUBCASE("single token is the emission softmax") {
    CrfParams p = CrfParams::zero(3, 1);
    p.emission << 1.0, 2.0, -0.5;
    ObservationSequence obs;
    obs.features = Eigen::MatrixXd::Ones(1, 1);
    const Eigen::MatrixXd m = position_marginals(obs, p);
    const Eigen::VectorXd want = (p.emission.array() - p.emission.maxCoeff()).exp();
    CHECK((m.row(0).transpose() - want / want.sum()).lpNorm<Eigen::Infinity>() < 1e-12);
  }

  SUBCASE("matches enumeration and rows sum to 1") {
    Rng rng(29);
    for (int trial = 0; trial < 10; ++trial) {
      const CrfParams p = oracle::random_params(rng, 3, 3);
      const auto obs = oracle::random_obs(rng, 5, 3);
      const Eigen::MatrixXd got = position_marginals(obs, p);
      const Eigen::MatrixXd want = oracle::enum_position_marginals(obs, p);
      CHECK((got - want).lpNorm<Eigen::Infinity>() < 1e-10);
      for (int t = 0; t < got.rows(); ++t)
        CHECK(got.row(t).sum() == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("loss decomposition: joint = marginal + conditional") {
  Rng rng(31);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int C = 2 + rng.uniform_int(4);  // up to 5
    const int T = 1 + rng.uniform_int(8);  // up to 8
    const int d = 1 + rng.uniform_int(4);
    const CrfParams p = oracle::random_params(rng, C, d);
    const auto obs = oracle::random_obs(rng, T, d);
    const auto y = oracle::random_labels(rng, T, C);
    const int a = 1 + rng.uniform_int(T);
    const int b = a + rng.uniform_int(T - a + 1);
    PartialLabelSequence partial(y.begin(), y.end());
    for (int t = a - 1; t <= b - 1; ++t) partial[t] = kMasked;

    const double joint_loss = -joint_log_prob(obs, y, p);
    const double marginal_loss = -marginal_log_prob(obs, partial, p);
    const double conditional_loss = -conditional_segment_log_prob(obs, y, {a, b}, p);
    CHECK(std::abs(joint_loss - marginal_loss - conditional_loss) < 1e-9);
    ++checked;
  }
  CHECK(checked == 200);
}

TEST_CASE("normalization: joint probabilities sum to one") {
  Rng rng(37);
  for (int trial = 0; trial < 5; ++trial) {
    const int C = 3, T = 4, d = 2;
    const CrfParams p = oracle::random_params(rng, C, d);
    const auto obs = oracle::random_obs(rng, T, d);
    double total = 0.0;
    oracle::for_each_sequence(T, C, [&](const LabelSequence& y) {
      total += std::exp(joint_log_prob(obs, y, p));
    });
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("degenerate single-token sequences keep every operation defined") {
  Rng rng(41);
  const CrfParams p = oracle::random_params(rng, 3, 2);
  const auto obs = oracle::random_obs(rng, 1, 2);
  const LabelSequence y = {1};
  CHECK(std::isfinite(log_partition(obs, p)));
  CHECK(std::isfinite(joint_log_prob(obs, y, p)));
  CHECK(std::isfinite(conditional_segment_log_prob(obs, y, {1, 1}, p)));
  CHECK(conditional_segment_log_prob(obs, y, {1, 1}, p) ==
        doctest::Approx(joint_log_prob(obs, y, p)).epsilon(1e-12));
  CHECK(viterbi_decode(obs, p).first.size() == 1);
}

TEST_CASE("dimension mismatches are contract violations") {
  const CrfParams p = CrfParams::zero(3, 4);
  ObservationSequence obs;
  obs.features = Eigen::MatrixXd::Zero(5, 2);  // wrong d
  CHECK_THROWS_AS((void)log_partition(obs, p), std::invalid_argument);
}

TEST_CASE("scalar-generic core instantiates with long double") {
  ObservationSequenceT<long double> obs;
  obs.features = DenseMatrix<long double>::Zero(2, 3);
  const auto p = CrfParamsT<long double>::zero(4, 2);
  CHECK(static_cast<double>(log_partition(obs, p)) ==
        doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-12));
}
