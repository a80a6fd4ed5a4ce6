#include <atomic>
#include <cmath>

#include <gtest/gtest.h>

#include "cadiff/diffusion.hpp"
#include "cadiff/errors.hpp"
#include "test_util.hpp"

namespace cadiff {
namespace {

// Deterministic toy predictor: eps = tanh(0.3 x + 0.01 k + c), with c = 0.2 for
// a real condition and -0.1 for the null one. Counts unconditional columns.
class ToyPredictor : public NoisePredictor {
 public:
  explicit ToyPredictor(ProblemKind kind) : kind_(kind) {}
  ProblemKind kind() const override { return kind_; }
  int dim() const override { return 161; }
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x, std::span<const int> steps,
                          std::span<const ProblemParams* const> conditions) const override {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double c = conditions[static_cast<std::size_t>(j)] ? 0.2 : -0.1;
      if (!conditions[static_cast<std::size_t>(j)]) ++uncond_calls;
      out.col(j) = (0.3 * x.col(j).array() + 0.01 * steps[static_cast<std::size_t>(j)] + c).tanh().matrix();
    }
    return out;
  }
  mutable std::atomic<int> uncond_calls{0};

 private:
  ProblemKind kind_;
};

TEST(ScheduleTest, FirstStepAndEmptyProduct) {
  const auto s = make_schedule(500, 1e-4, 0.02);
  EXPECT_EQ(s.alpha_bar[0], 1.0);
  EXPECT_DOUBLE_EQ(s.alpha_bar[1], 1.0 - 1e-4);
  EXPECT_EQ(s.beta.size(), 501);
}

TEST(ScheduleTest, CumulativeProductOracle) {
  const auto s = make_schedule(500, 1e-4, 0.02);
  long double prod = 1.0L;
  for (int k = 1; k <= 500; ++k) {
    const long double beta = 1e-4L + (0.02L - 1e-4L) * (k - 1) / 499.0L;
    prod *= 1.0L - beta;
    EXPECT_NEAR(s.beta[k], static_cast<double>(beta), 1e-15);
    EXPECT_LT(std::abs(s.alpha_bar[k] - static_cast<double>(prod)) / static_cast<double>(prod), 1e-12);
  }
  EXPECT_LT(s.alpha_bar[500], 0.01);
}

TEST(ScheduleTest, Invariants) {
  for (auto [K, b0, b1] : {std::tuple{500, 1e-4, 0.02}, std::tuple{100, 5e-4, 0.1}, std::tuple{1, 0.3, 0.3}}) {
    const auto s = make_schedule(K, b0, b1);
    for (int k = 1; k <= K; ++k) {
      EXPECT_GT(s.beta[k], 0.0);
      EXPECT_LT(s.beta[k], 1.0);
      EXPECT_LT(s.alpha_bar[k], s.alpha_bar[k - 1]);
      EXPECT_LT(std::abs(s.alpha_bar[k] / s.alpha_bar[k - 1] - s.alpha[k]) / s.alpha[k], 1e-12);
    }
  }
}

TEST(ScheduleTest, BadBounds) {
  EXPECT_THROW(make_schedule(0), ConfigError);
  EXPECT_THROW(make_schedule(10, 0.0, 0.02), ConfigError);
  EXPECT_THROW(make_schedule(10, 0.03, 0.02), ConfigError);
  EXPECT_THROW(make_schedule(10, 1e-4, 1.0), ConfigError);
}

TEST(ForwardSampleTest, IdentityAtZeroAndScaling) {
  const auto s = make_schedule(100);
  Rng rng(1);
  const Eigen::VectorXd x0 = standard_normal_vector(rng, 161);
  const Eigen::VectorXd eps = standard_normal_vector(rng, 161);
  EXPECT_EQ(forward_sample(x0, 0, eps, s), x0);

  // A one-step schedule with beta = 0.75 has alpha_bar_1 = 0.25.
  const auto q = make_schedule(1, 0.75, 0.75);
  EXPECT_LE((forward_sample(x0, 1, Eigen::VectorXd::Zero(161), q) - 0.5 * x0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ForwardSampleTest, MonteCarloMoments) {
  const auto s = make_schedule(100, 5e-4, 0.1);
  Rng rng(2);
  const int dim = 4, draws = 100000;
  Eigen::VectorXd x0(dim);
  x0 << 0.9, -0.4, 0.0, 0.7;
  for (int k : {1, 25, 50, 100}) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim), sq = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < draws; ++i) {
      const Eigen::VectorXd xk = forward_sample(x0, k, standard_normal_vector(rng, dim), s);
      sum += xk;
      sq += xk.cwiseProduct(xk);
    }
    const Eigen::VectorXd mean = sum / draws;
    const Eigen::VectorXd var = (sq / draws - mean.cwiseProduct(mean)) * draws / (draws - 1.0);
    const double v = 1.0 - s.alpha_bar[k];
    const double se_mean = std::sqrt(v / draws);
    const double se_var = v * std::sqrt(2.0 / (draws - 1));
    for (int d = 0; d < dim; ++d) {
      EXPECT_LT(std::abs(mean[d] - std::sqrt(s.alpha_bar[k]) * x0[d]), 4 * se_mean) << "k=" << k;
      EXPECT_LT(std::abs(var[d] - v), 4 * se_var) << "k=" << k;
    }
  }
}

TEST(ForwardSampleTest, Errors) {
  const auto s = make_schedule(10);
  EXPECT_THROW(forward_sample(Eigen::VectorXd::Zero(3), 1, Eigen::VectorXd::Zero(4), s), ShapeError);
  EXPECT_THROW(forward_sample(Eigen::VectorXd::Zero(3), 11, Eigen::VectorXd::Zero(3), s), IndexError);
}

TEST(GuidedNoiseTest, AffineCases) {
  Rng rng(4);
  const Eigen::VectorXd c = standard_normal_vector(rng, 8), u = standard_normal_vector(rng, 8);
  EXPECT_EQ(guided_noise(c, u, 0.0), c);
  EXPECT_LE((guided_noise(c, u, 1.0) - (2 * c - u)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((guided_noise(c, c, 3.7) - c).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ReverseStepTest, ExactRecoveryAtFirstStep) {
  const auto s = make_schedule(100, 5e-4, 0.1);
  Rng rng(5);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(161);
  for (int i = 0; i < 100; ++i) {
    const Eigen::VectorXd x0 = standard_normal_vector(rng, 161);
    const Eigen::VectorXd eps = standard_normal_vector(rng, 161);
    const Eigen::VectorXd x1 = forward_sample(x0, 1, eps, s);
    EXPECT_LE((reverse_step(x1, 1, eps, zero, s) - x0).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(ReverseStepTest, ZeroNoiseScalesByAlpha) {
  const auto s = make_schedule(100);
  Rng rng(6);
  const Eigen::VectorXd xk = standard_normal_vector(rng, 10), zero = Eigen::VectorXd::Zero(10);
  EXPECT_LE((reverse_step(xk, 37, zero, zero, s) - xk / std::sqrt(s.alpha[37])).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ReverseStepTest, ScalarOracle) {
  const auto s = make_schedule(100, 5e-4, 0.1);
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 1 + trial * 5;
    const Eigen::VectorXd xk = standard_normal_vector(rng, 12), e = standard_normal_vector(rng, 12),
                          z = standard_normal_vector(rng, 12);
    const Eigen::VectorXd got = reverse_step(xk, k, e, z, s);
    double ab = 1.0;
    for (int j = 1; j <= k; ++j) ab *= 1.0 - (5e-4 + (0.1 - 5e-4) * (j - 1) / 99.0);
    const double beta = 5e-4 + (0.1 - 5e-4) * (k - 1) / 99.0;
    for (int i = 0; i < 12; ++i) {
      const double expect = (xk[i] - beta / std::sqrt(1 - ab) * e[i]) / std::sqrt(1 - beta) + std::sqrt(beta) * z[i];
      EXPECT_NEAR(got[i], expect, 1e-10);
    }
  }
  EXPECT_THROW(reverse_step(Eigen::VectorXd::Zero(2), 0, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2), s),
               IndexError);
}

TEST(SampleTest, EmptyAndDeterministic) {
  const auto s = make_schedule(20, 2.5e-3, 0.5);
  const ToyPredictor model(ProblemKind::Tabletop);
  const auto p = sample_problem_params(1, ProblemKind::Tabletop);
  EXPECT_TRUE(sample(model, p, {}, s, 0, 1).empty());
  const auto a = sample(model, p, {}, s, 5, 42);
  const auto b = sample(model, p, {}, s, 5, 42);
  ASSERT_EQ(a.size(), 5u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].values, b[i].values);
    EXPECT_TRUE(a[i].normalized);
    EXPECT_LE(a[i].values.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(SampleTest, WorkerAndChunkIndependence) {
  const auto s = make_schedule(10, 5e-3, 0.5);
  const ToyPredictor model(ProblemKind::TwoCar);
  const auto p = sample_problem_params(1, ProblemKind::TwoCar);
  const auto a = sample(model, p, {}, s, 7, 3, {.workers = 1, .chunk_size = 64});
  const auto b = sample(model, p, {}, s, 7, 3, {.workers = 3, .chunk_size = 2});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].values, b[i].values);
}

TEST(SampleTest, OmegaZeroMatchesConditionalOnlySampler) {
  const auto s = make_schedule(15, 3e-3, 0.4);
  const ToyPredictor model(ProblemKind::Tabletop);
  const auto p = sample_problem_params(2, ProblemKind::Tabletop);
  GuidanceConfig g;
  g.omega = 0.0;
  const auto got = sample(model, p, g, s, 3, 9);
  EXPECT_EQ(model.uncond_calls.load(), 0);

  for (int i = 0; i < 3; ++i) {
    Rng rng(derive_seed(9, streams::kSampleChain, static_cast<std::uint64_t>(i)));
    Eigen::MatrixXd x = standard_normal_vector(rng, 161);
    const std::vector<const ProblemParams*> cond{&p};
    for (int k = s.K; k >= 1; --k) {
      const std::vector<int> steps{k};
      const Eigen::VectorXd eps = model.predict(x, steps, cond);
      const Eigen::VectorXd z = k > 1 ? standard_normal_vector(rng, 161) : Eigen::VectorXd::Zero(161).eval();
      x.col(0) = reverse_step(x.col(0), k, eps, z, s);
    }
    EXPECT_EQ(got[static_cast<std::size_t>(i)].values, x.col(0).cwiseMax(-1.0).cwiseMin(1.0).eval());
  }
}

TEST(SampleTest, KindMismatch) {
  const ToyPredictor model(ProblemKind::Tabletop);
  EXPECT_THROW(sample(model, sample_problem_params(1, ProblemKind::TwoCar), {}, make_schedule(5), 1, 0),
               ConfigError);
}

TEST(GuidanceConfigTest, Validation) {
  GuidanceConfig g;
  EXPECT_NO_THROW(g.validate());
  g.omega = -0.5;
  EXPECT_THROW(g.validate(), ConfigError);
  g = {};
  g.p_uncond = 1.5;
  EXPECT_THROW(g.validate(), ConfigError);
}

}  // namespace
}  // namespace cadiff
