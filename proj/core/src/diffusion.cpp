#include "cadiff/diffusion.hpp"

#include <cmath>
#include <string>

#include "cadiff/errors.hpp"
#include "cadiff/parallel.hpp"
#include "cadiff/rng.hpp"

namespace cadiff {

namespace {

void check_step(int k, int lo, const NoiseSchedule& sched) {
  if (k < lo || k > sched.K) {
    throw IndexError("diffusion step " + std::to_string(k) + " outside [" + std::to_string(lo) + ", " +
                     std::to_string(sched.K) + "]");
  }
}

}  // namespace

NoiseSchedule make_schedule(int K, double beta_start, double beta_end) {
  if (K < 1) throw ConfigError("schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule requires 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.K = K;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta = Eigen::VectorXd::Zero(K + 1);
  s.alpha = Eigen::VectorXd::Ones(K + 1);
  s.alpha_bar = Eigen::VectorXd::Ones(K + 1);
  for (int k = 1; k <= K; ++k) {
    const double frac = K == 1 ? 0.0 : static_cast<double>(k - 1) / (K - 1);
    s.beta[k] = beta_start + frac * (beta_end - beta_start);
    s.alpha[k] = 1.0 - s.beta[k];
    s.alpha_bar[k] = s.alpha_bar[k - 1] * s.alpha[k];
  }
  return s;
}

void GuidanceConfig::validate() const {
  if (!(omega >= 0.0)) throw ConfigError("guidance weight omega must be >= 0");
  if (!(p_uncond >= 0.0 && p_uncond <= 1.0)) throw ConfigError("p_uncond must lie in [0, 1]");
}

Eigen::VectorXd forward_sample(const Eigen::VectorXd& x0, int k, const Eigen::VectorXd& eps,
                               const NoiseSchedule& sched) {
  check_step(k, 0, sched);
  if (x0.size() != eps.size()) throw ShapeError("forward_sample: x0 and eps differ in dimension");
  const double ab = sched.alpha_bar[k];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Eigen::VectorXd guided_noise(const Eigen::VectorXd& eps_cond, const Eigen::VectorXd& eps_uncond, double omega) {
  if (eps_cond.size() != eps_uncond.size()) throw ShapeError("guided_noise: dimension mismatch");
  return (omega + 1.0) * eps_cond - omega * eps_uncond;
}

Eigen::VectorXd reverse_step(const Eigen::VectorXd& x_k, int k, const Eigen::VectorXd& eps_hat,
                             const Eigen::VectorXd& z, const NoiseSchedule& sched) {
  check_step(k, 1, sched);
  if (x_k.size() != eps_hat.size() || x_k.size() != z.size()) throw ShapeError("reverse_step: dimension mismatch");
  const double coef = sched.beta[k] / std::sqrt(1.0 - sched.alpha_bar[k]);
  return (x_k - coef * eps_hat) / std::sqrt(sched.alpha[k]) + std::sqrt(sched.beta[k]) * z;
}

std::vector<DecisionVector> sample(const NoisePredictor& model, const ProblemParams& params,
                                   const GuidanceConfig& guidance, const NoiseSchedule& sched, int n,
                                   std::uint64_t seed, const SampleOptions& options) {
  if (model.kind() != params.kind) throw ConfigError("model was trained for a different problem kind");
  guidance.validate();
  if (n < 0) throw ConfigError("sample count must be nonnegative");
  if (options.chunk_size < 1) throw ConfigError("chunk_size must be positive");
  const int dim = model.dim();
  std::vector<DecisionVector> out(static_cast<std::size_t>(n));
  if (n == 0) return out;

  const int chunks = (n + options.chunk_size - 1) / options.chunk_size;
  parallel_for(static_cast<std::size_t>(chunks), options.workers, [&](std::size_t c) {
    const int first = static_cast<int>(c) * options.chunk_size;
    const int count = std::min(options.chunk_size, n - first);
    std::vector<Rng> rngs;
    rngs.reserve(static_cast<std::size_t>(count));
    Eigen::MatrixXd x(dim, count);
    for (int j = 0; j < count; ++j) {
      rngs.emplace_back(derive_seed(seed, streams::kSampleChain, static_cast<std::uint64_t>(first + j)));
      x.col(j) = standard_normal_vector(rngs.back(), dim);
    }
    const std::vector<const ProblemParams*> cond(static_cast<std::size_t>(count), &params);
    const std::vector<const ProblemParams*> uncond(static_cast<std::size_t>(count), nullptr);
    std::vector<int> steps(static_cast<std::size_t>(count));
    for (int k = sched.K; k >= 1; --k) {
      std::fill(steps.begin(), steps.end(), k);
      const Eigen::MatrixXd eps_c = model.predict(x, steps, cond);
      const Eigen::MatrixXd eps_u = guidance.omega == 0.0 ? eps_c : model.predict(x, steps, uncond);
      for (int j = 0; j < count; ++j) {
        const Eigen::VectorXd eps_hat = guided_noise(eps_c.col(j), eps_u.col(j), guidance.omega);
        const Eigen::VectorXd z = k > 1 ? standard_normal_vector(rngs[static_cast<std::size_t>(j)], dim)
                                        : Eigen::VectorXd::Zero(dim).eval();
        x.col(j) = reverse_step(x.col(j), k, eps_hat, z, sched);
      }
    }
    for (int j = 0; j < count; ++j) {
      out[static_cast<std::size_t>(first + j)] =
          DecisionVector{params.kind, x.col(j).cwiseMax(-1.0).cwiseMin(1.0), true};
    }
  });
  return out;
}

}  // namespace cadiff
