#pragma once

// DDPM machinery: linear noise schedule, forward corruption, the ancestral
// reverse step, classifier-free guidance, and the sampling loop. Independent of
// any particular noise-predictor architecture.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "cadiff/problems.hpp"

namespace cadiff {

/// beta[k], alpha[k], alpha_bar[k] are indexed by step k = 0..K. Entry 0 of
/// beta and alpha is unused (set to 0 and 1); alpha_bar[0] = 1.
struct NoiseSchedule {
  int K = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  Eigen::VectorXd alpha_bar;
};

NoiseSchedule make_schedule(int K, double beta_start = 1e-4, double beta_end = 0.02);

struct GuidanceConfig {
  double omega = 1.0;
  double p_uncond = 0.1;

  void validate() const;
};

/// x_k = sqrt(alpha_bar_k) x0 + sqrt(1 - alpha_bar_k) eps.
Eigen::VectorXd forward_sample(const Eigen::VectorXd& x0, int k, const Eigen::VectorXd& eps,
                               const NoiseSchedule& sched);

/// (omega + 1) eps_cond - omega eps_uncond.
Eigen::VectorXd guided_noise(const Eigen::VectorXd& eps_cond, const Eigen::VectorXd& eps_uncond, double omega);

/// x_{k-1} = (x_k - beta_k / sqrt(1 - alpha_bar_k) eps_hat) / sqrt(alpha_k) + sqrt(beta_k) z.
/// Callers pass z = 0 at k = 1.
Eigen::VectorXd reverse_step(const Eigen::VectorXd& x_k, int k, const Eigen::VectorXd& eps_hat,
                             const Eigen::VectorXd& z, const NoiseSchedule& sched);

/// Batched noise prediction eps_theta(x_k, k, y). Column j of `x` is evaluated
/// at step steps[j] with condition conditions[j]; a null pointer selects the
/// unconditional (null) condition. Implementations must be safe to call
/// concurrently and column results must not depend on the other columns.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual ProblemKind kind() const = 0;
  virtual int dim() const = 0;
  virtual Eigen::MatrixXd predict(const Eigen::MatrixXd& x, std::span<const int> steps,
                                  std::span<const ProblemParams* const> conditions) const = 0;
};

struct SampleOptions {
  int workers = 1;
  /// Chains are denoised in fixed-size batches so results do not depend on
  /// the worker count.
  int chunk_size = 64;
};

/// Draws n normalized decision vectors by guided ancestral sampling from
/// x_K ~ N(0, I). Chain i uses its own generator seeded with
/// derive_seed(seed, kSampleChain, i). The final x_0 is clipped to [-1, 1].
std::vector<DecisionVector> sample(const NoisePredictor& model, const ProblemParams& params,
                                   const GuidanceConfig& guidance, const NoiseSchedule& sched, int n,
                                   std::uint64_t seed, const SampleOptions& options = {});

}  // namespace cadiff
