#pragma once

// Constraint-aligned training: per-step ground-truth violation statistics of
// corrupted data, the one-step-reverse violation loss and the re-weighted
// hybrid loss.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "cadiff/denoiser.hpp"
#include "cadiff/diffusion.hpp"
#include "cadiff/nlp_solver.hpp"
#include "cadiff/problems.hpp"

namespace cadiff {

/// Violation of a normalized vector after clipping it to [-1, 1] and mapping
/// it to physical units. Corrupted vectors leave the box, and the rollout is
/// only defined inside it (t_final > 0).
double clipped_violation(const Eigen::VectorXd& x_normalized, const ProblemParams& params);

struct GtViolationTable {
  ProblemKind kind = ProblemKind::Tabletop;
  int K = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  Eigen::VectorXd mean;  // k = 0..K
  Eigen::VectorXd std;
  Eigen::VectorXd ci95_lo;
  Eigen::VectorXd ci95_hi;
  int n_noise = 0;
  int m_data = 0;
  std::uint64_t seed = 0;
  double epsilon_floor = 1e-3;

  /// max(mean[k], epsilon_floor).
  double denominator(int k) const;
};

/// Draws M records (with replacement only when the dataset has fewer than M)
/// and N forward corruptions per (record, step). Deterministic given seed and
/// independent of `workers`.
GtViolationTable compute_gt_violation_table(const std::vector<DatasetRecord>& dataset, const NoiseSchedule& sched,
                                            int n_noise, int m_data, std::uint64_t seed, int workers = 1,
                                            double epsilon_floor = 1e-3);

/// x~_{k-1} from the conditional noise prediction only, clamped to [-1, 1].
Eigen::VectorXd one_step_reverse_conditional(const Eigen::VectorXd& x_k, int k, const NoisePredictor& model,
                                             const ProblemParams& condition, const Eigen::VectorXd& z,
                                             const NoiseSchedule& sched);

struct ViolationLossTerms {
  Eigen::VectorXd per_item;
  double mean = 0.0;
};

/// Value of the violation loss for fixed draws (z column ignored at k = 1).
ViolationLossTerms violation_loss(const NoisePredictor& model, const TrainingBatch& batch, std::span<const int> steps,
                                  const Eigen::MatrixXd& eps, const Eigen::MatrixXd& z, const NoiseSchedule& sched);

/// Draws eps then z per item from `rng`.
ViolationLossTerms violation_loss(const NoisePredictor& model, const TrainingBatch& batch, std::span<const int> steps,
                                  const NoiseSchedule& sched, Rng& rng);

/// Same value; also adds sum_j coeffs[j] * dV_j/dtheta to `grads`.
template <typename Scalar>
ViolationLossTerms violation_loss(const BasicDenoiser<Scalar>& model, const TrainingBatch& batch,
                                  std::span<const int> steps, const Eigen::MatrixXd& eps, const Eigen::MatrixXd& z,
                                  const NoiseSchedule& sched, const Eigen::VectorXd& coeffs,
                                  std::vector<typename BasicDenoiser<Scalar>::Matrix>* grads);

struct HybridDraws {
  DiffusionDraws diffusion;
  Eigen::MatrixXd z;  // zero column where k = 1
};

/// Diffusion draws come from `diffusion_rng` exactly as draw_diffusion_noise
/// consumes it; z comes from `aux_rng`.
HybridDraws draw_hybrid_noise(int batch, int dim, const NoiseSchedule& sched, double p_uncond, Rng& diffusion_rng,
                              Rng& aux_rng);

/// Denominator per item: max(mean[k - 1], epsilon_floor).
Eigen::VectorXd step_denominators(const GtViolationTable& table, std::span<const int> steps);

/// Denominator per item estimated from `draws` fresh corruptions of that
/// item's x0 at step k - 1.
Eigen::VectorXd per_sample_denominators(const TrainingBatch& batch, std::span<const int> steps,
                                        const NoiseSchedule& sched, int draws, double epsilon_floor, Rng& rng);

struct HybridLossTerms {
  double total = 0.0;
  double diffusion = 0.0;
  double violation = 0.0;  // mean of V_j / denominator_j, before lambda
  Eigen::VectorXd raw_violation;
  int unconditional_evaluations = 0;
};

/// L_diff + lambda * mean_j V_j / denominators[j]. The diffusion part is
/// computed exactly as diffusion_loss does for the same draws.
template <typename Scalar>
HybridLossTerms hybrid_loss(const BasicDenoiser<Scalar>& model, const TrainingBatch& batch, const HybridDraws& draws,
                            const NoiseSchedule& sched, const Eigen::VectorXd& denominators, double lambda,
                            std::vector<typename BasicDenoiser<Scalar>::Matrix>* grads);

/// Per-step weighting with draws from the two generators.
HybridLossTerms hybrid_loss(const Denoiser& model, const TrainingBatch& batch, const NoiseSchedule& sched,
                            const GtViolationTable& table, double lambda, double p_uncond, Rng& diffusion_rng,
                            Rng& aux_rng, std::vector<Denoiser::Matrix>* grads);

/// Throws ConfigError unless the table was built for this kind and schedule.
void check_table(const GtViolationTable& table, ProblemKind kind, const NoiseSchedule& sched);

/// Batch loss used by train_constrained. Accepts lambda = 0.
BatchLossFn make_hybrid_loss_fn(const TrainConfig& cfg, const NoiseSchedule& sched, const GtViolationTable& table);

TrainResult train_constrained(const TrainingSet& data, const TrainConfig& cfg, const NoiseSchedule& sched,
                              const GtViolationTable& table);

}  // namespace cadiff
