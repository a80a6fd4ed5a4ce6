#pragma once

// Conditional noise predictor eps_theta(x_k, k, y) with hand-written reverse
// mode, plus the vanilla diffusion loss and the shared training loop.
//
// Architecture:
//   condition y --(scale to [-1,1])--> encoder MLP (SiLU) --> c      (or the learned null token)
//   step k --> sinusoidal embedding t
//   [x_k ; t ; c] --> Linear+SiLU --> residual (h + SiLU(W h + b)) blocks --> Linear --> eps_hat

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cadiff/diffusion.hpp"
#include "cadiff/nlp_solver.hpp"
#include "cadiff/problems.hpp"
#include "cadiff/rng.hpp"

namespace cadiff {

enum class ArchitectureProfile { Desk, Paper };

std::string_view to_string(ArchitectureProfile profile);
ArchitectureProfile architecture_profile_from_string(std::string_view name);

struct DenoiserArchitecture {
  ArchitectureProfile profile = ArchitectureProfile::Desk;
  int time_embed_dim = 32;
  std::vector<int> encoder_widths{128, 128};
  std::vector<int> trunk_widths{256, 256, 256};

  static DenoiserArchitecture for_profile(ArchitectureProfile profile);
};

/// Sinusoidal step features [sin(k f_i) ..., cos(k f_i) ...] with
/// f_i = 10^(-4 i / (dim/2 - 1)). Throws ConfigError for odd or non-positive dim.
Eigen::VectorXd time_embedding(int k, int dim);

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> value;
};

template <typename Scalar>
class BasicDenoiser final : public NoisePredictor {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  /// Values recorded by forward() and consumed by backward().
  struct Tape {
    std::vector<int> cond_columns;  // columns with a real condition
    std::vector<int> null_columns;
    std::vector<Matrix> encoder_pre;   // pre-activations per encoder layer
    std::vector<Matrix> encoder_post;  // inputs to each encoder layer (0 = features)
    Matrix trunk_input;
    std::vector<Matrix> trunk_pre;
    std::vector<Matrix> trunk_in;  // input of each trunk layer
    Matrix trunk_out;
  };

  BasicDenoiser(ProblemKind kind, DenoiserArchitecture arch, std::uint64_t seed);

  ProblemKind kind() const override { return kind_; }
  int dim() const override { return dim_; }
  const DenoiserArchitecture& architecture() const { return arch_; }

  Eigen::MatrixXd predict(const Eigen::MatrixXd& x, std::span<const int> steps,
                          std::span<const ProblemParams* const> conditions) const override;

  /// x: dim x B in normalized coordinates.
  Matrix forward(const Matrix& x, std::span<const int> steps, std::span<const ProblemParams* const> conditions,
                 Tape* tape = nullptr) const;

  /// Accumulates dLoss/dparam into `grads` (same layout as parameters()).
  void backward(const Tape& tape, const Matrix& d_out, std::vector<Matrix>& grads) const;

  /// Condition embedding; nullptr selects the null token.
  Vector encode_condition(const ProblemParams* params) const;

  std::vector<NamedTensor<Scalar>>& parameters() { return params_; }
  const std::vector<NamedTensor<Scalar>>& parameters() const { return params_; }
  std::vector<Matrix> zero_gradients() const;
  std::size_t parameter_count() const;

  /// Copy with every tensor converted to another scalar type.
  template <typename Other>
  BasicDenoiser<Other> cast() const {
    BasicDenoiser<Other> out(kind_, arch_, Uninitialized{});
    out.params_.clear();
    for (const auto& p : params_) out.params_.push_back({p.name, p.value.template cast<Other>()});
    out.bind_layers();
    return out;
  }

  /// Rebuilds a model around loaded tensors; shapes are validated.
  static BasicDenoiser from_tensors(ProblemKind kind, DenoiserArchitecture arch,
                                    std::vector<NamedTensor<Scalar>> tensors);

 private:
  template <typename>
  friend class BasicDenoiser;
  struct Uninitialized {};
  BasicDenoiser(ProblemKind kind, DenoiserArchitecture arch, Uninitialized);

  struct Layer {
    std::size_t weight;
    std::size_t bias;
    bool residual = false;
  };

  void build_shapes();
  void bind_layers();
  void check_inputs(const Matrix& x, std::span<const int> steps,
                    std::span<const ProblemParams* const> conditions) const;

  ProblemKind kind_;
  DenoiserArchitecture arch_;
  int dim_ = 0;
  int cond_dim_ = 0;
  std::vector<NamedTensor<Scalar>> params_;
  std::vector<Layer> encoder_;
  std::vector<Layer> trunk_;
  Layer out_{};
  std::size_t null_token_ = 0;
};

extern template class BasicDenoiser<float>;
extern template class BasicDenoiser<double>;

using Denoiser = BasicDenoiser<float>;

enum class TrainMode { Vanilla, Constrained };
std::string_view to_string(TrainMode mode);
TrainMode train_mode_from_string(std::string_view name);

/// How the violation re-weighting denominator is indexed during training.
enum class GtWeighting { PerStep, PerSample };

struct TrainConfig {
  int epochs = 50;
  int batch_size = 128;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double p_uncond = 0.1;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  TrainMode mode = TrainMode::Vanilla;
  GtWeighting gt_weighting = GtWeighting::PerStep;
  int per_sample_draws = 8;
  DenoiserArchitecture architecture;

  void validate() const;
};

/// Training data in matrix form: column j of x0 is record j's normalized x*.
struct TrainingSet {
  ProblemKind kind = ProblemKind::Tabletop;
  Eigen::MatrixXd x0;
  std::vector<ProblemParams> params;

  static TrainingSet from_records(const std::vector<DatasetRecord>& records);
  int size() const { return static_cast<int>(x0.cols()); }
};

/// A mini-batch: columns of x0 with their conditions.
struct TrainingBatch {
  Eigen::MatrixXd x0;
  std::vector<const ProblemParams*> params;
};

/// Per-item random draws of the diffusion loss, in draw order: for each item
/// k ~ U{1..K}, then eps ~ N(0, I), then b ~ Bernoulli(p_uncond).
struct DiffusionDraws {
  std::vector<int> steps;
  Eigen::MatrixXd eps;
  std::vector<bool> drop_condition;
};

DiffusionDraws draw_diffusion_noise(int batch, int dim, const NoiseSchedule& sched, double p_uncond, Rng& rng);

struct DiffusionLossTerms {
  double value = 0.0;
  int unconditional_evaluations = 0;
};

/// Batch mean of ||eps_theta(x_k, k, (1-b) y + b null) - eps||^2 for fixed draws.
/// When `grads` is non-null, adds the gradient of the returned value to it.
template <typename Scalar>
DiffusionLossTerms diffusion_loss(const BasicDenoiser<Scalar>& model, const TrainingBatch& batch,
                                  const DiffusionDraws& draws, const NoiseSchedule& sched,
                                  std::vector<typename BasicDenoiser<Scalar>::Matrix>* grads);

/// Draws from `rng` and evaluates the loss.
DiffusionLossTerms diffusion_loss(const Denoiser& model, const TrainingBatch& batch, const NoiseSchedule& sched,
                                  double p_uncond, Rng& rng, std::vector<Denoiser::Matrix>* grads);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double diffusion = 0.0;
  double violation = 0.0;  // weighted violation term before lambda
};

struct TrainResult {
  Denoiser model;
  std::vector<EpochLog> log;
};

/// Per-batch loss callback: fills `grads` and returns (total, diffusion,
/// violation) for the batch. `diffusion_rng` must be consumed exactly as
/// draw_diffusion_noise does; `aux_rng` carries any additional randomness.
struct BatchLoss {
  double total = 0.0;
  double diffusion = 0.0;
  double violation = 0.0;
};
using BatchLossFn = std::function<BatchLoss(const Denoiser& model, const TrainingBatch& batch, Rng& diffusion_rng,
                                            Rng& aux_rng, std::vector<Denoiser::Matrix>& grads)>;

/// Adam over shuffled mini-batches; deterministic given cfg.seed. Throws
/// TrainingDivergedError on a non-finite loss.
TrainResult run_training(const TrainingSet& data, const TrainConfig& cfg, const NoiseSchedule& sched,
                         const BatchLossFn& loss_fn);

TrainResult train_vanilla(const TrainingSet& data, const TrainConfig& cfg, const NoiseSchedule& sched);

}  // namespace cadiff
