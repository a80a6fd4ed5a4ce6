#include "cadiff/constraint_align.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include "cadiff/errors.hpp"
#include "cadiff/parallel.hpp"

namespace cadiff {

double clipped_violation(const Eigen::VectorXd& x_normalized, const ProblemParams& params) {
  const DecisionVector x{params.kind, x_normalized.cwiseMax(-1.0).cwiseMin(1.0), true};
  return violation(denormalize(x), params).total;
}

double GtViolationTable::denominator(int k) const {
  if (k < 0 || k > K) throw IndexError("gt table step " + std::to_string(k) + " outside [0, " + std::to_string(K) + "]");
  return std::max(mean[k], epsilon_floor);
}

GtViolationTable compute_gt_violation_table(const std::vector<DatasetRecord>& dataset, const NoiseSchedule& sched,
                                            int n_noise, int m_data, std::uint64_t seed, int workers,
                                            double epsilon_floor) {
  if (dataset.empty()) throw ConfigError("gt analysis needs a non-empty dataset");
  if (n_noise < 1 || m_data < 1) throw ConfigError("gt analysis needs N >= 1 and M >= 1");
  if (!(epsilon_floor > 0.0)) throw ConfigError("epsilon_floor must be positive");
  const ProblemKind kind = dataset.front().params.kind;
  for (const auto& r : dataset) {
    if (r.params.kind != kind) throw ConfigError("gt analysis dataset mixes problem kinds");
  }

  // Record selection.
  Rng pick(derive_seed(seed, streams::kGtRecords, 0));
  std::vector<std::size_t> chosen(static_cast<std::size_t>(m_data));
  if (dataset.size() < static_cast<std::size_t>(m_data)) {
    std::uniform_int_distribution<std::size_t> d(0, dataset.size() - 1);
    for (auto& c : chosen) c = d(pick);
  } else {
    std::vector<std::size_t> idx(dataset.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      std::uniform_int_distribution<std::size_t> d(i, idx.size() - 1);
      std::swap(idx[i], idx[d(pick)]);
      chosen[i] = idx[i];
    }
  }

  const int K = sched.K;
  const std::size_t per_step = static_cast<std::size_t>(m_data) * static_cast<std::size_t>(n_noise);
  std::vector<double> values(static_cast<std::size_t>(K + 1) * per_step);
  const std::size_t pairs = static_cast<std::size_t>(m_data) * static_cast<std::size_t>(K + 1);
  parallel_for(pairs, workers, [&](std::size_t p) {
    const std::size_t m = p / static_cast<std::size_t>(K + 1);
    const int k = static_cast<int>(p % static_cast<std::size_t>(K + 1));
    const DatasetRecord& rec = dataset[chosen[m]];
    Rng rng(derive_seed(seed, streams::kGtNoise, p));
    double* out = values.data() + static_cast<std::size_t>(k) * per_step + m * static_cast<std::size_t>(n_noise);
    for (int n = 0; n < n_noise; ++n) {
      const Eigen::VectorXd eps = standard_normal_vector(rng, rec.x_star.values.size());
      out[n] = clipped_violation(forward_sample(rec.x_star.values, k, eps, sched), rec.params);
    }
  });

  GtViolationTable t;
  t.kind = kind;
  t.K = K;
  t.beta_start = sched.beta_start;
  t.beta_end = sched.beta_end;
  t.n_noise = n_noise;
  t.m_data = m_data;
  t.seed = seed;
  t.epsilon_floor = epsilon_floor;
  t.mean.resize(K + 1);
  t.std.resize(K + 1);
  t.ci95_lo.resize(K + 1);
  t.ci95_hi.resize(K + 1);
  const double n = static_cast<double>(per_step);
  for (int k = 0; k <= K; ++k) {
    const double* v = values.data() + static_cast<std::size_t>(k) * per_step;
    double sum = 0.0;
    for (std::size_t i = 0; i < per_step; ++i) sum += v[i];
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t i = 0; i < per_step; ++i) ss += (v[i] - mean) * (v[i] - mean);
    const double sd = per_step > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    const double half = 1.96 * sd / std::sqrt(n);
    t.mean[k] = mean;
    t.std[k] = sd;
    t.ci95_lo[k] = mean - half;
    t.ci95_hi[k] = mean + half;
  }
  return t;
}

Eigen::VectorXd one_step_reverse_conditional(const Eigen::VectorXd& x_k, int k, const NoisePredictor& model,
                                             const ProblemParams& condition, const Eigen::VectorXd& z,
                                             const NoiseSchedule& sched) {
  if (k < 1 || k > sched.K) throw IndexError("one-step reverse needs 1 <= k <= K");
  const int steps[] = {k};
  const ProblemParams* conds[] = {&condition};
  const Eigen::MatrixXd eps_hat = model.predict(x_k, steps, conds);
  return reverse_step(x_k, k, eps_hat.col(0), z, sched).cwiseMax(-1.0).cwiseMin(1.0);
}

namespace {

void check_draws(const TrainingBatch& batch, std::span<const int> steps, const Eigen::MatrixXd& eps,
                 const Eigen::MatrixXd& z) {
  const Eigen::Index B = batch.x0.cols();
  if (B == 0) throw ConfigError("violation loss needs a non-empty batch");
  if (static_cast<Eigen::Index>(steps.size()) != B || eps.cols() != B || z.cols() != B ||
      eps.rows() != batch.x0.rows() || z.rows() != batch.x0.rows() ||
      static_cast<Eigen::Index>(batch.params.size()) != B) {
    throw ShapeError("violation loss draws do not match the batch");
  }
}

Eigen::MatrixXd corrupt(const TrainingBatch& batch, std::span<const int> steps, const Eigen::MatrixXd& eps,
                        const NoiseSchedule& sched) {
  Eigen::MatrixXd x_k(batch.x0.rows(), batch.x0.cols());
  for (Eigen::Index j = 0; j < x_k.cols(); ++j) {
    x_k.col(j) = forward_sample(batch.x0.col(j), steps[static_cast<std::size_t>(j)], eps.col(j), sched);
  }
  return x_k;
}

// Unclamped one-step reverse outputs for a batch of conditional predictions.
Eigen::MatrixXd reverse_unclamped(const Eigen::MatrixXd& x_k, std::span<const int> steps,
                                  const Eigen::MatrixXd& eps_hat, const Eigen::MatrixXd& z,
                                  const NoiseSchedule& sched) {
  Eigen::MatrixXd out(x_k.rows(), x_k.cols());
  for (Eigen::Index j = 0; j < x_k.cols(); ++j) {
    const int k = steps[static_cast<std::size_t>(j)];
    const Eigen::VectorXd zj = k > 1 ? z.col(j).eval() : Eigen::VectorXd::Zero(x_k.rows()).eval();
    out.col(j) = reverse_step(x_k.col(j), k, eps_hat.col(j), zj, sched);
  }
  return out;
}

double checked_violation(const Eigen::VectorXd& x_prev, const ProblemParams& params, Eigen::Index item, int k) {
  const double v = clipped_violation(x_prev, params);
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "non-finite violation for batch item " << item << " at step " << k;
    throw NumericInputError(msg.str());
  }
  return v;
}

// d(sum_j c_j V_j)/d eps_hat for unclamped reverse outputs `pre`.
Eigen::MatrixXd violation_output_gradient(const Eigen::MatrixXd& pre, std::span<const int> steps,
                                          std::span<const ProblemParams* const> params, const Eigen::VectorXd& coeffs,
                                          const NoiseSchedule& sched) {
  Eigen::MatrixXd d(pre.rows(), pre.cols());
  for (Eigen::Index j = 0; j < pre.cols(); ++j) {
    const ProblemParams& p = *params[static_cast<std::size_t>(j)];
    const DecisionBox& box = decision_box(p.kind);
    const Eigen::ArrayXd half = 0.5 * (box.upper - box.lower).array();
    const DecisionVector phys = denormalize(DecisionVector{p.kind, pre.col(j).cwiseMax(-1.0).cwiseMin(1.0), true});
    const Eigen::ArrayXd inside = (pre.col(j).array().abs() < 1.0).cast<double>();
    const Eigen::ArrayXd g = violation_gradient(phys, p).array() * half * inside;
    const int k = steps[static_cast<std::size_t>(j)];
    const double dx_deps = -(sched.beta[k] / std::sqrt(1.0 - sched.alpha_bar[k])) / std::sqrt(sched.alpha[k]);
    d.col(j) = (coeffs[j] * dx_deps * g).matrix();
  }
  return d;
}

}  // namespace

ViolationLossTerms violation_loss(const NoisePredictor& model, const TrainingBatch& batch, std::span<const int> steps,
                                  const Eigen::MatrixXd& eps, const Eigen::MatrixXd& z, const NoiseSchedule& sched) {
  check_draws(batch, steps, eps, z);
  const Eigen::MatrixXd x_k = corrupt(batch, steps, eps, sched);
  const Eigen::MatrixXd eps_hat = model.predict(x_k, steps, batch.params);
  const Eigen::MatrixXd pre = reverse_unclamped(x_k, steps, eps_hat, z, sched);
  ViolationLossTerms t;
  t.per_item.resize(pre.cols());
  for (Eigen::Index j = 0; j < pre.cols(); ++j) {
    t.per_item[j] = checked_violation(pre.col(j), *batch.params[static_cast<std::size_t>(j)], j,
                                      steps[static_cast<std::size_t>(j)]);
  }
  t.mean = t.per_item.mean();
  return t;
}

ViolationLossTerms violation_loss(const NoisePredictor& model, const TrainingBatch& batch, std::span<const int> steps,
                                  const NoiseSchedule& sched, Rng& rng) {
  const Eigen::Index B = batch.x0.cols();
  const Eigen::Index dim = batch.x0.rows();
  Eigen::MatrixXd eps(dim, B);
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(dim, B);
  for (Eigen::Index j = 0; j < B && j < static_cast<Eigen::Index>(steps.size()); ++j) {
    eps.col(j) = standard_normal_vector(rng, dim);
    if (steps[static_cast<std::size_t>(j)] > 1) z.col(j) = standard_normal_vector(rng, dim);
  }
  return violation_loss(model, batch, steps, eps, z, sched);
}

template <typename Scalar>
ViolationLossTerms violation_loss(const BasicDenoiser<Scalar>& model, const TrainingBatch& batch,
                                  std::span<const int> steps, const Eigen::MatrixXd& eps, const Eigen::MatrixXd& z,
                                  const NoiseSchedule& sched, const Eigen::VectorXd& coeffs,
                                  std::vector<typename BasicDenoiser<Scalar>::Matrix>* grads) {
  using Matrix = typename BasicDenoiser<Scalar>::Matrix;
  check_draws(batch, steps, eps, z);
  if (coeffs.size() != batch.x0.cols()) throw ShapeError("one coefficient per batch item required");
  const Eigen::MatrixXd x_k = corrupt(batch, steps, eps, sched);
  typename BasicDenoiser<Scalar>::Tape tape;
  const Matrix out = model.forward(x_k.cast<Scalar>(), steps, batch.params, grads != nullptr ? &tape : nullptr);
  const Eigen::MatrixXd pre = reverse_unclamped(x_k, steps, out.template cast<double>(), z, sched);
  ViolationLossTerms t;
  t.per_item.resize(pre.cols());
  for (Eigen::Index j = 0; j < pre.cols(); ++j) {
    t.per_item[j] = checked_violation(pre.col(j), *batch.params[static_cast<std::size_t>(j)], j,
                                      steps[static_cast<std::size_t>(j)]);
  }
  t.mean = t.per_item.mean();
  if (grads != nullptr) {
    const Eigen::MatrixXd d = violation_output_gradient(pre, steps, batch.params, coeffs, sched);
    model.backward(tape, d.cast<Scalar>(), *grads);
  }
  return t;
}

template ViolationLossTerms violation_loss<float>(const BasicDenoiser<float>&, const TrainingBatch&,
                                                  std::span<const int>, const Eigen::MatrixXd&,
                                                  const Eigen::MatrixXd&, const NoiseSchedule&,
                                                  const Eigen::VectorXd&, std::vector<BasicDenoiser<float>::Matrix>*);
template ViolationLossTerms violation_loss<double>(const BasicDenoiser<double>&, const TrainingBatch&,
                                                   std::span<const int>, const Eigen::MatrixXd&,
                                                   const Eigen::MatrixXd&, const NoiseSchedule&,
                                                   const Eigen::VectorXd&,
                                                   std::vector<BasicDenoiser<double>::Matrix>*);

HybridDraws draw_hybrid_noise(int batch, int dim, const NoiseSchedule& sched, double p_uncond, Rng& diffusion_rng,
                              Rng& aux_rng) {
  HybridDraws d{draw_diffusion_noise(batch, dim, sched, p_uncond, diffusion_rng), Eigen::MatrixXd::Zero(dim, batch)};
  for (int j = 0; j < batch; ++j) {
    if (d.diffusion.steps[static_cast<std::size_t>(j)] > 1) d.z.col(j) = standard_normal_vector(aux_rng, dim);
  }
  return d;
}

Eigen::VectorXd step_denominators(const GtViolationTable& table, std::span<const int> steps) {
  Eigen::VectorXd d(static_cast<Eigen::Index>(steps.size()));
  for (std::size_t j = 0; j < steps.size(); ++j) d[static_cast<Eigen::Index>(j)] = table.denominator(steps[j] - 1);
  return d;
}

Eigen::VectorXd per_sample_denominators(const TrainingBatch& batch, std::span<const int> steps,
                                        const NoiseSchedule& sched, int draws, double epsilon_floor, Rng& rng) {
  if (draws < 1) throw ConfigError("per-sample weighting needs at least one draw");
  Eigen::VectorXd d(batch.x0.cols());
  for (Eigen::Index j = 0; j < batch.x0.cols(); ++j) {
    const int k = steps[static_cast<std::size_t>(j)] - 1;
    double sum = 0.0;
    for (int n = 0; n < draws; ++n) {
      const Eigen::VectorXd eps = standard_normal_vector(rng, batch.x0.rows());
      sum += clipped_violation(forward_sample(batch.x0.col(j), k, eps, sched), *batch.params[static_cast<std::size_t>(j)]);
    }
    d[j] = std::max(sum / draws, epsilon_floor);
  }
  return d;
}

template <typename Scalar>
HybridLossTerms hybrid_loss(const BasicDenoiser<Scalar>& model, const TrainingBatch& batch, const HybridDraws& draws,
                            const NoiseSchedule& sched, const Eigen::VectorXd& denominators, double lambda,
                            std::vector<typename BasicDenoiser<Scalar>::Matrix>* grads) {
  using Matrix = typename BasicDenoiser<Scalar>::Matrix;
  const Eigen::Index B = batch.x0.cols();
  if (B == 0) throw ConfigError("hybrid loss needs a non-empty batch");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
  const DiffusionDraws& dd = draws.diffusion;
  check_draws(batch, dd.steps, dd.eps, draws.z);
  if (denominators.size() != B || !(denominators.array() > 0.0).all()) {
    throw ConfigError("one positive denominator per batch item required");
  }

  // Diffusion term, evaluated the way diffusion_loss does it.
  HybridLossTerms terms;
  Eigen::MatrixXd x_k(batch.x0.rows(), B);
  std::vector<const ProblemParams*> conds(static_cast<std::size_t>(B));
  std::vector<int> dropped;
  for (Eigen::Index j = 0; j < B; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    x_k.col(j) = forward_sample(batch.x0.col(j), dd.steps[uj], dd.eps.col(j), sched);
    conds[uj] = dd.drop_condition[uj] ? nullptr : batch.params[uj];
    if (conds[uj] == nullptr) {
      ++terms.unconditional_evaluations;
      dropped.push_back(static_cast<int>(j));
    }
  }
  typename BasicDenoiser<Scalar>::Tape tape;
  const Matrix out = model.forward(x_k.cast<Scalar>(), dd.steps, conds, grads != nullptr ? &tape : nullptr);
  const Eigen::MatrixXd diff = out.template cast<double>() - dd.eps;
  terms.diffusion = diff.colwise().squaredNorm().sum() / static_cast<double>(B);

  // Violation term. Conditional predictions are reused where the condition
  // was kept; dropped items get a second, conditional forward pass.
  Eigen::MatrixXd eps_hat = out.template cast<double>();
  typename BasicDenoiser<Scalar>::Tape tape_drop;
  std::vector<int> drop_steps;
  std::vector<const ProblemParams*> drop_conds;
  if (!dropped.empty()) {
    Eigen::MatrixXd x_drop(x_k.rows(), static_cast<Eigen::Index>(dropped.size()));
    for (std::size_t i = 0; i < dropped.size(); ++i) {
      x_drop.col(static_cast<Eigen::Index>(i)) = x_k.col(dropped[i]);
      drop_steps.push_back(dd.steps[static_cast<std::size_t>(dropped[i])]);
      drop_conds.push_back(batch.params[static_cast<std::size_t>(dropped[i])]);
    }
    const Matrix out_drop =
        model.forward(x_drop.cast<Scalar>(), drop_steps, drop_conds, grads != nullptr ? &tape_drop : nullptr);
    for (std::size_t i = 0; i < dropped.size(); ++i) {
      eps_hat.col(dropped[i]) = out_drop.col(static_cast<Eigen::Index>(i)).template cast<double>();
    }
  }
  const Eigen::MatrixXd pre = reverse_unclamped(x_k, dd.steps, eps_hat, draws.z, sched);
  terms.raw_violation.resize(B);
  for (Eigen::Index j = 0; j < B; ++j) {
    terms.raw_violation[j] = checked_violation(pre.col(j), *batch.params[static_cast<std::size_t>(j)], j,
                                               dd.steps[static_cast<std::size_t>(j)]);
  }
  terms.violation = (terms.raw_violation.array() / denominators.array()).mean();
  terms.total = terms.diffusion + lambda * terms.violation;

  if (grads != nullptr) {
    const Eigen::VectorXd coeffs = (lambda / static_cast<double>(B)) * denominators.cwiseInverse();
    const Eigen::MatrixXd d_vio = violation_output_gradient(pre, dd.steps, batch.params, coeffs, sched);
    Matrix d_out = ((2.0 / static_cast<double>(B)) * diff).cast<Scalar>();
    for (Eigen::Index j = 0; j < B; ++j) {
      if (!dd.drop_condition[static_cast<std::size_t>(j)]) d_out.col(j) += d_vio.col(j).cast<Scalar>();
    }
    model.backward(tape, d_out, *grads);
    if (!dropped.empty()) {
      Matrix d_drop(d_vio.rows(), static_cast<Eigen::Index>(dropped.size()));
      for (std::size_t i = 0; i < dropped.size(); ++i) {
        d_drop.col(static_cast<Eigen::Index>(i)) = d_vio.col(dropped[i]).cast<Scalar>();
      }
      model.backward(tape_drop, d_drop, *grads);
    }
  }
  return terms;
}

template HybridLossTerms hybrid_loss<float>(const BasicDenoiser<float>&, const TrainingBatch&, const HybridDraws&,
                                            const NoiseSchedule&, const Eigen::VectorXd&, double,
                                            std::vector<BasicDenoiser<float>::Matrix>*);
template HybridLossTerms hybrid_loss<double>(const BasicDenoiser<double>&, const TrainingBatch&, const HybridDraws&,
                                             const NoiseSchedule&, const Eigen::VectorXd&, double,
                                             std::vector<BasicDenoiser<double>::Matrix>*);

void check_table(const GtViolationTable& table, ProblemKind kind, const NoiseSchedule& sched) {
  if (table.kind != kind) {
    throw ConfigError("gt table is for " + std::string(to_string(table.kind)) + ", training data is " +
                      std::string(to_string(kind)));
  }
  if (table.K != sched.K || table.mean.size() != sched.K + 1) {
    throw ConfigError("gt table has K = " + std::to_string(table.K) + ", schedule has K = " + std::to_string(sched.K));
  }
  if (table.beta_start != sched.beta_start || table.beta_end != sched.beta_end) {
    throw ConfigError("gt table was computed with a different beta schedule");
  }
}

HybridLossTerms hybrid_loss(const Denoiser& model, const TrainingBatch& batch, const NoiseSchedule& sched,
                            const GtViolationTable& table, double lambda, double p_uncond, Rng& diffusion_rng,
                            Rng& aux_rng, std::vector<Denoiser::Matrix>* grads) {
  check_table(table, model.kind(), sched);
  const HybridDraws draws =
      draw_hybrid_noise(static_cast<int>(batch.x0.cols()), model.dim(), sched, p_uncond, diffusion_rng, aux_rng);
  return hybrid_loss(model, batch, draws, sched, step_denominators(table, draws.diffusion.steps), lambda, grads);
}

BatchLossFn make_hybrid_loss_fn(const TrainConfig& cfg, const NoiseSchedule& sched, const GtViolationTable& table) {
  return [&cfg, &sched, &table](const Denoiser& model, const TrainingBatch& batch, Rng& diffusion_rng, Rng& aux_rng,
                                std::vector<Denoiser::Matrix>& grads) {
    const HybridDraws draws = draw_hybrid_noise(static_cast<int>(batch.x0.cols()), model.dim(), sched, cfg.p_uncond,
                                                diffusion_rng, aux_rng);
    const Eigen::VectorXd denom =
        cfg.gt_weighting == GtWeighting::PerStep
            ? step_denominators(table, draws.diffusion.steps)
            : per_sample_denominators(batch, draws.diffusion.steps, sched, cfg.per_sample_draws, table.epsilon_floor,
                                      aux_rng);
    const HybridLossTerms t = hybrid_loss(model, batch, draws, sched, denom, cfg.lambda, &grads);
    return BatchLoss{t.total, t.diffusion, t.violation};
  };
}

TrainResult train_constrained(const TrainingSet& data, const TrainConfig& cfg, const NoiseSchedule& sched,
                              const GtViolationTable& table) {
  cfg.validate();
  if (cfg.mode != TrainMode::Constrained || !(cfg.lambda > 0.0)) {
    throw ConfigError("train_constrained requires mode = constrained and lambda > 0");
  }
  check_table(table, data.kind, sched);
  return run_training(data, cfg, sched, make_hybrid_loss_fn(cfg, sched, table));
}

}  // namespace cadiff
