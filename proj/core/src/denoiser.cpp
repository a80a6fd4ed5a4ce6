#include "cadiff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cadiff/errors.hpp"

namespace cadiff {

namespace {

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& a) {
  using S = typename Derived::Scalar;
  return (S(1) + (-a).exp()).inverse();
}

template <typename M>
M silu(const M& pre) {
  return (pre.array() * sigmoid(pre.array())).matrix();
}

template <typename M>
M silu_grad(const M& pre) {
  using S = typename M::Scalar;
  const auto s = sigmoid(pre.array()).eval();
  return (s * (S(1) + pre.array() * (S(1) - s))).matrix();
}

}  // namespace

std::string_view to_string(ArchitectureProfile profile) {
  return profile == ArchitectureProfile::Desk ? "desk" : "paper";
}

ArchitectureProfile architecture_profile_from_string(std::string_view name) {
  if (name == "desk") return ArchitectureProfile::Desk;
  if (name == "paper") return ArchitectureProfile::Paper;
  throw ConfigError("unknown profile '" + std::string(name) + "'");
}

DenoiserArchitecture DenoiserArchitecture::for_profile(ArchitectureProfile profile) {
  DenoiserArchitecture a;
  a.profile = profile;
  if (profile == ArchitectureProfile::Paper) {
    a.encoder_widths = {256, 512};
    a.trunk_widths = {512, 512, 1024};
  }
  return a;
}

Eigen::VectorXd time_embedding(int k, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw ConfigError("time embedding dimension must be positive and even");
  const int half = dim / 2;
  Eigen::VectorXd e(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = half == 1 ? 1.0 : std::pow(10.0, -4.0 * i / (half - 1));
    e[i] = std::sin(k * freq);
    e[half + i] = std::cos(k * freq);
  }
  return e;
}

// ---------------------------------------------------------------------------
// BasicDenoiser

template <typename Scalar>
BasicDenoiser<Scalar>::BasicDenoiser(ProblemKind kind, DenoiserArchitecture arch, Uninitialized)
    : kind_(kind), arch_(std::move(arch)) {
  dim_ = layout(kind).decision_dim();
  cond_dim_ = condition_feature_dim(kind);
  if (arch_.encoder_widths.empty() || arch_.trunk_widths.empty()) {
    throw ConfigError("encoder and trunk need at least one layer");
  }
  if (arch_.time_embed_dim <= 0 || arch_.time_embed_dim % 2 != 0) {
    throw ConfigError("time embedding dimension must be positive and even");
  }
}

template <typename Scalar>
BasicDenoiser<Scalar>::BasicDenoiser(ProblemKind kind, DenoiserArchitecture arch, std::uint64_t seed)
    : BasicDenoiser(kind, std::move(arch), Uninitialized{}) {
  build_shapes();
  bind_layers();
  // Scaled-uniform fan-in init drawn in double so float and double models
  // built from one seed agree. The output layer starts at zero.
  Rng rng(derive_seed(seed, streams::kModelInit, 0));
  for (auto& p : params_) {
    const bool is_output = p.name.rfind("out.", 0) == 0;
    if (is_output) {
      p.value.setZero();
      continue;
    }
    double bound = 0.0;
    if (p.name == "null_token") {
      bound = 1.0 / std::sqrt(static_cast<double>(p.value.rows()));
    } else if (p.name.ends_with(".weight")) {
      bound = 1.0 / std::sqrt(static_cast<double>(p.value.cols()));
    } else {
      // Bias: same bound as its weight matrix (fan-in of the previous tensor).
      const auto& w = params_[static_cast<std::size_t>(&p - params_.data()) - 1].value;
      bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    }
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Scalar>(uniform(rng, -bound, bound));
  }
}

template <typename Scalar>
void BasicDenoiser<Scalar>::build_shapes() {
  params_.clear();
  int in = cond_dim_;
  for (std::size_t i = 0; i < arch_.encoder_widths.size(); ++i) {
    const int w = arch_.encoder_widths[i];
    params_.push_back({"enc." + std::to_string(i) + ".weight", Matrix::Zero(w, in)});
    params_.push_back({"enc." + std::to_string(i) + ".bias", Matrix::Zero(w, 1)});
    in = w;
  }
  const int embed = arch_.encoder_widths.back();
  params_.push_back({"null_token", Matrix::Zero(embed, 1)});
  in = dim_ + arch_.time_embed_dim + embed;
  for (std::size_t i = 0; i < arch_.trunk_widths.size(); ++i) {
    const int w = arch_.trunk_widths[i];
    params_.push_back({"trunk." + std::to_string(i) + ".weight", Matrix::Zero(w, in)});
    params_.push_back({"trunk." + std::to_string(i) + ".bias", Matrix::Zero(w, 1)});
    in = w;
  }
  params_.push_back({"out.weight", Matrix::Zero(dim_, in)});
  params_.push_back({"out.bias", Matrix::Zero(dim_, 1)});
}

template <typename Scalar>
void BasicDenoiser<Scalar>::bind_layers() {
  encoder_.clear();
  trunk_.clear();
  std::size_t idx = 0;
  for (std::size_t i = 0; i < arch_.encoder_widths.size(); ++i, idx += 2) encoder_.push_back({idx, idx + 1, false});
  null_token_ = idx++;
  int in = dim_ + arch_.time_embed_dim + arch_.encoder_widths.back();
  for (std::size_t i = 0; i < arch_.trunk_widths.size(); ++i, idx += 2) {
    const int w = arch_.trunk_widths[i];
    trunk_.push_back({idx, idx + 1, i > 0 && w == in});
    in = w;
  }
  out_ = {idx, idx + 1, false};
}

template <typename Scalar>
BasicDenoiser<Scalar> BasicDenoiser<Scalar>::from_tensors(ProblemKind kind, DenoiserArchitecture arch,
                                                          std::vector<NamedTensor<Scalar>> tensors) {
  BasicDenoiser model(kind, std::move(arch), Uninitialized{});
  model.build_shapes();
  if (tensors.size() != model.params_.size()) {
    throw IncompatibleFileError("checkpoint has " + std::to_string(tensors.size()) + " tensors, architecture needs " +
                                std::to_string(model.params_.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& expect = model.params_[i];
    const auto& got = tensors[i];
    if (got.name != expect.name || got.value.rows() != expect.value.rows() ||
        got.value.cols() != expect.value.cols()) {
      throw IncompatibleFileError("tensor '" + got.name + "' does not match architecture tensor '" + expect.name +
                                  "'");
    }
  }
  model.params_ = std::move(tensors);
  model.bind_layers();
  return model;
}

template <typename Scalar>
std::vector<typename BasicDenoiser<Scalar>::Matrix> BasicDenoiser<Scalar>::zero_gradients() const {
  std::vector<Matrix> g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  return g;
}

template <typename Scalar>
std::size_t BasicDenoiser<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename Scalar>
void BasicDenoiser<Scalar>::check_inputs(const Matrix& x, std::span<const int> steps,
                                         std::span<const ProblemParams* const> conditions) const {
  if (x.rows() != dim_) throw ShapeError("denoiser input has " + std::to_string(x.rows()) + " rows, expected " +
                                         std::to_string(dim_));
  if (static_cast<std::size_t>(x.cols()) != steps.size() || steps.size() != conditions.size()) {
    throw ShapeError("denoiser batch, steps and conditions differ in length");
  }
  if (!x.allFinite()) throw NumericInputError("denoiser input contains non-finite values");
  for (const ProblemParams* c : conditions) {
    if (c != nullptr && c->kind != kind_) throw ConfigError("condition has a different problem kind than the model");
  }
}

template <typename Scalar>
typename BasicDenoiser<Scalar>::Vector BasicDenoiser<Scalar>::encode_condition(const ProblemParams* params) const {
  if (params == nullptr) return params_[null_token_].value.col(0);
  if (params->kind != kind_) throw ConfigError("condition has a different problem kind than the model");
  Matrix h = condition_features(*params).template cast<Scalar>();
  for (const Layer& l : encoder_) {
    h = silu(Matrix((params_[l.weight].value * h).colwise() + params_[l.bias].value.col(0)));
  }
  return h.col(0);
}

template <typename Scalar>
typename BasicDenoiser<Scalar>::Matrix BasicDenoiser<Scalar>::forward(
    const Matrix& x, std::span<const int> steps, std::span<const ProblemParams* const> conditions,
    Tape* tape) const {
  check_inputs(x, steps, conditions);
  const Eigen::Index B = x.cols();
  const int T = arch_.time_embed_dim;
  const int E = arch_.encoder_widths.back();

  std::vector<int> cond_cols;
  std::vector<int> null_cols;
  for (Eigen::Index j = 0; j < B; ++j) {
    (conditions[static_cast<std::size_t>(j)] != nullptr ? cond_cols : null_cols).push_back(static_cast<int>(j));
  }

  Matrix input(dim_ + T + E, B);
  input.topRows(dim_) = x;
  for (Eigen::Index j = 0; j < B; ++j) {
    input.col(j).segment(dim_, T) = time_embedding(steps[static_cast<std::size_t>(j)], T).template cast<Scalar>();
  }
  for (int j : null_cols) input.col(j).tail(E) = params_[null_token_].value.col(0);

  if (!cond_cols.empty()) {
    Matrix h(cond_dim_, static_cast<Eigen::Index>(cond_cols.size()));
    for (std::size_t c = 0; c < cond_cols.size(); ++c) {
      h.col(static_cast<Eigen::Index>(c)) =
          condition_features(*conditions[static_cast<std::size_t>(cond_cols[c])]).template cast<Scalar>();
    }
    for (const Layer& l : encoder_) {
      Matrix pre = (params_[l.weight].value * h).colwise() + params_[l.bias].value.col(0);
      Matrix post = silu(pre);
      if (tape != nullptr) {
        tape->encoder_post.push_back(std::move(h));
        tape->encoder_pre.push_back(std::move(pre));
      }
      h = std::move(post);
    }
    for (std::size_t c = 0; c < cond_cols.size(); ++c) input.col(cond_cols[c]).tail(E) = h.col(static_cast<Eigen::Index>(c));
  }

  Matrix h = input;
  for (const Layer& l : trunk_) {
    Matrix pre = (params_[l.weight].value * h).colwise() + params_[l.bias].value.col(0);
    Matrix next = l.residual ? Matrix(h + silu(pre)) : silu(pre);
    if (tape != nullptr) {
      tape->trunk_in.push_back(std::move(h));
      tape->trunk_pre.push_back(std::move(pre));
    }
    h = std::move(next);
  }
  Matrix out = (params_[out_.weight].value * h).colwise() + params_[out_.bias].value.col(0);
  if (tape != nullptr) {
    tape->cond_columns = std::move(cond_cols);
    tape->null_columns = std::move(null_cols);
    tape->trunk_input = std::move(input);
    tape->trunk_out = std::move(h);
  }
  return out;
}

template <typename Scalar>
void BasicDenoiser<Scalar>::backward(const Tape& tape, const Matrix& d_out, std::vector<Matrix>& grads) const {
  if (grads.size() != params_.size()) throw ShapeError("gradient buffer does not match parameters");
  const int E = arch_.encoder_widths.back();

  grads[out_.weight].noalias() += d_out * tape.trunk_out.transpose();
  grads[out_.bias] += d_out.rowwise().sum();
  Matrix dh = params_[out_.weight].value.transpose() * d_out;

  for (std::size_t i = trunk_.size(); i-- > 0;) {
    const Layer& l = trunk_[i];
    const Matrix da = (dh.array() * silu_grad(tape.trunk_pre[i]).array()).matrix();
    grads[l.weight].noalias() += da * tape.trunk_in[i].transpose();
    grads[l.bias] += da.rowwise().sum();
    Matrix d_in = params_[l.weight].value.transpose() * da;
    if (l.residual) d_in += dh;
    dh = std::move(d_in);
  }

  const auto d_embed = dh.bottomRows(E);
  for (int j : tape.null_columns) grads[null_token_] += d_embed.col(j);
  if (tape.cond_columns.empty()) return;

  Matrix dc(E, static_cast<Eigen::Index>(tape.cond_columns.size()));
  for (std::size_t c = 0; c < tape.cond_columns.size(); ++c) dc.col(static_cast<Eigen::Index>(c)) = d_embed.col(tape.cond_columns[c]);
  for (std::size_t i = encoder_.size(); i-- > 0;) {
    const Layer& l = encoder_[i];
    const Matrix da = (dc.array() * silu_grad(tape.encoder_pre[i]).array()).matrix();
    grads[l.weight].noalias() += da * tape.encoder_post[i].transpose();
    grads[l.bias] += da.rowwise().sum();
    if (i > 0) dc = params_[l.weight].value.transpose() * da;
  }
}

template <typename Scalar>
Eigen::MatrixXd BasicDenoiser<Scalar>::predict(const Eigen::MatrixXd& x, std::span<const int> steps,
                                               std::span<const ProblemParams* const> conditions) const {
  return forward(x.cast<Scalar>(), steps, conditions).template cast<double>();
}

template class BasicDenoiser<float>;
template class BasicDenoiser<double>;

// ---------------------------------------------------------------------------
// Training

std::string_view to_string(TrainMode mode) { return mode == TrainMode::Vanilla ? "vanilla" : "constrained"; }

TrainMode train_mode_from_string(std::string_view name) {
  if (name == "vanilla") return TrainMode::Vanilla;
  if (name == "constrained") return TrainMode::Constrained;
  throw ConfigError("unknown training mode '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(p_uncond >= 0.0 && p_uncond <= 1.0)) throw ConfigError("p_uncond must lie in [0, 1]");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
  if ((lambda == 0.0) != (mode == TrainMode::Vanilla)) {
    throw ConfigError("lambda must be 0 exactly when mode is vanilla");
  }
  if (per_sample_draws < 1) throw ConfigError("per_sample_draws must be positive");
}

TrainingSet TrainingSet::from_records(const std::vector<DatasetRecord>& records) {
  if (records.empty()) throw ConfigError("training dataset is empty");
  TrainingSet set;
  set.kind = records.front().params.kind;
  const int dim = layout(set.kind).decision_dim();
  set.x0.resize(dim, static_cast<Eigen::Index>(records.size()));
  set.params.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.params.kind != set.kind || r.x_star.kind != set.kind) {
      throw ConfigError("training dataset mixes problem kinds");
    }
    if (!r.x_star.normalized) throw ConfigError("training records must hold normalized decision vectors");
    set.x0.col(static_cast<Eigen::Index>(i)) = r.x_star.values;
    set.params.push_back(r.params);
  }
  return set;
}

DiffusionDraws draw_diffusion_noise(int batch, int dim, const NoiseSchedule& sched, double p_uncond, Rng& rng) {
  if (batch < 1) throw ConfigError("diffusion loss needs a non-empty batch");
  DiffusionDraws d;
  d.steps.resize(static_cast<std::size_t>(batch));
  d.eps.resize(dim, batch);
  d.drop_condition.resize(static_cast<std::size_t>(batch));
  std::uniform_int_distribution<int> step_dist(1, sched.K);
  std::bernoulli_distribution drop(p_uncond);
  for (int j = 0; j < batch; ++j) {
    d.steps[static_cast<std::size_t>(j)] = step_dist(rng);
    d.eps.col(j) = standard_normal_vector(rng, dim);
    d.drop_condition[static_cast<std::size_t>(j)] = drop(rng);
  }
  return d;
}

template <typename Scalar>
DiffusionLossTerms diffusion_loss(const BasicDenoiser<Scalar>& model, const TrainingBatch& batch,
                                  const DiffusionDraws& draws, const NoiseSchedule& sched,
                                  std::vector<typename BasicDenoiser<Scalar>::Matrix>* grads) {
  using Matrix = typename BasicDenoiser<Scalar>::Matrix;
  const Eigen::Index B = batch.x0.cols();
  if (B == 0) throw ConfigError("diffusion loss needs a non-empty batch");
  if (draws.eps.cols() != B || draws.eps.rows() != batch.x0.rows()) throw ShapeError("draws do not match batch");

  DiffusionLossTerms terms;
  Eigen::MatrixXd x_k(batch.x0.rows(), B);
  std::vector<const ProblemParams*> conds(static_cast<std::size_t>(B));
  for (Eigen::Index j = 0; j < B; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    x_k.col(j) = forward_sample(batch.x0.col(j), draws.steps[uj], draws.eps.col(j), sched);
    conds[uj] = draws.drop_condition[uj] ? nullptr : batch.params[uj];
    if (conds[uj] == nullptr) ++terms.unconditional_evaluations;
  }
  typename BasicDenoiser<Scalar>::Tape tape;
  const Matrix out = model.forward(x_k.cast<Scalar>(), draws.steps, conds, grads != nullptr ? &tape : nullptr);
  const Eigen::MatrixXd diff = out.template cast<double>() - draws.eps;
  terms.value = diff.colwise().squaredNorm().sum() / static_cast<double>(B);
  if (grads != nullptr) {
    const Matrix d_out = ((2.0 / static_cast<double>(B)) * diff).cast<Scalar>();
    model.backward(tape, d_out, *grads);
  }
  return terms;
}

template DiffusionLossTerms diffusion_loss<float>(const BasicDenoiser<float>&, const TrainingBatch&,
                                                  const DiffusionDraws&, const NoiseSchedule&,
                                                  std::vector<BasicDenoiser<float>::Matrix>*);
template DiffusionLossTerms diffusion_loss<double>(const BasicDenoiser<double>&, const TrainingBatch&,
                                                   const DiffusionDraws&, const NoiseSchedule&,
                                                   std::vector<BasicDenoiser<double>::Matrix>*);

DiffusionLossTerms diffusion_loss(const Denoiser& model, const TrainingBatch& batch, const NoiseSchedule& sched,
                                  double p_uncond, Rng& rng, std::vector<Denoiser::Matrix>* grads) {
  const DiffusionDraws draws =
      draw_diffusion_noise(static_cast<int>(batch.x0.cols()), model.dim(), sched, p_uncond, rng);
  return diffusion_loss(model, batch, draws, sched, grads);
}

namespace {

class Adam {
 public:
  Adam(const Denoiser& model, const TrainConfig& cfg) : cfg_(cfg), m_(model.zero_gradients()), v_(model.zero_gradients()) {}

  void step(Denoiser& model, const std::vector<Denoiser::Matrix>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
    const float b1 = static_cast<float>(cfg_.adam_beta1);
    const float b2 = static_cast<float>(cfg_.adam_beta2);
    const float lr = static_cast<float>(cfg_.learning_rate * std::sqrt(c2) / c1);
    const float eps = static_cast<float>(cfg_.adam_eps * std::sqrt(c2));
    auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0f - b1) * grads[i];
      v_[i] = b2 * v_[i] + (1.0f - b2) * grads[i].cwiseAbs2();
      params[i].value.array() -= lr * m_[i].array() / (v_[i].array().sqrt() + eps);
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<Denoiser::Matrix> m_;
  std::vector<Denoiser::Matrix> v_;
  int t_ = 0;
};

}  // namespace

TrainResult run_training(const TrainingSet& data, const TrainConfig& cfg, const NoiseSchedule& sched,
                         const BatchLossFn& loss_fn) {
  if (data.size() == 0) throw ConfigError("training dataset is empty");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("epochs and batch_size must be positive");
  if (sched.K < 1) throw ConfigError("schedule needs at least one step");
  TrainResult result{Denoiser(data.kind, cfg.architecture, cfg.seed), {}};
  Denoiser& model = result.model;
  Adam adam(model, cfg);

  Rng shuffle_rng(derive_seed(cfg.seed, streams::kTrainShuffle, 0));
  Rng diffusion_rng(derive_seed(cfg.seed, streams::kTrainDiffusion, 0));
  Rng aux_rng(derive_seed(cfg.seed, streams::kTrainReverseNoise, 0));

  std::vector<int> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog log{epoch, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      TrainingBatch batch;
      batch.x0.resize(data.x0.rows(), static_cast<Eigen::Index>(end - start));
      for (std::size_t i = start; i < end; ++i) {
        batch.x0.col(static_cast<Eigen::Index>(i - start)) = data.x0.col(order[i]);
        batch.params.push_back(&data.params[static_cast<std::size_t>(order[i])]);
      }
      auto grads = model.zero_gradients();
      const BatchLoss bl = loss_fn(model, batch, diffusion_rng, aux_rng, grads);
      ++step;
      bool grads_finite = true;
      for (const auto& g : grads) grads_finite = grads_finite && g.allFinite();
      if (!std::isfinite(bl.total) || !grads_finite) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", step " << step << " (batch of "
            << (end - start) << " starting at shuffled index " << start << ", learning rate " << cfg.learning_rate
            << "): total=" << bl.total << " diffusion=" << bl.diffusion << " violation=" << bl.violation;
        throw TrainingDivergedError(msg.str());
      }
      adam.step(model, grads);
      const double w = static_cast<double>(end - start);
      log.loss += w * bl.total;
      log.diffusion += w * bl.diffusion;
      log.violation += w * bl.violation;
    }
    log.loss /= data.size();
    log.diffusion /= data.size();
    log.violation /= data.size();
    result.log.push_back(log);
  }
  return result;
}

TrainResult train_vanilla(const TrainingSet& data, const TrainConfig& cfg, const NoiseSchedule& sched) {
  cfg.validate();
  if (cfg.mode != TrainMode::Vanilla) throw ConfigError("train_vanilla requires mode = vanilla");
  return run_training(data, cfg, sched,
                      [&](const Denoiser& model, const TrainingBatch& batch, Rng& diffusion_rng, Rng&,
                          std::vector<Denoiser::Matrix>& grads) {
                        const DiffusionLossTerms t =
                            diffusion_loss(model, batch, sched, cfg.p_uncond, diffusion_rng, &grads);
                        return BatchLoss{t.value, t.value, 0.0};
                      });
}

}  // namespace cadiff
