#include "cadiff/nlp_solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>

#include <Eigen/QR>

#include "cadiff/errors.hpp"
#include "cadiff/parallel.hpp"

namespace cadiff {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxBacktracks = 40;
constexpr double kMinStep = 1e-12;
constexpr double kMaxStep = 1e6;
constexpr double kPenaltyMax = 1e8;
constexpr double kSufficientViolationDecrease = 0.25;
constexpr double kActiveThreshold = -1e-3;
constexpr double kBoundSlack = 1e-9;
constexpr double kPreconditionerFloor = 1e-3;

// The solver iterates in normalized coordinates z in [-1, 1]^n, which keeps
// the final-time and control components on comparable scales.
class AugmentedLagrangian {
 public:
  AugmentedLagrangian(const ProblemParams& params) : params_(params), kind_(params.kind) {
    const DecisionBox& box = decision_box(kind_);
    center_ = 0.5 * (box.upper + box.lower);
    half_ = 0.5 * (box.upper - box.lower);
    const ProblemLayout& l = layout(kind_);
    const int n_obs = static_cast<int>(params.obstacle_centers.size());
    mu_ = Eigen::VectorXd::Zero(l.inequality_count(n_obs));
    lambda_ = Eigen::VectorXd::Zero(l.equality_count());
  }

  DecisionVector physical(const Eigen::VectorXd& z) const {
    return DecisionVector{kind_, (center_.array() + half_.array() * z.array()).matrix(), false};
  }

  Eigen::VectorXd to_z(const DecisionVector& x) const {
    return ((x.values - center_).array() / half_.array()).matrix();
  }

  double merit(const Eigen::VectorXd& z) const {
    const DecisionVector x = physical(z);
    const ConstraintValues cv = evaluate_constraints(rollout(x, params_), params_);
    return merit_from(x, cv);
  }

  // Returns merit and fills the gradient in z coordinates.
  double merit_and_gradient(const Eigen::VectorXd& z, Eigen::VectorXd& grad_z) const {
    const DecisionVector x = physical(z);
    const Trajectory traj = rollout(x, params_);
    const ConstraintValues cv = evaluate_constraints(traj, params_);
    const Eigen::VectorXd w_ineq = (mu_ + rho_ * cv.inequality).cwiseMax(0.0);
    const Eigen::VectorXd w_eq = lambda_ + rho_ * cv.equality;
    Eigen::VectorXd grad_x = constraint_vjp(x, traj, params_, w_ineq, w_eq);
    grad_x[0] += 1.0;
    grad_z = grad_x.cwiseProduct(half_);
    return merit_from(x, cv);
  }

  void update_multipliers(const ConstraintValues& cv) {
    lambda_ += rho_ * cv.equality;
    mu_ = (mu_ + rho_ * cv.inequality).cwiseMax(0.0);
  }

  // First-order multiplier estimate at z: least squares on the stationarity
  // condition over the free components, with the nearly-active inequality
  // multipliers kept nonnegative by dropping negative ones.
  void estimate_multipliers(const Eigen::VectorXd& z) {
    const DecisionVector x = physical(z);
    const Trajectory traj = rollout(x, params_);
    const ConstraintValues cv = evaluate_constraints(traj, params_);
    const Eigen::Index n = z.size();

    std::vector<Eigen::Index> free;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (z[k] > -1.0 + kBoundSlack && z[k] < 1.0 - kBoundSlack) free.push_back(k);
    }
    std::vector<Eigen::Index> active;
    for (Eigen::Index i = 0; i < cv.inequality.size(); ++i) {
      if (cv.inequality[i] >= kActiveThreshold) active.push_back(i);
    }
    const Eigen::Index m = cv.equality.size();
    if (free.empty()) return;

    Eigen::MatrixXd cols(n, m + static_cast<Eigen::Index>(active.size()));
    Eigen::VectorXd w_ineq = Eigen::VectorXd::Zero(cv.inequality.size());
    Eigen::VectorXd w_eq = Eigen::VectorXd::Zero(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      w_eq[j] = 1.0;
      cols.col(j) = constraint_vjp(x, traj, params_, w_ineq, w_eq);
      w_eq[j] = 0.0;
    }
    for (std::size_t a = 0; a < active.size(); ++a) {
      w_ineq[active[a]] = 1.0;
      cols.col(m + static_cast<Eigen::Index>(a)) = constraint_vjp(x, traj, params_, w_ineq, w_eq);
      w_ineq[active[a]] = 0.0;
    }

    Eigen::MatrixXd A(static_cast<Eigen::Index>(free.size()), cols.cols());
    Eigen::VectorXd b(static_cast<Eigen::Index>(free.size()));
    for (std::size_t r = 0; r < free.size(); ++r) {
      A.row(static_cast<Eigen::Index>(r)) = cols.row(free[r]);
      b[static_cast<Eigen::Index>(r)] = free[r] == 0 ? -1.0 : 0.0;
    }

    std::vector<bool> keep(static_cast<std::size_t>(cols.cols()), true);
    Eigen::VectorXd nu = Eigen::VectorXd::Zero(cols.cols());
    for (;;) {
      std::vector<Eigen::Index> idx;
      for (Eigen::Index c = 0; c < cols.cols(); ++c) {
        if (keep[static_cast<std::size_t>(c)]) idx.push_back(c);
      }
      Eigen::MatrixXd sub(A.rows(), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t c = 0; c < idx.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = A.col(idx[c]);
      const Eigen::VectorXd sol = sub.completeOrthogonalDecomposition().solve(b);
      nu.setZero();
      for (std::size_t c = 0; c < idx.size(); ++c) nu[idx[c]] = sol[static_cast<Eigen::Index>(c)];
      Eigen::Index worst = -1;
      double worst_value = 0.0;
      for (Eigen::Index c = m; c < cols.cols(); ++c) {
        if (keep[static_cast<std::size_t>(c)] && nu[c] < worst_value) {
          worst_value = nu[c];
          worst = c;
        }
      }
      if (worst < 0) break;
      keep[static_cast<std::size_t>(worst)] = false;
    }
    if (!nu.allFinite()) return;
    lambda_ = nu.head(m);
    for (std::size_t a = 0; a < active.size(); ++a) mu_[active[a]] = nu[m + static_cast<Eigen::Index>(a)];
  }

  // Diagonal of the Gauss-Newton approximation to the penalty Hessian in z
  // coordinates: rho * sum of squared gradients of the equalities and of the
  // inequalities currently inside the penalty region.
  Eigen::VectorXd gauss_newton_diagonal(const Eigen::VectorXd& z) const {
    const DecisionVector x = physical(z);
    const Trajectory traj = rollout(x, params_);
    const ConstraintValues cv = evaluate_constraints(traj, params_);
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(z.size());
    Eigen::VectorXd w_ineq = Eigen::VectorXd::Zero(cv.inequality.size());
    Eigen::VectorXd w_eq = Eigen::VectorXd::Zero(cv.equality.size());
    for (Eigen::Index j = 0; j < w_eq.size(); ++j) {
      w_eq[j] = 1.0;
      diag += constraint_vjp(x, traj, params_, w_ineq, w_eq).cwiseProduct(half_).cwiseAbs2();
      w_eq[j] = 0.0;
    }
    for (Eigen::Index i = 0; i < w_ineq.size(); ++i) {
      if (mu_[i] + rho_ * cv.inequality[i] <= 0.0) continue;
      w_ineq[i] = 1.0;
      diag += constraint_vjp(x, traj, params_, w_ineq, w_eq).cwiseProduct(half_).cwiseAbs2();
      w_ineq[i] = 0.0;
    }
    return rho_ * diag;
  }

  ConstraintValues constraints(const Eigen::VectorXd& z) const {
    return evaluate_constraints(rollout(physical(z), params_), params_);
  }

  const Eigen::VectorXd& half_widths() const { return half_; }
  double penalty() const { return rho_; }
  void set_penalty(double rho) { rho_ = rho; }

 private:
  double merit_from(const DecisionVector& x, const ConstraintValues& cv) const {
    double value = x.t_final();
    value += lambda_.dot(cv.equality) + 0.5 * rho_ * cv.equality.squaredNorm();
    const Eigen::VectorXd shifted = (mu_ + rho_ * cv.inequality).cwiseMax(0.0);
    value += (shifted.squaredNorm() - mu_.squaredNorm()) / (2.0 * rho_);
    return value;
  }

  const ProblemParams& params_;
  ProblemKind kind_;
  Eigen::VectorXd center_;
  Eigen::VectorXd half_;
  Eigen::VectorXd mu_;
  Eigen::VectorXd lambda_;
  double rho_ = 1.0;
};

Eigen::VectorXd project(const Eigen::VectorXd& z) { return z.cwiseMax(-1.0).cwiseMin(1.0); }

// Stationarity measure in physical units: || P(x - grad_x L) - x ||_inf.
double projected_gradient_norm(const AugmentedLagrangian& al, const Eigen::VectorXd& z, const Eigen::VectorXd& g) {
  const Eigen::VectorXd& half = al.half_widths();
  const Eigen::VectorXd g_x = g.cwiseQuotient(half);
  const Eigen::VectorXd z_trial = project(z - g_x.cwiseQuotient(half));
  return (z_trial - z).cwiseProduct(half).lpNorm<Eigen::Infinity>();
}

struct InnerResult {
  int iterations = 0;
  double pg_norm = 0.0;
  bool finite = true;
};

// Projected gradient with a Barzilai-Borwein trial step and monotone Armijo
// backtracking along the projection arc. The gradient is scaled by the
// inverse Gauss-Newton diagonal of the penalty terms, refreshed once per
// outer iteration; late controls of the car dynamics have far less leverage
// on the terminal state than early ones and stall plain gradient steps.
InnerResult minimize_inner(AugmentedLagrangian& al, Eigen::VectorXd& z, const SolveConfig& cfg, int outer,
                           const SolveTrace* trace) {
  InnerResult res;
  Eigen::VectorXd grad;
  double f = al.merit_and_gradient(z, grad);
  if (!std::isfinite(f) || !grad.allFinite()) {
    res.finite = false;
    return res;
  }
  // Diagonal scaling of the gradient step; projection onto the box is
  // unchanged by a positive diagonal metric.
  const Eigen::VectorXd diag = al.gauss_newton_diagonal(z);
  const double floor = std::max(kPreconditionerFloor * diag.maxCoeff(), 1e-12);
  Eigen::VectorXd scale = (diag.array() + floor).inverse().matrix();
  scale /= scale.maxCoeff();
  double step = 1.0 / std::max(grad.lpNorm<Eigen::Infinity>(), 1.0);
  Eigen::VectorXd grad_new;
  for (; res.iterations < cfg.max_inner_iters; ++res.iterations) {
    res.pg_norm = projected_gradient_norm(al, z, grad);
    if (res.pg_norm <= cfg.opt_tol) return res;

    bool accepted = false;
    Eigen::VectorXd z_new;
    double f_new = f;
    for (int bt = 0; bt < kMaxBacktracks; ++bt) {
      z_new = project(z - step * scale.cwiseProduct(grad));
      const Eigen::VectorXd d = z_new - z;
      f_new = al.merit(z_new);
      if (std::isfinite(f_new) && f_new <= f + kArmijo * grad.dot(d)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    f_new = al.merit_and_gradient(z_new, grad_new);
    if (!std::isfinite(f_new) || !grad_new.allFinite()) {
      res.finite = false;
      return res;
    }
    if (trace != nullptr && trace->on_inner_accept) trace->on_inner_accept(outer, f_new);

    const Eigen::VectorXd s = z_new - z;
    const Eigen::VectorXd y = grad_new - grad;
    const double sy = s.dot(y);
    step = sy > 0.0 ? std::clamp(s.dot(s.cwiseQuotient(scale)) / sy, kMinStep, kMaxStep) : kMaxStep;
    z = std::move(z_new);
    grad.swap(grad_new);
    f = f_new;
  }
  res.pg_norm = projected_gradient_norm(al, z, grad);
  return res;
}

}  // namespace

void SolveConfig::validate() const {
  if (!(feas_tol > 0.0)) throw ConfigError("feas_tol must be positive");
  if (!(opt_tol > 0.0)) throw ConfigError("opt_tol must be positive");
  if (!(penalty_growth > 1.0)) throw ConfigError("penalty_growth must exceed 1");
  if (!(penalty_init > 0.0)) throw ConfigError("penalty_init must be positive");
  if (max_outer_iters < 1 || max_inner_iters < 1) throw ConfigError("iteration limits must be positive");
}

SolveResult solve_local(const DecisionVector& x_init, const ProblemParams& params, const SolveConfig& cfg,
                        const SolveTrace* trace) {
  cfg.validate();
  if (x_init.normalized) throw ConfigError("solve_local expects a physical-space initial guess");
  if (x_init.kind != params.kind) throw ConfigError("initial guess and params have different problem kinds");
  const auto t0 = std::chrono::steady_clock::now();

  AugmentedLagrangian al(params);
  al.set_penalty(cfg.penalty_init);
  Eigen::VectorXd z = project(al.to_z(x_init));

  SolveResult result;
  Eigen::VectorXd best_z = z;
  double best_violation = std::numeric_limits<double>::infinity();
  double best_objective = std::numeric_limits<double>::infinity();
  auto consider = [&](const Eigen::VectorXd& cand, double viol) {
    const double obj = al.physical(cand).values[0];
    const bool cand_feasible = viol <= cfg.feas_tol;
    const bool best_feasible = best_violation <= cfg.feas_tol;
    if ((cand_feasible && (!best_feasible || obj < best_objective)) || (!best_feasible && viol < best_violation)) {
      best_z = cand;
      best_violation = viol;
      best_objective = obj;
    }
  };

  if (!z.allFinite()) {
    result.x_star = x_init;
    result.violation = std::numeric_limits<double>::infinity();
    result.objective = x_init.t_final();
    return result;
  }

  {
    const ConstraintValues cv = al.constraints(z);
    const double v0 = violation(cv, params.kind).total;
    consider(z, v0);
    if (v0 <= 10.0 * cfg.feas_tol) al.estimate_multipliers(z);
  }

  double prev_violation = std::numeric_limits<double>::infinity();
  for (int outer = 1; outer <= cfg.max_outer_iters; ++outer) {
    result.outer_iters = outer;
    if (trace != nullptr && trace->on_outer) trace->on_outer(outer, al.penalty());
    const InnerResult inner = minimize_inner(al, z, cfg, outer, trace);
    result.inner_iters_total += inner.iterations;
    if (!inner.finite || !z.allFinite()) break;
    const ConstraintValues cv = al.constraints(z);
    const double viol = violation(cv, params.kind).total;
    if (!std::isfinite(viol)) break;
    consider(z, viol);
    if (viol <= cfg.feas_tol && inner.pg_norm <= cfg.opt_tol) {
      result.converged = true;
      best_z = z;
      best_violation = viol;
      break;
    }
    al.update_multipliers(cv);
    if (viol > cfg.feas_tol && viol > kSufficientViolationDecrease * prev_violation) {
      al.set_penalty(std::min(al.penalty() * cfg.penalty_growth, kPenaltyMax));
    }
    prev_violation = viol;
  }

  result.x_star = al.physical(best_z);
  result.objective = result.x_star.t_final();
  result.violation = best_violation;
  result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

double objective_threshold(ProblemKind kind) { return kind == ProblemKind::Tabletop ? 12.0 : 14.0; }

std::vector<DatasetRecord> generate_dataset(const DatasetConfig& cfg) {
  if (cfg.n_instances < 1) throw ConfigError("n_instances must be at least 1");
  if (cfg.solves_per_instance < 1) throw ConfigError("solves_per_instance must be at least 1");
  cfg.solve.validate();
  const double threshold = std::isnan(cfg.objective_threshold) ? objective_threshold(cfg.kind)
                                                                : cfg.objective_threshold;

  std::vector<std::vector<DatasetRecord>> per_instance(static_cast<std::size_t>(cfg.n_instances));
  parallel_for(per_instance.size(), cfg.workers, [&](std::size_t i) {
    const std::uint64_t params_seed = derive_seed(cfg.seed, streams::kProblemParams, i);
    const ProblemParams params = sample_problem_params(params_seed, cfg.kind);
    std::vector<DatasetRecord> records;
    for (int s = 0; s < cfg.solves_per_instance; ++s) {
      const std::uint64_t guess_seed =
          derive_seed(cfg.seed, streams::kInitialGuess, i * static_cast<std::uint64_t>(cfg.solves_per_instance) + s);
      Rng rng(guess_seed);
      const SolveResult res = solve_local(uniform_decision(cfg.kind, rng), params, cfg.solve);
      if (!res.converged) continue;
      bool clamped = false;
      DatasetRecord rec{params, normalize(res.x_star, &clamped), res.objective, res.violation, params_seed};
      // Re-check in the stored representation so the record invariant holds
      // after the normalization round trip.
      rec.violation = violation(denormalize(rec.x_star), params).total;
      if (rec.violation > cfg.solve.feas_tol) continue;
      records.push_back(std::move(rec));
    }
    records = filter_by_objective(records, threshold);
    if (records.empty()) {
      std::cerr << "[gen-data] instance " << i << " (seed " << params_seed
                << ") produced no converged solutions under the objective threshold; skipped\n";
    }
    per_instance[i] = std::move(records);
  });

  std::vector<DatasetRecord> out;
  for (auto& recs : per_instance) {
    for (auto& r : recs) out.push_back(std::move(r));
  }
  return out;
}

std::vector<DatasetRecord> filter_by_objective(const std::vector<DatasetRecord>& records, double threshold) {
  std::vector<DatasetRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [threshold](const DatasetRecord& r) { return r.objective <= threshold; });
  return out;
}

}  // namespace cadiff
