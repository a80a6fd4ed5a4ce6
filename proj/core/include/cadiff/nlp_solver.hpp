#pragma once

// Local NLP solver (augmented Lagrangian outer loop, projected-gradient inner
// loop) and the dataset-generation pipeline built on it.

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "cadiff/problems.hpp"

namespace cadiff {

enum class StepRule { Backtracking };

struct SolveConfig {
  int max_outer_iters = 20;
  int max_inner_iters = 400;
  double penalty_init = 1.0;
  double penalty_growth = 5.0;
  double feas_tol = 1e-4;
  double opt_tol = 1e-3;
  StepRule step_rule = StepRule::Backtracking;

  void validate() const;
};

struct SolveResult {
  DecisionVector x_star;
  double objective = 0.0;
  double violation = 0.0;
  bool converged = false;
  int outer_iters = 0;
  int inner_iters_total = 0;
  double wall_time = 0.0;
};

/// Per-iteration trace hooks, used by tests to check the line-search and
/// penalty contracts. Either callback may be empty.
struct SolveTrace {
  std::function<void(int outer, double merit)> on_inner_accept;
  std::function<void(int outer, double penalty)> on_outer;
};

SolveResult solve_local(const DecisionVector& x_init, const ProblemParams& params, const SolveConfig& cfg,
                        const SolveTrace* trace = nullptr);

struct DatasetRecord {
  ProblemParams params;
  DecisionVector x_star;  // normalized
  double objective = 0.0;
  double violation = 0.0;
  std::uint64_t source_seed = 0;
};

double objective_threshold(ProblemKind kind);

struct DatasetConfig {
  ProblemKind kind = ProblemKind::Tabletop;
  int n_instances = 1;
  int solves_per_instance = 1;
  SolveConfig solve;
  std::uint64_t seed = 0;
  double objective_threshold = std::numeric_limits<double>::quiet_NaN();  // NaN: per-kind default
  int workers = 1;
};

/// Instance i uses params seed derive_seed(seed, kProblemParams, i); solve s of
/// instance i starts from a uniform guess drawn with
/// derive_seed(seed, kInitialGuess, i * solves_per_instance + s). Records are
/// emitted in (instance, solve) order regardless of `workers`.
std::vector<DatasetRecord> generate_dataset(const DatasetConfig& cfg);

/// Order-preserving filter keeping records with objective <= threshold.
std::vector<DatasetRecord> filter_by_objective(const std::vector<DatasetRecord>& records, double threshold);

}  // namespace cadiff
