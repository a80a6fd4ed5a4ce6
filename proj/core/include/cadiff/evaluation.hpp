#pragma once

// Sample-quality and warm-start statistics, held-out instance generation and
// the JSON/CSV report.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cadiff/diffusion.hpp"
#include "cadiff/nlp_solver.hpp"
#include "cadiff/problems.hpp"

namespace cadiff {

/// Linear interpolation between order statistics (type 7). `values` need not be sorted.
double quantile(std::vector<double> values, double q);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct SampleMetrics {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
  double q25 = 0.0;
  double median = 0.0;
  double feasible_ratio = 0.0;
  int n = 0;
};

SampleMetrics metrics_from_violations(const std::vector<double>& violations, double feas_tol);

/// Violation of one candidate. Normalized vectors are clipped to [-1, 1]
/// before denormalization.
double sample_violation(const DecisionVector& x, const ProblemParams& params);

SampleMetrics sample_metrics(const std::vector<DecisionVector>& samples,
                             const std::vector<ProblemParams>& params_per_sample, double feas_tol = 1e-4,
                             std::vector<double>* violations = nullptr);

struct WarmStartMetrics {
  double mean_time = 0.0;
  double std_time = 0.0;
  double q25_time = 0.0;
  double median_time = 0.0;
  double mean_iters = 0.0;    // inner (projected-gradient) iterations
  double median_iters = 0.0;
  double median_outer_iters = 0.0;
  int n = 0;                  // converged runs
  int n_failed = 0;
  int n_clamped = 0;          // guesses moved into the physical box
  std::vector<int> iterations;  // per guess, converged or not, in input order
  std::vector<int> outer_iterations;
  std::vector<bool> converged;
};

/// Runs solve_local from every guess. Statistics cover converged runs only.
WarmStartMetrics warm_start_benchmark(const std::vector<DecisionVector>& initial_guesses,
                                      const std::vector<ProblemParams>& params_per_guess, const SolveConfig& cfg,
                                      int workers = 1);

/// Instance i uses derive_seed(seed, kEvalInstances, i).
std::vector<ProblemParams> held_out_instances(ProblemKind kind, int n, std::uint64_t seed);

/// `per_instance` uniform draws from the physical box for each instance,
/// instance-major. Draw j of instance i uses derive_seed(seed, kInitialGuess, i * per_instance + j).
std::vector<DecisionVector> uniform_candidates(const std::vector<ProblemParams>& instances, int per_instance,
                                               std::uint64_t seed);

/// `per_instance` guided samples for each instance, instance-major. Instance i
/// samples with seed derive_seed(seed, kSampleChain, i).
std::vector<DecisionVector> diffusion_candidates(const NoisePredictor& model,
                                                 const std::vector<ProblemParams>& instances, int per_instance,
                                                 const GuidanceConfig& guidance, const NoiseSchedule& sched,
                                                 std::uint64_t seed, int workers = 1);

struct MethodReport {
  std::string method;
  std::uint64_t seed = 0;
  SampleMetrics samples;
  std::optional<WarmStartMetrics> warm_start;
  std::vector<double> violations;
  std::vector<int> instance;  // held-out instance index per violation
};

struct Report {
  std::string problem;
  std::string config_hash;
  std::string gt_table;  // path or hash of the gt table used by constrained runs
  double feas_tol = 1e-4;
  std::vector<MethodReport> methods;
};

/// Writes the JSON report and a CSV with columns method,seed,instance,sample,violation.
void emit_report(const Report& report, const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_path);
Report load_report(const std::filesystem::path& json_path);

}  // namespace cadiff
