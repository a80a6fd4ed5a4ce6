#include "cadiff/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "cadiff/constraint_align.hpp"
#include "cadiff/errors.hpp"
#include "cadiff/parallel.hpp"

namespace cadiff {

using nlohmann::json;

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
    i = j + 1;
  }
  return r;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ConfigError("spearman needs two equal-length series of length >= 2");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double ma = mean_of(ra);
  const double mb = mean_of(rb);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

SampleMetrics metrics_from_violations(const std::vector<double>& violations, double feas_tol) {
  if (violations.empty()) throw ConfigError("sample metrics need at least one sample");
  SampleMetrics m;
  m.n = static_cast<int>(violations.size());
  m.mean = mean_of(violations);
  m.std = sample_std(violations, m.mean);
  m.q25 = quantile(violations, 0.25);
  m.median = quantile(violations, 0.5);
  const auto feasible = std::count_if(violations.begin(), violations.end(), [&](double v) { return v <= feas_tol; });
  m.feasible_ratio = static_cast<double>(feasible) / static_cast<double>(m.n);
  return m;
}

double sample_violation(const DecisionVector& x, const ProblemParams& params) {
  if (x.normalized) return clipped_violation(x.values, params);
  return violation(x, params).total;
}

SampleMetrics sample_metrics(const std::vector<DecisionVector>& samples,
                             const std::vector<ProblemParams>& params_per_sample, double feas_tol,
                             std::vector<double>* violations) {
  if (samples.empty()) throw ConfigError("sample metrics need at least one sample");
  if (samples.size() != params_per_sample.size()) throw ShapeError("one params entry per sample required");
  std::vector<double> v(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) v[i] = sample_violation(samples[i], params_per_sample[i]);
  const SampleMetrics m = metrics_from_violations(v, feas_tol);
  if (violations != nullptr) *violations = std::move(v);
  return m;
}

WarmStartMetrics warm_start_benchmark(const std::vector<DecisionVector>& initial_guesses,
                                      const std::vector<ProblemParams>& params_per_guess, const SolveConfig& cfg,
                                      int workers) {
  if (initial_guesses.size() != params_per_guess.size()) throw ShapeError("one params entry per guess required");
  cfg.validate();
  const std::size_t n = initial_guesses.size();
  std::vector<SolveResult> results(n);
  std::vector<char> clamped(n, 0);
  parallel_for(n, workers, [&](std::size_t i) {
    const DecisionVector& g = initial_guesses[i];
    DecisionVector phys;
    if (g.normalized) {
      clamped[i] = (g.values.array().abs() > 1.0).any();
      phys = denormalize(DecisionVector{g.kind, g.values.cwiseMax(-1.0).cwiseMin(1.0), true});
    } else {
      const DecisionBox& box = decision_box(g.kind);
      phys = DecisionVector{g.kind, g.values.cwiseMax(box.lower).cwiseMin(box.upper), false};
      clamped[i] = (phys.values.array() != g.values.array()).any();
    }
    results[i] = solve_local(phys, params_per_guess[i], cfg);
  });

  WarmStartMetrics m;
  std::vector<double> times;
  std::vector<double> iters;
  std::vector<double> outer;
  for (std::size_t i = 0; i < n; ++i) {
    const SolveResult& r = results[i];
    m.iterations.push_back(r.inner_iters_total);
    m.outer_iterations.push_back(r.outer_iters);
    m.converged.push_back(r.converged);
    m.n_clamped += clamped[i] != 0;
    if (!r.converged) {
      ++m.n_failed;
      continue;
    }
    times.push_back(r.wall_time);
    iters.push_back(r.inner_iters_total);
    outer.push_back(r.outer_iters);
  }
  if (m.n_clamped > 0) std::cerr << "warm-start: clamped " << m.n_clamped << " guesses into the decision box\n";
  m.n = static_cast<int>(times.size());
  if (m.n > 0) {
    m.mean_time = mean_of(times);
    m.std_time = sample_std(times, m.mean_time);
    m.q25_time = quantile(times, 0.25);
    m.median_time = quantile(times, 0.5);
    m.mean_iters = mean_of(iters);
    m.median_iters = quantile(iters, 0.5);
    m.median_outer_iters = quantile(outer, 0.5);
  }
  return m;
}

std::vector<ProblemParams> held_out_instances(ProblemKind kind, int n, std::uint64_t seed) {
  if (n < 0) throw ConfigError("instance count must be nonnegative");
  std::vector<ProblemParams> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.push_back(sample_problem_params(derive_seed(seed, streams::kEvalInstances, static_cast<std::uint64_t>(i)), kind));
  }
  return out;
}

std::vector<DecisionVector> uniform_candidates(const std::vector<ProblemParams>& instances, int per_instance,
                                               std::uint64_t seed) {
  if (per_instance < 0) throw ConfigError("per-instance count must be nonnegative");
  std::vector<DecisionVector> out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    for (int j = 0; j < per_instance; ++j) {
      Rng rng(derive_seed(seed, streams::kInitialGuess, i * static_cast<std::size_t>(per_instance) + j));
      out.push_back(uniform_decision(instances[i].kind, rng));
    }
  }
  return out;
}

std::vector<DecisionVector> diffusion_candidates(const NoisePredictor& model,
                                                 const std::vector<ProblemParams>& instances, int per_instance,
                                                 const GuidanceConfig& guidance, const NoiseSchedule& sched,
                                                 std::uint64_t seed, int workers) {
  if (per_instance < 0) throw ConfigError("per-instance count must be nonnegative");
  std::vector<std::vector<DecisionVector>> per(instances.size());
  parallel_for(instances.size(), workers, [&](std::size_t i) {
    per[i] = sample(model, instances[i], guidance, sched, per_instance, derive_seed(seed, streams::kSampleChain, i));
  });
  std::vector<DecisionVector> out;
  for (auto& p : per) std::move(p.begin(), p.end(), std::back_inserter(out));
  return out;
}

// ---------------------------------------------------------------------------
// Report

namespace {

json to_json(const SampleMetrics& m) {
  return {{"mean", m.mean}, {"std", m.std}, {"q25", m.q25}, {"median", m.median},
          {"feasible_ratio", m.feasible_ratio}, {"n", m.n}};
}

SampleMetrics sample_metrics_from_json(const json& j) {
  SampleMetrics m;
  m.mean = j.at("mean").get<double>();
  m.std = j.at("std").get<double>();
  m.q25 = j.at("q25").get<double>();
  m.median = j.at("median").get<double>();
  m.feasible_ratio = j.at("feasible_ratio").get<double>();
  m.n = j.at("n").get<int>();
  return m;
}

json to_json(const WarmStartMetrics& m) {
  return {{"mean_time", m.mean_time},
          {"std_time", m.std_time},
          {"q25_time", m.q25_time},
          {"median_time", m.median_time},
          {"mean_iters", m.mean_iters},
          {"median_iters", m.median_iters},
          {"median_outer_iters", m.median_outer_iters},
          {"n", m.n},
          {"n_failed", m.n_failed},
          {"n_clamped", m.n_clamped},
          {"iterations", m.iterations},
          {"outer_iterations", m.outer_iterations},
          {"converged", m.converged}};
}

WarmStartMetrics warm_start_from_json(const json& j) {
  WarmStartMetrics m;
  m.mean_time = j.at("mean_time").get<double>();
  m.std_time = j.at("std_time").get<double>();
  m.q25_time = j.at("q25_time").get<double>();
  m.median_time = j.at("median_time").get<double>();
  m.mean_iters = j.at("mean_iters").get<double>();
  m.median_iters = j.at("median_iters").get<double>();
  m.median_outer_iters = j.at("median_outer_iters").get<double>();
  m.n = j.at("n").get<int>();
  m.n_failed = j.at("n_failed").get<int>();
  m.n_clamped = j.at("n_clamped").get<int>();
  m.iterations = j.at("iterations").get<std::vector<int>>();
  m.outer_iterations = j.at("outer_iterations").get<std::vector<int>>();
  m.converged = j.at("converged").get<std::vector<bool>>();
  return m;
}

}  // namespace

void emit_report(const Report& report, const std::filesystem::path& json_path, const std::filesystem::path& csv_path) {
  json methods = json::array();
  for (const auto& m : report.methods) {
    if (m.violations.size() != m.instance.size()) throw ShapeError("report violations and instance ids differ in length");
    json jm = {{"method", m.method},
               {"seed", m.seed},
               {"sample_metrics", to_json(m.samples)},
               {"violations", m.violations},
               {"instance", m.instance}};
    if (m.warm_start) jm["warm_start"] = to_json(*m.warm_start);
    methods.push_back(std::move(jm));
  }
  const json root = {{"problem", report.problem},
                     {"config_hash", report.config_hash},
                     {"gt_table", report.gt_table},
                     {"feas_tol", report.feas_tol},
                     {"methods", methods}};
  {
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw IoError("cannot write report '" + json_path.string() + "'");
    out << root.dump(2) << '\n';
    if (!out) throw IoError("failed writing report '" + json_path.string() + "'");
  }
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw IoError("cannot write violations CSV '" + csv_path.string() + "'");
  csv << "method,seed,instance,sample,violation\n" << std::setprecision(17);
  for (const auto& m : report.methods) {
    std::map<int, int> next_sample;
    for (std::size_t i = 0; i < m.violations.size(); ++i) {
      csv << m.method << ',' << m.seed << ',' << m.instance[i] << ',' << next_sample[m.instance[i]]++ << ','
          << m.violations[i] << '\n';
    }
  }
  if (!csv) throw IoError("failed writing violations CSV '" + csv_path.string() + "'");
}

Report load_report(const std::filesystem::path& json_path) {
  std::ifstream in(json_path, std::ios::binary);
  if (!in) throw IoError("cannot read report '" + json_path.string() + "'");
  json root;
  try {
    root = json::parse(in);
    Report r;
    r.problem = root.at("problem").get<std::string>();
    r.config_hash = root.at("config_hash").get<std::string>();
    r.gt_table = root.at("gt_table").get<std::string>();
    r.feas_tol = root.at("feas_tol").get<double>();
    for (const auto& jm : root.at("methods")) {
      MethodReport m;
      m.method = jm.at("method").get<std::string>();
      m.seed = jm.at("seed").get<std::uint64_t>();
      m.samples = sample_metrics_from_json(jm.at("sample_metrics"));
      m.violations = jm.at("violations").get<std::vector<double>>();
      m.instance = jm.at("instance").get<std::vector<int>>();
      if (jm.contains("warm_start")) m.warm_start = warm_start_from_json(jm.at("warm_start"));
      r.methods.push_back(std::move(m));
    }
    return r;
  } catch (const json::exception& e) {
    throw IncompatibleFileError("malformed report '" + json_path.string() + "': " + e.what());
  }
}

}  // namespace cadiff
