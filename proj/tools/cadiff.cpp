// cadiff: data generation, ground-truth analysis, training, sampling and
// evaluation from the command line. Run `cadiff <subcommand> --help`.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cadiff/constraint_align.hpp"
#include "cadiff/denoiser.hpp"
#include "cadiff/diffusion.hpp"
#include "cadiff/errors.hpp"
#include "cadiff/evaluation.hpp"
#include "cadiff/nlp_solver.hpp"
#include "cadiff/parallel.hpp"
#include "cadiff/persistence.hpp"
#include "cadiff/problems.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cadiff;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Profile-dependent defaults; any of them can be overridden by a flag. The
// desk schedule scales beta by 500 / K so that alpha_bar_K matches the
// 500-step schedule (about 0.007) instead of stopping at 0.37.
struct Profile {
  int K;
  double beta_start;
  double beta_end;
  int instances;
  int solves;
  int epochs;
};

Profile profile_defaults(ArchitectureProfile p) {
  if (p == ArchitectureProfile::Paper) return {500, 1e-4, 0.02, 2000, 120, 200};
  return {100, 5e-4, 0.1, 200, 50, 50};
}

int default_workers() {
  if (const char* env = std::getenv("CADIFF_WORKERS")) {
    try {
      const int w = std::stoi(env);
      if (w > 0) return w;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("CADIFF_WORKERS must be a positive integer, got '") + env + "'");
  }
  return resolve_workers(0);
}

struct Common {
  std::string problem = "tabletop";
  std::string profile = "desk";
  std::uint64_t seed = 0;
  int workers = 0;
  int steps = 0;  // diffusion steps K; 0 = profile default
  double beta_start = 0.0;
  double beta_end = 0.0;

  ProblemKind kind() const { return problem_kind_from_string(problem); }
  ArchitectureProfile arch_profile() const { return architecture_profile_from_string(profile); }
  Profile defaults() const { return profile_defaults(arch_profile()); }
  NoiseSchedule schedule() const {
    const Profile d = defaults();
    return make_schedule(steps > 0 ? steps : d.K, beta_start > 0.0 ? beta_start : d.beta_start,
                         beta_end > 0.0 ? beta_end : d.beta_end);
  }
  int resolved_workers() const { return workers > 0 ? workers : default_workers(); }
};

void add_common(CLI::App* app, Common& c, bool with_problem = true) {
  if (with_problem) {
    app->add_option("--problem", c.problem, "tabletop or twocar")->capture_default_str();
  }
  app->add_option("--profile", c.profile, "desk or paper")->capture_default_str();
  app->add_option("--seed", c.seed, "Master seed")->capture_default_str();
  app->add_option("--workers", c.workers, "Worker threads (default: $CADIFF_WORKERS or all cores)");
  app->add_option("--steps", c.steps, "Diffusion steps K (default from profile)");
  app->add_option("--beta-start", c.beta_start, "First beta of the linear schedule (default from profile)");
  app->add_option("--beta-end", c.beta_end, "Last beta of the linear schedule (default from profile)");
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " is required");
  if (!fs::is_regular_file(path)) throw ConfigError(std::string(what) + " '" + path + "' does not exist");
}

fs::path metadata_path(const fs::path& out) { return fs::path(out.string() + ".meta.json"); }

// Metadata beside every output: resolved options (as a config file that
// reproduces the run), seed and input hashes.
void write_metadata(const CLI::App* sub, const fs::path& out, std::uint64_t seed,
                    const std::vector<std::string>& inputs, const json& extra = json::object()) {
  json in = json::object();
  for (const auto& p : inputs) in[p] = sha256_file(p);
  json meta = {{"tool", "cadiff"},
               {"version", "0.1.0"},
               {"command", sub->get_name()},
               {"config", sub->config_to_str(true, false)},
               {"seed", seed},
               {"inputs", in}};
  if (!extra.empty()) meta["results"] = extra;
  std::ofstream f(metadata_path(out), std::ios::binary);
  f << meta.dump(2) << '\n';
  if (!f) throw IoError("cannot write metadata for '" + out.string() + "'");
}

std::string config_hash(const CLI::App* sub) { return sha256_hex(sub->config_to_str(true, false)); }

// ---------------------------------------------------------------------------

struct GenDataOpts {
  Common c;
  std::string out;
  int instances = 0;
  int solves = 0;
  double threshold = std::numeric_limits<double>::quiet_NaN();
  SolveConfig solve;
};

void run_gen_data(const CLI::App* sub, GenDataOpts& o) {
  DatasetConfig cfg;
  cfg.kind = o.c.kind();
  cfg.n_instances = o.instances > 0 ? o.instances : o.c.defaults().instances;
  cfg.solves_per_instance = o.solves > 0 ? o.solves : o.c.defaults().solves;
  cfg.solve = o.solve;
  cfg.seed = o.c.seed;
  cfg.objective_threshold = o.threshold;
  cfg.workers = o.c.resolved_workers();
  const auto records = generate_dataset(cfg);
  save_dataset(records, o.out);
  write_metadata(sub, o.out, o.c.seed, {},
                 {{"records", records.size()}, {"instances", cfg.n_instances}, {"solves", cfg.solves_per_instance}});
  std::cerr << "[gen-data] wrote " << records.size() << " records to " << o.out << "\n";
}

struct AnalyzeOpts {
  Common c;
  std::string data;
  std::string out;
  int noise = 100;
  int records = 128;
  double epsilon_floor = 1e-3;
};

void run_analyze_gt(const CLI::App* sub, AnalyzeOpts& o) {
  require_file(o.data, "--data");
  const auto dataset = load_dataset(o.data);
  if (dataset.empty()) throw ConfigError("dataset '" + o.data + "' is empty");
  const NoiseSchedule sched = o.c.schedule();
  const GtViolationTable t = compute_gt_violation_table(dataset, sched, o.noise, o.records, o.c.seed,
                                                        o.c.resolved_workers(), o.epsilon_floor);
  save_gt_table(t, o.out);
  std::vector<double> ks(static_cast<std::size_t>(t.K + 1));
  std::vector<double> means(ks.size());
  for (int k = 0; k <= t.K; ++k) {
    ks[static_cast<std::size_t>(k)] = k;
    means[static_cast<std::size_t>(k)] = t.mean[k];
  }
  const double rho = spearman(ks, means);
  write_metadata(sub, o.out, o.c.seed, {o.data},
                 {{"mean_0", t.mean[0]}, {"mean_K", t.mean[t.K]}, {"spearman_k_mean", rho}});
  std::cerr << "[analyze-gt] mean[0]=" << t.mean[0] << " mean[K]=" << t.mean[t.K] << " spearman=" << rho << "\n";
}

struct TrainOpts {
  Common c;
  std::string data;
  std::string gt_table;
  std::string out;
  std::string mode = "vanilla";
  std::optional<double> lambda;
  int epochs = 0;
  TrainConfig train;
  std::string gt_weighting = "per-step";
};

void run_train(const CLI::App* sub, TrainOpts& o) {
  require_file(o.data, "--data");
  TrainConfig cfg = o.train;
  cfg.mode = train_mode_from_string(o.mode);
  cfg.seed = o.c.seed;
  cfg.epochs = o.epochs > 0 ? o.epochs : o.c.defaults().epochs;
  cfg.architecture = DenoiserArchitecture::for_profile(o.c.arch_profile());
  if (o.gt_weighting == "per-step") {
    cfg.gt_weighting = GtWeighting::PerStep;
  } else if (o.gt_weighting == "per-sample") {
    cfg.gt_weighting = GtWeighting::PerSample;
  } else {
    throw ConfigError("--gt-weighting must be per-step or per-sample");
  }
  cfg.lambda = o.lambda.value_or(cfg.mode == TrainMode::Constrained ? 0.1 : 0.0);
  if (cfg.mode == TrainMode::Constrained && o.gt_table.empty()) {
    throw ConfigError("--mode constrained requires --gt-table");
  }
  cfg.validate();

  const auto records = load_dataset(o.data);
  const TrainingSet data = TrainingSet::from_records(records);
  if (data.kind != o.c.kind()) {
    throw ConfigError("dataset holds " + std::string(to_string(data.kind)) + " records but --problem is " + o.c.problem);
  }
  const NoiseSchedule sched = o.c.schedule();
  std::vector<std::string> inputs{o.data};
  std::optional<TrainResult> result;
  if (cfg.mode == TrainMode::Constrained) {
    require_file(o.gt_table, "--gt-table");
    const GtViolationTable table = load_gt_table(o.gt_table);
    check_table(table, data.kind, sched);
    inputs.push_back(o.gt_table);
    result.emplace(train_constrained(data, cfg, sched, table));
  } else {
    result.emplace(train_vanilla(data, cfg, sched));
  }
  save_checkpoint(o.out, result->model, sched, cfg.seed, cfg.mode, cfg.lambda);

  const fs::path log_path = o.out + ".log.csv";
  std::ofstream log(log_path, std::ios::binary);
  log << "epoch,loss,diffusion,violation\n" << std::setprecision(17);
  for (const auto& e : result->log) log << e.epoch << ',' << e.loss << ',' << e.diffusion << ',' << e.violation << '\n';
  if (!log) throw IoError("cannot write '" + log_path.string() + "'");
  const auto& last = result->log.back();
  write_metadata(sub, o.out, o.c.seed, inputs,
                 {{"records", data.size()}, {"final_loss", last.loss}, {"final_diffusion", last.diffusion},
                  {"final_violation", last.violation}, {"parameters", result->model.parameter_count()}});
  std::cerr << "[train] " << o.mode << " final loss " << last.loss << " (diffusion " << last.diffusion
            << ", violation " << last.violation << ")\n";
}

Checkpoint load_checked(const std::string& path, ProblemKind kind) {
  require_file(path, "--checkpoint");
  Checkpoint ck = load_checkpoint(path);
  if (ck.header.kind != kind) {
    throw ConfigError("checkpoint '" + path + "' was trained for " + std::string(to_string(ck.header.kind)) +
                      ", not " + std::string(to_string(kind)));
  }
  return ck;
}

struct SampleOpts {
  Common c;
  std::string checkpoint;
  std::string out;
  int instances = 8;
  int per_instance = 8;
  std::uint64_t eval_seed = 1000;
  double omega = 1.0;
};

void run_sample(const CLI::App* sub, SampleOpts& o) {
  const Checkpoint ck = load_checked(o.checkpoint, o.c.kind());
  GuidanceConfig g;
  g.omega = o.omega;
  const auto instances = held_out_instances(o.c.kind(), o.instances, o.eval_seed);
  const auto xs = diffusion_candidates(ck.model, instances, o.per_instance, g, ck.schedule, o.c.seed,
                                       o.c.resolved_workers());
  std::vector<SampleRecord> out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t inst = i / static_cast<std::size_t>(o.per_instance);
    out.push_back({static_cast<int>(inst), static_cast<int>(i % static_cast<std::size_t>(o.per_instance)),
                   instances[inst], xs[i], sample_violation(xs[i], instances[inst])});
  }
  save_samples(out, o.out);
  write_metadata(sub, o.out, o.c.seed, {o.checkpoint});
  std::cerr << "[sample] wrote " << out.size() << " samples to " << o.out << "\n";
}

struct EvalOpts {
  Common c;
  std::vector<std::string> checkpoints;
  std::string gt_table;
  std::string out;
  int instances = 64;
  int per_instance = 8;
  std::uint64_t eval_seed = 1000;
  double omega = 1.0;
  double feas_tol = 1e-4;
  bool warm = false;
  SolveConfig solve;
};

std::string method_name(const Checkpoint& ck) { return std::string(to_string(ck.header.mode)); }

std::vector<int> instance_ids(int instances, int per_instance) {
  std::vector<int> ids;
  for (int i = 0; i < instances; ++i) ids.insert(ids.end(), static_cast<std::size_t>(per_instance), i);
  return ids;
}

void run_eval(const CLI::App* sub, EvalOpts& o, bool warm_start) {
  const ProblemKind kind = o.c.kind();
  const int workers = o.c.resolved_workers();
  const auto instances = held_out_instances(kind, o.instances, o.eval_seed);
  std::vector<ProblemParams> per_sample;
  for (const auto& p : instances) per_sample.insert(per_sample.end(), static_cast<std::size_t>(o.per_instance), p);
  GuidanceConfig g;
  g.omega = o.omega;

  Report report;
  report.problem = std::string(to_string(kind));
  report.config_hash = config_hash(sub);
  report.feas_tol = o.feas_tol;
  std::vector<std::string> inputs;
  if (!o.gt_table.empty()) {
    require_file(o.gt_table, "--gt-table");
    report.gt_table = sha256_file(o.gt_table);
    inputs.push_back(o.gt_table);
  }

  const auto add_method = [&](std::string name, std::uint64_t seed, const std::vector<DecisionVector>& xs) {
    MethodReport m;
    m.method = std::move(name);
    m.seed = seed;
    m.samples = sample_metrics(xs, per_sample, o.feas_tol, &m.violations);
    m.instance = instance_ids(o.instances, o.per_instance);
    if (warm_start) m.warm_start = warm_start_benchmark(xs, per_sample, o.solve, workers);
    std::cerr << "[" << sub->get_name() << "] " << m.method << " seed " << m.seed << ": mean " << m.samples.mean
              << " q25 " << m.samples.q25 << " feasible " << m.samples.feasible_ratio;
    if (m.warm_start) {
      std::cerr << " median iters " << m.warm_start->median_iters << " converged " << m.warm_start->n << "/"
                << xs.size();
    }
    std::cerr << "\n";
    report.methods.push_back(std::move(m));
  };

  add_method("uniform", o.c.seed, uniform_candidates(instances, o.per_instance, o.c.seed));
  for (const auto& path : o.checkpoints) {
    const Checkpoint ck = load_checked(path, kind);
    inputs.push_back(path);
    add_method(method_name(ck), ck.header.seed,
               diffusion_candidates(ck.model, instances, o.per_instance, g, ck.schedule, o.c.seed, workers));
  }
  emit_report(report, o.out, o.out + ".violations.csv");
  write_metadata(sub, o.out, o.c.seed, inputs);
}

struct ReportOpts {
  std::vector<std::string> reports;
  std::string gt_table;
  std::string out_dir;
  int bins = 40;
};

void run_report(const CLI::App* sub, ReportOpts& o) {
  if (o.reports.empty() && o.gt_table.empty()) throw ConfigError("report needs --report and/or --gt-table");
  fs::create_directories(o.out_dir);
  const fs::path dir(o.out_dir);
  std::vector<std::string> inputs;

  if (!o.gt_table.empty()) {
    require_file(o.gt_table, "--gt-table");
    inputs.push_back(o.gt_table);
    const GtViolationTable t = load_gt_table(o.gt_table);
    std::ofstream f(dir / "gt_curve.csv", std::ios::binary);
    f << "k,mean,ci95_lo,ci95_hi,denominator\n" << std::setprecision(17);
    for (int k = 0; k <= t.K; ++k) {
      f << k << ',' << t.mean[k] << ',' << t.ci95_lo[k] << ',' << t.ci95_hi[k] << ',' << t.denominator(k) << '\n';
    }
    if (!f) throw IoError("cannot write gt_curve.csv");
  }

  if (!o.reports.empty()) {
    if (o.bins < 1) throw ConfigError("--bins must be positive");
    std::ofstream summary(dir / "summary.csv", std::ios::binary);
    summary << "report,method,seed,n,mean,std,q25,median,feasible_ratio,ws_n,ws_failed,ws_median_iters,"
               "ws_mean_iters,ws_median_time\n"
            << std::setprecision(17);
    std::ofstream hist(dir / "histogram.csv", std::ios::binary);
    hist << "report,method,seed,bin_lo,bin_hi,count\n" << std::setprecision(17);
    for (const auto& path : o.reports) {
      require_file(path, "--report");
      inputs.push_back(path);
      const Report r = load_report(path);
      double hi = 0.0;
      for (const auto& m : r.methods) {
        for (double v : m.violations) hi = std::max(hi, v);
      }
      const double width = hi > 0.0 ? hi / o.bins : 1.0;
      for (const auto& m : r.methods) {
        summary << path << ',' << m.method << ',' << m.seed << ',' << m.samples.n << ',' << m.samples.mean << ','
                << m.samples.std << ',' << m.samples.q25 << ',' << m.samples.median << ','
                << m.samples.feasible_ratio;
        if (m.warm_start) {
          summary << ',' << m.warm_start->n << ',' << m.warm_start->n_failed << ',' << m.warm_start->median_iters
                  << ',' << m.warm_start->mean_iters << ',' << m.warm_start->median_time;
        } else {
          summary << ",,,,,";
        }
        summary << '\n';
        std::vector<int> counts(static_cast<std::size_t>(o.bins), 0);
        for (double v : m.violations) {
          const int b = std::min(o.bins - 1, static_cast<int>(v / width));
          ++counts[static_cast<std::size_t>(b)];
        }
        for (int b = 0; b < o.bins; ++b) {
          hist << path << ',' << m.method << ',' << m.seed << ',' << b * width << ',' << (b + 1) * width << ','
               << counts[static_cast<std::size_t>(b)] << '\n';
        }
      }
    }
    if (!summary || !hist) throw IoError("cannot write report CSVs in '" + o.out_dir + "'");
  }
  write_metadata(sub, dir / "report", 0, inputs);
}

void add_solve_options(CLI::App* app, SolveConfig& s) {
  app->add_option("--max-outer", s.max_outer_iters, "Solver outer iterations")->capture_default_str();
  app->add_option("--max-inner", s.max_inner_iters, "Solver inner iterations per outer")->capture_default_str();
  app->add_option("--feas-tol", s.feas_tol, "Solver feasibility tolerance")->capture_default_str();
  app->add_option("--opt-tol", s.opt_tol, "Solver optimality tolerance")->capture_default_str();
}

void print_error(const char* category, const std::string& message) {
  std::cerr << json{{"error", category}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constraint-aligned diffusion for trajectory optimization"};
  app.set_config("--config", "", "Key-value config file; command-line flags take precedence");
  app.require_subcommand(1);

  GenDataOpts gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Solve random instances and write a dataset");
  add_common(gen_cmd, gen.c);
  gen_cmd->add_option("--out", gen.out, "Dataset path (JSON lines)")->required();
  gen_cmd->add_option("--instances", gen.instances, "Problem instances (default from profile)");
  gen_cmd->add_option("--solves", gen.solves, "Random-start solves per instance (default from profile)");
  gen_cmd->add_option("--objective-threshold", gen.threshold, "Keep solutions with objective <= threshold");
  add_solve_options(gen_cmd, gen.solve);

  AnalyzeOpts an;
  auto* an_cmd = app.add_subcommand("analyze-gt", "Per-step violation statistics of corrupted data");
  add_common(an_cmd, an.c, false);
  an_cmd->add_option("--data", an.data, "Dataset path")->required()->check(CLI::ExistingFile);
  an_cmd->add_option("--out", an.out, "GT table CSV path")->required();
  an_cmd->add_option("--noise", an.noise, "Corruptions per record and step (N)")->capture_default_str();
  an_cmd->add_option("--records", an.records, "Records drawn from the dataset (M)")->capture_default_str();
  an_cmd->add_option("--epsilon-floor", an.epsilon_floor, "Denominator floor")->capture_default_str();

  TrainOpts tr;
  auto* tr_cmd = app.add_subcommand("train", "Train a vanilla or constrained denoiser");
  add_common(tr_cmd, tr.c);
  tr_cmd->add_option("--data", tr.data, "Dataset path")->required()->check(CLI::ExistingFile);
  tr_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  tr_cmd->add_option("--mode", tr.mode, "vanilla or constrained")->capture_default_str();
  tr_cmd->add_option("--gt-table", tr.gt_table, "GT table CSV (constrained mode)")->check(CLI::ExistingFile);
  tr_cmd->add_option("--lambda", tr.lambda, "Violation weight (default 0.1 when constrained)");
  tr_cmd->add_option("--epochs", tr.epochs, "Epochs (default from profile)");
  tr_cmd->add_option("--batch-size", tr.train.batch_size, "Mini-batch size")->capture_default_str();
  tr_cmd->add_option("--lr", tr.train.learning_rate, "Adam learning rate")->capture_default_str();
  tr_cmd->add_option("--p-uncond", tr.train.p_uncond, "Condition drop probability")->capture_default_str();
  tr_cmd->add_option("--gt-weighting", tr.gt_weighting, "per-step or per-sample")->capture_default_str();
  tr_cmd->add_option("--per-sample-draws", tr.train.per_sample_draws, "Draws for per-sample weighting")
      ->capture_default_str();

  SampleOpts sa;
  auto* sa_cmd = app.add_subcommand("sample", "Draw guided samples for held-out instances");
  add_common(sa_cmd, sa.c);
  sa_cmd->add_option("--checkpoint", sa.checkpoint, "Checkpoint path")->required()->check(CLI::ExistingFile);
  sa_cmd->add_option("--out", sa.out, "Samples path (JSON lines)")->required();
  sa_cmd->add_option("--instances", sa.instances, "Held-out instances")->capture_default_str();
  sa_cmd->add_option("--per-instance", sa.per_instance, "Samples per instance")->capture_default_str();
  sa_cmd->add_option("--eval-seed", sa.eval_seed, "Seed of the held-out instances")->capture_default_str();
  sa_cmd->add_option("--omega", sa.omega, "Guidance weight")->capture_default_str();

  EvalOpts ev;
  auto* ev_cmd = app.add_subcommand("eval", "Violation statistics of samples vs the uniform baseline");
  add_common(ev_cmd, ev.c);
  ev_cmd->add_option("--checkpoint", ev.checkpoints, "Checkpoint path (repeatable)")->check(CLI::ExistingFile);
  ev_cmd->add_option("--gt-table", ev.gt_table, "GT table referenced by the report")->check(CLI::ExistingFile);
  ev_cmd->add_option("--out", ev.out, "Report JSON path")->required();
  ev_cmd->add_option("--instances", ev.instances, "Held-out instances")->capture_default_str();
  ev_cmd->add_option("--per-instance", ev.per_instance, "Samples per instance")->capture_default_str();
  ev_cmd->add_option("--eval-seed", ev.eval_seed, "Seed of the held-out instances")->capture_default_str();
  ev_cmd->add_option("--omega", ev.omega, "Guidance weight")->capture_default_str();
  ev_cmd->add_option("--sample-feas-tol", ev.feas_tol, "Feasibility tolerance for samples")->capture_default_str();

  EvalOpts ws;
  ws.instances = 20;
  ws.per_instance = 1;
  auto* ws_cmd = app.add_subcommand("warm-start", "Solver iterations from sampled vs uniform initial guesses");
  add_common(ws_cmd, ws.c);
  ws_cmd->add_option("--checkpoint", ws.checkpoints, "Checkpoint path (repeatable)")->check(CLI::ExistingFile);
  ws_cmd->add_option("--out", ws.out, "Report JSON path")->required();
  ws_cmd->add_option("--instances", ws.instances, "Held-out instances")->capture_default_str();
  ws_cmd->add_option("--per-instance", ws.per_instance, "Guesses per instance")->capture_default_str();
  ws_cmd->add_option("--eval-seed", ws.eval_seed, "Seed of the held-out instances")->capture_default_str();
  ws_cmd->add_option("--omega", ws.omega, "Guidance weight")->capture_default_str();
  add_solve_options(ws_cmd, ws.solve);

  ReportOpts rp;
  auto* rp_cmd = app.add_subcommand("report", "Write plot-ready CSVs from reports and a GT table");
  rp_cmd->add_option("--report", rp.reports, "Report JSON (repeatable)")->check(CLI::ExistingFile);
  rp_cmd->add_option("--gt-table", rp.gt_table, "GT table CSV")->check(CLI::ExistingFile);
  rp_cmd->add_option("--out-dir", rp.out_dir, "Output directory")->required();
  rp_cmd->add_option("--bins", rp.bins, "Histogram bins")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) run_gen_data(gen_cmd, gen);
    if (an_cmd->parsed()) run_analyze_gt(an_cmd, an);
    if (tr_cmd->parsed()) run_train(tr_cmd, tr);
    if (sa_cmd->parsed()) run_sample(sa_cmd, sa);
    if (ev_cmd->parsed()) run_eval(ev_cmd, ev, false);
    if (ws_cmd->parsed()) run_eval(ws_cmd, ws, true);
    if (rp_cmd->parsed()) run_report(rp_cmd, rp);
  } catch (const ConfigError& e) {
    print_error("config", e.what());
    return kExitUsage;
  } catch (const IncompatibleFileError& e) {
    print_error("incompatible-file", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return kExitRuntime;
  }
  return 0;
}
