// Acceptance runner. Prints one PASS/FAIL line per criterion; exit status 1 if any fail.
// Expensive artifacts (datasets, GT tables, checkpoints) are cached in --work-dir.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cadiff/constraint_align.hpp"
#include "cadiff/denoiser.hpp"
#include "cadiff/diffusion.hpp"
#include "cadiff/evaluation.hpp"
#include "cadiff/nlp_solver.hpp"
#include "cadiff/parallel.hpp"
#include "cadiff/persistence.hpp"
#include "cadiff/problems.hpp"

namespace fs = std::filesystem;
using namespace cadiff;

namespace {

struct Options {
  fs::path work_dir = "acceptance_work";
  std::string cli;
  int workers = 0;
  std::set<int> only;
  std::uint64_t data_seed = 1;
  int epochs = 200;
  double lr = 1e-3;
  int train_seeds = 2;
  int eval_instances = 64;
  int per_instance = 8;
  int warm_instances = 20;
};

constexpr ProblemKind kKinds[] = {ProblemKind::Tabletop, ProblemKind::TwoCar};
const NoiseSchedule& desk_schedule() {
  static const NoiseSchedule s = make_schedule(100, 5e-4, 0.1);
  return s;
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [x]");
  }
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

double median_of(const std::vector<int>& v) {
  return quantile(std::vector<double>(v.begin(), v.end()), 0.5);
}

// ---------------------------------------------------------------------------
// Cached artifacts

class Artifacts {
 public:
  explicit Artifacts(const Options& o) : o_(o) { fs::create_directories(o.work_dir); }

  const std::vector<DatasetRecord>& dataset(ProblemKind kind) {
    auto it = data_.find(kind);
    if (it != data_.end()) return it->second;
    const fs::path p = o_.work_dir / (std::string(to_string(kind)) + ".jsonl");
    std::vector<DatasetRecord> recs;
    if (fs::exists(p)) {
      recs = load_dataset(p);
    } else {
      DatasetConfig cfg;
      cfg.kind = kind;
      cfg.n_instances = kind == ProblemKind::Tabletop ? 200 : 150;
      cfg.solves_per_instance = kind == ProblemKind::Tabletop ? 50 : 40;
      cfg.seed = o_.data_seed;
      cfg.workers = o_.workers;
      log("generating " + p.string());
      recs = generate_dataset(cfg);
      save_dataset(recs, p);
    }
    return data_.emplace(kind, std::move(recs)).first->second;
  }

  const GtViolationTable& gt_table(ProblemKind kind) {
    auto it = gt_.find(kind);
    if (it != gt_.end()) return it->second;
    const fs::path p = o_.work_dir / ("gt_" + std::string(to_string(kind)) + ".csv");
    GtViolationTable t;
    bool cached = false;
    if (fs::exists(p)) {
      t = load_gt_table(p);
      cached = t.n_noise == 100 && t.m_data == 128 && t.K == desk_schedule().K;
    }
    if (!cached) {
      log("computing " + p.string());
      t = compute_gt_violation_table(dataset(kind), desk_schedule(), 100, 128, o_.data_seed, o_.workers);
      save_gt_table(t, p);
    }
    return gt_.emplace(kind, std::move(t)).first->second;
  }

  const Checkpoint& model(ProblemKind kind, TrainMode mode, std::uint64_t seed) {
    const std::string name = std::string(to_string(kind)) + "_" + std::string(to_string(mode)) + "_s" +
                             std::to_string(seed) + "_e" + std::to_string(o_.epochs) + ".ck";
    auto it = models_.find(name);
    if (it != models_.end()) return it->second;
    const fs::path p = o_.work_dir / name;
    if (!fs::exists(p)) {
      TrainConfig cfg;
      cfg.epochs = o_.epochs;
      cfg.learning_rate = o_.lr;
      cfg.seed = seed;
      cfg.mode = mode;
      cfg.lambda = mode == TrainMode::Constrained ? 0.1 : 0.0;
      const auto data = TrainingSet::from_records(dataset(kind));
      log("training " + name);
      const auto t0 = std::chrono::steady_clock::now();
      const TrainResult r = mode == TrainMode::Constrained
                                ? train_constrained(data, cfg, desk_schedule(), gt_table(kind))
                                : train_vanilla(data, cfg, desk_schedule());
      log("  final loss " + fmt(r.log.back().loss) + " in " +
          fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 5) + " s");
      save_checkpoint(p, r.model, desk_schedule(), seed, mode, cfg.lambda);
    }
    return models_.emplace(name, load_checkpoint(p)).first->second;
  }

  static void log(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

 private:
  const Options& o_;
  std::map<ProblemKind, std::vector<DatasetRecord>> data_;
  std::map<ProblemKind, GtViolationTable> gt_;
  std::map<std::string, Checkpoint> models_;
};

// ---------------------------------------------------------------------------

void schedule_and_forward(Outcome& out) {
  for (const auto& [K, b0, b1] : {std::tuple{100, 5e-4, 0.1}, std::tuple{500, 1e-4, 0.02}}) {
    const auto s = make_schedule(K, b0, b1);
    double worst = 0.0;
    long double prod = 1.0L;
    for (int k = 1; k <= K; ++k) {
      const long double beta = static_cast<long double>(b0) + (static_cast<long double>(b1) - b0) * (k - 1) / (K - 1);
      prod *= 1.0L - beta;
      worst = std::max(worst, static_cast<double>(std::abs((s.alpha_bar[k] - prod) / prod)));
    }
    out.check(worst < 1e-12, "K=" + std::to_string(K) + " alpha_bar rel err " + fmt(worst, 3));
  }

  const auto& s = desk_schedule();
  Rng rng(11);
  const int dim = 8;
  const Eigen::VectorXd x0 = Eigen::VectorXd::LinSpaced(dim, -1.0, 1.0);
  const int n = 100000;
  for (int k : {1, s.K / 4, s.K / 2, s.K}) {
    const double a = std::sqrt(s.alpha_bar[k]), sd = std::sqrt(1.0 - s.alpha_bar[k]);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim), sq = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd x = forward_sample(x0, k, standard_normal_vector(rng, dim), s);
      const Eigen::VectorXd r = x - a * x0;
      sum += r;
      sq += r.cwiseProduct(r);
    }
    double worst_mean = 0.0, worst_var = 0.0;
    for (int i = 0; i < dim; ++i) {
      // Mean: SE = sd / sqrt(n). Variance: SE = sd^2 sqrt(2 / n) for Gaussian data.
      const double m = sum[i] / n;
      const double v = sq[i] / n - m * m;
      worst_mean = std::max(worst_mean, std::abs(m) / (sd / std::sqrt(n)));
      worst_var = std::max(worst_var, std::abs(v - sd * sd) / (sd * sd * std::sqrt(2.0 / n)));
    }
    out.check(worst_mean < 4 && worst_var < 4,
              "k=" + std::to_string(k) + " |z| mean " + fmt(worst_mean, 3) + " var " + fmt(worst_var, 3));
  }
}

void reverse_identity(Outcome& out) {
  const auto& s = desk_schedule();
  Rng rng(12);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Eigen::VectorXd x0 = standard_normal_vector(rng, 161).cwiseMax(-1.0).cwiseMin(1.0);
    const Eigen::VectorXd eps = standard_normal_vector(rng, 161);
    const Eigen::VectorXd x1 = forward_sample(x0, 1, eps, s);
    const Eigen::VectorXd back = reverse_step(x1, 1, eps, Eigen::VectorXd::Zero(161), s);
    worst = std::max(worst, (back - x0).cwiseAbs().maxCoeff());
  }
  out.check(worst < 1e-6, "max |x0 - reverse| " + fmt(worst, 3));
}

using DoubleDenoiser = BasicDenoiser<double>;

TrainingBatch batch_from(const std::vector<DatasetRecord>& recs, int n, std::size_t stride) {
  TrainingBatch b;
  b.x0.resize(161, n);
  for (int j = 0; j < n; ++j) {
    const auto& r = recs[(static_cast<std::size_t>(j) * stride) % recs.size()];
    b.x0.col(j) = r.x_star.values;
    b.params.push_back(&r.params);
  }
  return b;
}

// Worst relative error of the analytic gradient over 20 random weights.
double probe_gradient(DoubleDenoiser& model, const std::vector<DoubleDenoiser::Matrix>& grads,
                      const std::function<double()>& loss, std::uint64_t seed) {
  Rng rng(seed);
  auto& params = model.parameters();
  const double h = 1e-4;
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t t = static_cast<std::size_t>(i) % params.size();
    std::uniform_int_distribution<Eigen::Index> pick(0, params[t].value.size() - 1);
    double& w = params[t].value.data()[pick(rng)];
    const double an = grads[t].data()[&w - params[t].value.data()];
    const double w0 = w;
    w = w0 + h;
    const double lp = loss();
    w = w0 - h;
    const double lm = loss();
    w = w0;
    const double fd = (lp - lm) / (2 * h);
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
  }
  return worst;
}

void gradient_oracles(Outcome& out, Artifacts& art) {
  Rng rng(21);
  const double h = 1e-5;
  for (auto kind : kKinds) {
    double worst = 0.0;
    int checked = 0;
    std::uint64_t tried = 0;
    while (checked < 100) {
      const auto p = sample_problem_params(500 + tried++, kind);
      auto x = uniform_decision(kind, rng);
      x.values[0] = std::clamp(x.values[0], 4.5, 19.5);
      const auto cv = evaluate_constraints(x, p);
      if (cv.inequality.cwiseAbs().minCoeff() < 1e-3 || cv.equality.cwiseAbs().minCoeff() < 1e-3) continue;
      const Eigen::VectorXd g = violation_gradient(x, p);
      Eigen::VectorXd fd(g.size());
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        auto xp = x, xm = x;
        xp.values[i] += h;
        xm.values[i] -= h;
        fd[i] = (violation(xp, p).total - violation(xm, p).total) / (2 * h);
      }
      worst = std::max(worst, (fd - g).norm() / std::max(g.norm(), 1e-8));
      ++checked;
    }
    out.check(worst < 1e-4, std::string(to_string(kind)) + " dV/dx rel err " + fmt(worst, 3));
  }

  const auto& s = desk_schedule();
  for (auto kind : kKinds) {
    DoubleDenoiser model(kind, {}, 7);
    Rng wr(8);
    for (auto& p : model.parameters()) {
      if (p.name.rfind("out.", 0) == 0) {
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = 0.05 * standard_normal(wr);
      }
    }
    const auto batch = batch_from(art.dataset(kind), 8, 97);
    Rng drng(9), arng(10);
    const auto draws = draw_hybrid_noise(8, 161, s, 0.25, drng, arng);

    auto g = model.zero_gradients();
    diffusion_loss(model, batch, draws.diffusion, s, &g);
    const double e_diff = probe_gradient(
        model, g, [&] { return diffusion_loss(model, batch, draws.diffusion, s, nullptr).value; }, 31);

    // Violation term with per-item weights.
    const Eigen::VectorXd coeffs = Eigen::VectorXd::LinSpaced(8, 0.125, 1.0);
    g = model.zero_gradients();
    violation_loss(model, batch, draws.diffusion.steps, draws.diffusion.eps, draws.z, s, coeffs, &g);
    const double e_vio = probe_gradient(
        model, g,
        [&] {
          return coeffs.dot(
              violation_loss(model, batch, draws.diffusion.steps, draws.diffusion.eps, draws.z, s, coeffs, nullptr)
                  .per_item);
        },
        32);
    out.check(e_diff < 1e-3 && e_vio < 1e-3, std::string(to_string(kind)) + " loss grads diffusion " +
                                                  fmt(e_diff, 3) + " violation " + fmt(e_vio, 3));
  }
}

void gt_curve(Outcome& out, Artifacts& art) {
  const auto& s = desk_schedule();
  for (auto kind : kKinds) {
    const auto& t = art.gt_table(kind);
    const auto& data = art.dataset(kind);
    std::vector<double> ks, means;
    for (int k = 0; k <= s.K; ++k) {
      ks.push_back(k);
      means.push_back(t.mean[k]);
    }
    const double rho = spearman(ks, means);
    Rng rng(derive_seed(77, static_cast<std::uint64_t>(kind), 0));
    const int n = 12800;
    std::vector<double> v;
    for (int i = 0; i < n; ++i) {
      const auto& r = data[static_cast<std::size_t>(rng() % data.size())];
      v.push_back(clipped_violation(standard_normal_vector(rng, 161), r.params));
    }
    const auto m = metrics_from_violations(v, 1e-4);
    const double se = std::sqrt(m.std * m.std / n + t.std[s.K] * t.std[s.K] / (t.n_noise * t.m_data));
    const double z = std::abs(t.mean[s.K] - m.mean) / se;
    const std::string name(to_string(kind));
    out.check(t.mean[0] <= 1e-4, name + " mean[0] " + fmt(t.mean[0], 3));
    out.check(rho >= 0.9, name + " spearman " + fmt(rho, 4));
    out.check(z <= 4, name + " mean[K] " + fmt(t.mean[s.K]) + " vs noise " + fmt(m.mean) + " (" + fmt(z, 3) + " SE)");
  }
}

void solver_pipeline(Outcome& out, Artifacts& art, int workers) {
  for (auto kind : kKinds) {
    const auto inst = held_out_instances(kind, 10, 5000);
    const auto guesses = uniform_candidates(inst, 10, 5000);
    std::vector<ProblemParams> per;
    for (const auto& p : inst) per.insert(per.end(), 10, p);
    std::vector<char> ok(guesses.size(), 0);
    parallel_for(guesses.size(), workers, [&](std::size_t i) {
      const auto r = solve_local(guesses[i], per[i], SolveConfig{});
      ok[i] = r.converged && violation(r.x_star, per[i]).total <= 1e-4;
    });
    const double rate = static_cast<double>(std::count(ok.begin(), ok.end(), 1)) / static_cast<double>(ok.size());
    out.check(rate >= 0.6, std::string(to_string(kind)) + " convergence " + fmt(rate, 3));

    const auto& data = art.dataset(kind);
    double worst = 0.0;
    for (const auto& r : data) worst = std::max(worst, violation(denormalize(r.x_star), r.params).total);
    out.check(worst <= 1e-4, std::string(to_string(kind)) + " " + std::to_string(data.size()) +
                                 " records, max V " + fmt(worst, 3));
  }
  ProblemParams p;
  p.kind = ProblemKind::Tabletop;
  p.goals = {Point2(4, 4)};
  Rng rng(1);
  const auto r = solve_local(uniform_decision(ProblemKind::Tabletop, rng), p, SolveConfig{});
  out.check(r.converged && std::abs(r.x_star.t_final() - 4.0) <= 0.05,
            "zero-obstacle t* " + fmt(r.x_star.t_final(), 6));
}

struct ModelEval {
  SampleMetrics uniform;
  std::map<std::pair<TrainMode, std::uint64_t>, SampleMetrics> trained;
};

void table1_direction(Outcome& out, Artifacts& art, const Options& o) {
  GuidanceConfig g;
  for (auto kind : kKinds) {
    const std::string name(to_string(kind));
    const auto inst = held_out_instances(kind, o.eval_instances, 1000);
    std::vector<ProblemParams> per;
    for (const auto& p : inst) per.insert(per.end(), static_cast<std::size_t>(o.per_instance), p);
    const auto uni = sample_metrics(uniform_candidates(inst, o.per_instance, 0), per);
    std::ostringstream row;
    row << name << " uniform mean " << fmt(uni.mean);
    int wins = 0;
    bool five_x = true;
    for (std::uint64_t seed = 0; seed < static_cast<std::uint64_t>(o.train_seeds); ++seed) {
      std::map<TrainMode, SampleMetrics> m;
      for (auto mode : {TrainMode::Vanilla, TrainMode::Constrained}) {
        const auto& ck = art.model(kind, mode, seed);
        m[mode] = sample_metrics(diffusion_candidates(ck.model, inst, o.per_instance, g, ck.schedule, 0, o.workers), per);
        five_x = five_x && uni.mean >= 5.0 * m[mode].mean;
      }
      const auto& v = m[TrainMode::Vanilla];
      const auto& c = m[TrainMode::Constrained];
      wins += c.feasible_ratio > v.feasible_ratio && c.q25 < v.q25;
      row << " | seed " << seed << " vanilla mean " << fmt(v.mean) << " q25 " << fmt(v.q25) << " feas "
          << fmt(v.feasible_ratio, 3) << ", constrained mean " << fmt(c.mean) << " q25 " << fmt(c.q25) << " feas "
          << fmt(c.feasible_ratio, 3);
    }
    out.check(2 * wins > o.train_seeds, row.str() + " | constrained wins " + std::to_string(wins) + "/" +
                                            std::to_string(o.train_seeds));
    out.check(five_x, name + " both models >= 5x below uniform");
  }
}

void table2_direction(Outcome& out, Artifacts& art, const Options& o) {
  GuidanceConfig g;
  for (auto kind : kKinds) {
    const std::string name(to_string(kind));
    const auto inst = held_out_instances(kind, o.warm_instances, 2000);
    const auto uni = warm_start_benchmark(uniform_candidates(inst, 1, 0), inst, SolveConfig{}, o.workers);
    const double med_u = median_of(uni.iterations);
    std::map<TrainMode, double> med;
    for (auto mode : {TrainMode::Vanilla, TrainMode::Constrained}) {
      std::vector<int> iters;
      for (std::uint64_t seed = 0; seed < static_cast<std::uint64_t>(o.train_seeds); ++seed) {
        const auto& ck = art.model(kind, mode, seed);
        const auto guesses = diffusion_candidates(ck.model, inst, 1, g, ck.schedule, 0, o.workers);
        const auto w = warm_start_benchmark(guesses, inst, SolveConfig{}, o.workers);
        iters.insert(iters.end(), w.iterations.begin(), w.iterations.end());
      }
      med[mode] = median_of(iters);
      out.check(med[mode] < med_u, name + " " + std::string(to_string(mode)) + " median iters " + fmt(med[mode]) +
                                       " vs uniform " + fmt(med_u));
    }
    const double v = med[TrainMode::Vanilla], c = med[TrainMode::Constrained];
    const double gap = std::abs(c - v) / v;
    out.check(gap <= 0.2, name + " constrained/vanilla gap " + fmt(100 * gap, 3) + "%");
  }
}

void lambda_zero(Outcome& out, Artifacts& art) {
  const auto& s = desk_schedule();
  for (auto kind : kKinds) {
    const auto& all = art.dataset(kind);
    const std::vector<DatasetRecord> sub(all.begin(), all.begin() + std::min<std::ptrdiff_t>(256, std::ssize(all)));
    const auto data = TrainingSet::from_records(sub);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 32;
    cfg.learning_rate = 1e-3;
    cfg.seed = 5;
    const auto vanilla = train_vanilla(data, cfg, s);
    const auto hybrid = run_training(data, cfg, s, make_hybrid_loss_fn(cfg, s, art.gt_table(kind)));
    bool same = vanilla.log.size() == hybrid.log.size();
    for (std::size_t i = 0; same && i < vanilla.model.parameters().size(); ++i) {
      same = vanilla.model.parameters()[i].value == hybrid.model.parameters()[i].value;
    }
    for (std::size_t e = 0; same && e < vanilla.log.size(); ++e) same = vanilla.log[e].loss == hybrid.log[e].loss;
    out.check(same, std::string(to_string(kind)) + (same ? " bitwise identical" : " differs"));
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void determinism(Outcome& out, const Options& o) {
  if (o.cli.empty() || !fs::exists(o.cli)) {
    out.check(false, "cadiff executable not found (pass --cli)");
    return;
  }
  const fs::path dir = o.work_dir / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto run = [&](const std::string& args) {
    const std::string cmd = "cd '" + dir.string() + "' && '" + fs::absolute(o.cli).string() + "' " + args +
                            " > /dev/null 2>> cli.log";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) && WEXITSTATUS(st) == 0;
  };
  const auto same = [&](const std::string& a, const std::string& b, const std::string& what, bool sidecar) {
    bool ok = fs::exists(dir / a) && slurp(dir / a) == slurp(dir / b);
    if (sidecar) ok = ok && slurp(dir / (a + ".json")) == slurp(dir / (b + ".json"));
    out.check(ok, what);
  };
  const std::string sched = " --seed 4 --steps 20 --beta-start 0.0025 --beta-end 0.5";
  for (auto kind : kKinds) {
    const std::string k(to_string(kind));
    const std::string common = " --problem " + k + sched;
    bool ok = true;
    for (const char* w : {"1", "3"}) {
      ok &= run("gen-data" + common + " --instances 3 --solves 4 --workers " + w + " --out " + k + "_d" + w + ".jsonl");
    }
    ok &= run("gen-data" + common + " --instances 3 --solves 4 --workers 3 --out " + k + "_d3b.jsonl");
    for (const char* w : {"1", "2"}) {
      ok &= run("analyze-gt" + sched + " --data " + k + "_d1.jsonl --noise 5 --records 8 --workers " + w + " --out " +
                k + "_gt" + w + ".csv");
      ok &= run("train" + common + " --data " + k + "_d1.jsonl --epochs 2 --batch-size 16 --workers " + w + " --out " +
                k + "_v" + w + ".ck");
      ok &= run("train" + common + " --data " + k + "_d1.jsonl --mode constrained --gt-table " + k +
                "_gt1.csv --epochs 2 --batch-size 16 --workers " + w + " --out " + k + "_c" + w + ".ck");
    }
    for (const char* w : {"1", "3"}) {
      ok &= run("sample --problem " + k + " --checkpoint " + k + "_c1.ck --instances 3 --per-instance 5 --workers " +
                w + " --out " + k + "_s" + w + ".jsonl");
    }
    out.check(ok, k + " all commands exit 0");
    same(k + "_d1.jsonl", k + "_d3.jsonl", k + " gen-data", false);
    same(k + "_d3.jsonl", k + "_d3b.jsonl", k + " gen-data rerun", false);
    same(k + "_gt1.csv", k + "_gt2.csv", k + " analyze-gt", true);
    same(k + "_v1.ck", k + "_v2.ck", k + " train vanilla", true);
    same(k + "_c1.ck", k + "_c2.ck", k + " train constrained", true);
    same(k + "_s1.jsonl", k + "_s3.jsonl", k + " sample", false);
  }
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  std::vector<int> only;
  CLI::App app{"cadiff acceptance runner"};
  app.add_option("--work-dir", o.work_dir, "Cache directory for datasets, tables and checkpoints");
  app.add_option("--cli", o.cli, "Path of the cadiff executable");
  app.add_option("--workers", o.workers, "Worker threads (0: all cores)");
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--epochs", o.epochs, "Training epochs for the trained models")->capture_default_str();
  app.add_option("--lr", o.lr, "Training learning rate")->capture_default_str();
  app.add_option("--train-seeds", o.train_seeds, "Training seeds per mode")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  o.only.insert(only.begin(), only.end());
  o.workers = resolve_workers(o.workers);

  Artifacts art(o);
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"schedule and forward-process exactness", [&](Outcome& r) { schedule_and_forward(r); }},
      {"one-step reverse identity", [&](Outcome& r) { reverse_identity(r); }},
      {"violation and loss gradient oracles", [&](Outcome& r) { gradient_oracles(r, art); }},
      {"ground-truth violation curve", [&](Outcome& r) { gt_curve(r, art); }},
      {"solver and data pipeline", [&](Outcome& r) { solver_pipeline(r, art, o.workers); }},
      {"sample quality ordering", [&](Outcome& r) { table1_direction(r, art, o); }},
      {"warm-start iteration ordering", [&](Outcome& r) { table2_direction(r, art, o); }},
      {"zero-lambda hybrid equals vanilla", [&](Outcome& r) { lambda_zero(r, art); }},
      {"CLI determinism", [&](Outcome& r) { determinism(r, o); }},
  };

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!o.only.empty() && !o.only.count(id)) continue;
    Outcome r;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(r);
    } catch (const std::exception& e) {
      r.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all = all && r.pass;
    std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << ", "
              << std::fixed << std::setprecision(1) << secs << " s): " << std::defaultfloat << r.detail.str()
              << std::endl;
  }
  return all ? 0 : 1;
}
