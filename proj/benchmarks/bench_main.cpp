#include <benchmark/benchmark.h>

#include "cadiff/constraint_align.hpp"
#include "cadiff/denoiser.hpp"
#include "cadiff/diffusion.hpp"
#include "cadiff/nlp_solver.hpp"
#include "cadiff/problems.hpp"

namespace {

using namespace cadiff;

ProblemKind kind_arg(const benchmark::State& state) {
  return state.range(0) == 0 ? ProblemKind::Tabletop : ProblemKind::TwoCar;
}

void BM_Violation(benchmark::State& state) {
  const auto kind = kind_arg(state);
  const auto p = sample_problem_params(1, kind);
  Rng rng(2);
  const auto x = uniform_decision(kind, rng);
  for (auto _ : state) benchmark::DoNotOptimize(violation(x, p).total);
}
BENCHMARK(BM_Violation)->Arg(0)->Arg(1);

void BM_ViolationGradient(benchmark::State& state) {
  const auto kind = kind_arg(state);
  const auto p = sample_problem_params(1, kind);
  Rng rng(2);
  const auto x = uniform_decision(kind, rng);
  for (auto _ : state) benchmark::DoNotOptimize(violation_gradient(x, p));
}
BENCHMARK(BM_ViolationGradient)->Arg(0)->Arg(1);

void BM_SolveLocal(benchmark::State& state) {
  const auto kind = kind_arg(state);
  const auto p = sample_problem_params(3, kind);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    Rng rng(seed++);
    benchmark::DoNotOptimize(solve_local(uniform_decision(kind, rng), p, SolveConfig{}).converged);
  }
}
BENCHMARK(BM_SolveLocal)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_DenoiserForward(benchmark::State& state) {
  const Denoiser model(ProblemKind::Tabletop, {}, 1);
  const int batch = static_cast<int>(state.range(0));
  const Denoiser::Matrix x = Eigen::MatrixXd::Random(161, batch).cast<float>();
  std::vector<ProblemParams> params;
  for (int i = 0; i < batch; ++i) params.push_back(sample_problem_params(static_cast<std::uint64_t>(i), ProblemKind::Tabletop));
  std::vector<const ProblemParams*> cond;
  for (const auto& p : params) cond.push_back(&p);
  const std::vector<int> steps(static_cast<std::size_t>(batch), 50);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, steps, cond));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(64)->Arg(128);

void BM_DiffusionLossGrad(benchmark::State& state) {
  const Denoiser model(ProblemKind::Tabletop, {}, 1);
  const auto sched = make_schedule(100, 5e-4, 0.1);
  std::vector<ProblemParams> params;
  TrainingBatch batch;
  batch.x0 = Eigen::MatrixXd::Random(161, 128);
  for (int i = 0; i < 128; ++i) params.push_back(sample_problem_params(static_cast<std::uint64_t>(i), ProblemKind::Tabletop));
  for (const auto& p : params) batch.params.push_back(&p);
  Rng rng(4);
  auto grads = model.zero_gradients();
  for (auto _ : state) benchmark::DoNotOptimize(diffusion_loss(model, batch, sched, 0.1, rng, &grads).value);
}
BENCHMARK(BM_DiffusionLossGrad)->Unit(benchmark::kMillisecond);

void BM_Sample(benchmark::State& state) {
  const Denoiser model(ProblemKind::Tabletop, {}, 1);
  const auto sched = make_schedule(100, 5e-4, 0.1);
  const auto p = sample_problem_params(1, ProblemKind::Tabletop);
  for (auto _ : state) benchmark::DoNotOptimize(sample(model, p, GuidanceConfig{}, sched, 64, 5));
}
BENCHMARK(BM_Sample)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
