#include <benchmark/benchmark.h>

#include <vector>

#include "u2ad/data.hpp"
#include "u2ad/harness.hpp"
#include "u2ad/metrics.hpp"
#include "u2ad/scorenet.hpp"
#include "u2ad/solver.hpp"

namespace {

using namespace u2ad;

ScoreNetConfig net_config(int d_model, int window, int channels) {
  ScoreNetConfig cfg;
  cfg.layers = 3;
  cfg.d_model = d_model;
  cfg.heads = 8;
  cfg.d_ff = d_model;
  cfg.window = window;
  cfg.channels = channels;
  return cfg;
}

Matrix random_window(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
  return x;
}

// Args: d_model, window.
void BM_ScoreNetForward(benchmark::State& state) {
  const auto d_model = static_cast<int>(state.range(0));
  const auto window = static_cast<int>(state.range(1));
  const ScoreNet net(net_config(d_model, window, 25), 1);
  Rng rng(2);
  const Matrix x = random_window(window, 25, rng);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, 0.3));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ScoreNetForward)->Args({64, 50})->Args({64, 100})->Args({128, 100})->Unit(benchmark::kMillisecond);

void BM_WindowObjectiveGradient(benchmark::State& state) {
  const auto d_model = static_cast<int>(state.range(0));
  const ScoreNet net(net_config(d_model, 50, 2), 1);
  const NoiseSchedule schedule;
  Rng rng(3);
  const Matrix x0 = random_window(50, 2, rng);
  const auto draw = draw_window(schedule, 50, 2, rng);
  const Center center{Matrix::Zero(50, 2)};
  LossSettings settings;
  settings.weights = {1.0 / 50, 1.0 / 50, 3.0};
  for (auto _ : state) {
    ad::Gradients g = net.parameters().zeros_like();
    benchmark::DoNotOptimize(
        window_objective(net, schedule, x0, draw, center, settings, StepPhase::kLiteral, &g).total);
  }
}
BENCHMARK(BM_WindowObjectiveGradient)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

// Probability-flow reconstruction under the exact score of N(0, I) data.
void BM_ReconstructAnalytic(benchmark::State& state) {
  const NoiseSchedule schedule;
  const ScoreFn score = [](const Matrix& x, double) -> Matrix { return -x; };
  SolverConfig cfg;
  cfg.t_rec = 0.5;
  Rng rng(4);
  const Matrix x0 = random_window(100, 25, rng);
  for (auto _ : state) benchmark::DoNotOptimize(reconstruct(x0, score, schedule, cfg, rng));
}
BENCHMARK(BM_ReconstructAnalytic)->Unit(benchmark::kMicrosecond);

void BM_GapStatistic(benchmark::State& state) {
  Rng rng(5);
  std::vector<double> s(static_cast<std::size_t>(state.range(0)));
  for (auto& v : s) v = rng.uniform() < 0.01 ? 1.0 + rng.uniform() : rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(gap_statistic(s));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_GapStatistic)->RangeMultiplier(10)->Range(1000, 1000000)->Complexity(benchmark::oNLogN);

struct LabeledScores {
  std::vector<int> labels;
  std::vector<double> scores;
};

LabeledScores labeled_scores(std::size_t n) {
  Rng rng(6);
  LabeledScores d{std::vector<int>(n, 0), std::vector<double>(n)};
  for (std::size_t i = 0; i + 40 < n; i += 400) {
    for (std::size_t j = 0; j < 20; ++j) d.labels[i + j] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) d.scores[i] = rng.uniform() + 0.5 * d.labels[i];
  return d;
}

void BM_AucRoc(benchmark::State& state) {
  const auto d = labeled_scores(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::auc(d.labels, d.scores, metrics::Curve::kRoc));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_AucRoc)->RangeMultiplier(10)->Range(1000, 1000000)->Complexity(benchmark::oNLogN);

void BM_Vus(benchmark::State& state) {
  const auto d = labeled_scores(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::vus(d.labels, d.scores));
}
BENCHMARK(BM_Vus)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

void BM_GenerateSynthetic(benchmark::State& state) {
  SyntheticSpec spec;
  spec.length = state.range(0);
  for (auto _ : state) benchmark::DoNotOptimize(generate_synthetic(spec));
}
BENCHMARK(BM_GenerateSynthetic)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
