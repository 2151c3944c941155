#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "u2ad/autodiff.hpp"
#include "u2ad/config.hpp"
#include "u2ad/data.hpp"
#include "u2ad/metrics.hpp"
#include "u2ad/objectives.hpp"
#include "u2ad/scorenet.hpp"
#include "u2ad/scoring.hpp"
#include "u2ad/sde.hpp"

namespace u2ad {

// ---- training objective on one window ---------------------------------------

/// Which update an objective evaluation feeds.
///   kPhaseA: base - l3 * gain(xi, sg psi)
///   kPhaseB: base + l3 * gain(sg xi, psi)
///   kCombined: both gain terms in one objective (single optimizer step)
///   kLiteral: base - l3 * gain(xi, psi), no stop-gradients
///   kRaw: reconstruction of the unperturbed window only (raw-model ablation)
enum class StepPhase { kPhaseA, kPhaseB, kCombined, kLiteral, kRaw };

const char* to_string(StepPhase phase);

struct LossSettings {
  bool dsm = true;
  bool rec = true;
  bool vm = true;
  bool gamma = true;
  LossWeights weights;
  double t_rec = 0.5;
};

/// Random inputs of one window's objective: diffusion time, perturbation
/// noise, and the separate noise of the reconstruction pass at t_rec.
struct WindowDraw {
  double t = 0.5;
  Matrix noise;
  Matrix rec_noise;
};

WindowDraw draw_window(const NoiseSchedule& schedule, Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Evaluates the objective of `phase` on one window. When `grads` is given
/// the gradient of the returned total is accumulated into it (scaled by
/// `grad_scale`). The denoising and volume terms are evaluated at the drawn
/// time, both weighted by sigma(t)^2 (the logged values include the weight);
/// the reconstruction and gain terms share one pass at t_rec. The
/// reconstruction uses the one-step denoiser
/// x_hat = (x(t_rec) + sigma^2 s) / alpha. Disabled terms are neither
/// computed nor logged (reported as 0).
LossComponents window_objective(const ScoreNet& model, const NoiseSchedule& schedule, const Matrix& x0,
                                const WindowDraw& draw, const Center& center, const LossSettings& settings,
                                StepPhase phase, ad::Gradients* grads = nullptr, double grad_scale = 1.0,
                                Rng* dropout_rng = nullptr);

// ---- optimizer ---------------------------------------------------------------

class Adam {
 public:
  Adam(const ad::ParameterSet& params, double beta1, double beta2, double eps);

  /// One update with learning rate `lr`.
  void step(ad::ParameterSet& params, const ad::Gradients& grads, double lr);
  long long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Matrix> m_, v_;
};

// ---- datasets ----------------------------------------------------------------

/// Train and test splits, both z-scored with the training statistics.
struct Dataset {
  LabeledSeries train;
  LabeledSeries test;
  NormalizationStats stats;
};

/// Raw (unnormalized) splits from the configured files or the generator.
std::pair<LabeledSeries, LabeledSeries> load_raw_splits(const ExperimentConfig& config);

Dataset load_dataset(const ExperimentConfig& config);

/// Training windows after applying `data.train_fraction` (a prefix of the
/// window list).
std::vector<TimeSeriesWindow> training_windows(const ExperimentConfig& config, const LabeledSeries& train);

// ---- training ----------------------------------------------------------------

struct StepRecord {
  long long step = 0;
  int epoch = 0;
  std::string phase;
  double lr = 0.0;
  LossComponents parts;
};

struct TrainResult {
  std::filesystem::path run_dir;
  std::vector<StepRecord> log;
  std::vector<double> epoch_losses;  // mean logged total per epoch, all phases
  int epochs_run = 0;
  int best_epoch = 0;
  long long steps = 0;
  bool stopped_early = false;
};

using ProgressFn = std::function<void(const StepRecord&)>;

/// Trains one model with seed `seed` and writes the run directory:
/// model_best.bin, model_last.bin, manifest.json, loss_log.jsonl,
/// config.ini. Throws RuntimeFailure on a non-finite loss after saving the
/// last finite parameters.
TrainResult train(const ExperimentConfig& config, const std::filesystem::path& run_dir, std::uint64_t seed,
                  const ProgressFn& progress = {});

/// Trains `runs.n_seeds` models (seed, seed + 1, ...). A single seed trains
/// straight into `out_dir`; several seeds use `out_dir/seed_<k>`.
std::vector<TrainResult> train_all(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                   const ProgressFn& progress = {});

std::vector<std::filesystem::path> run_directories(const ExperimentConfig& config,
                                                   const std::filesystem::path& out_dir);

// ---- trained model -------------------------------------------------------------

struct TrainedModel {
  ExperimentConfig config;  // as trained
  ScoreNet net;
  Center center;
  NormalizationStats stats;
  NoiseSchedule schedule;
  std::uint64_t seed = 0;
};

/// Loads the best checkpoint of a run. When `expected` is given, the
/// model-defining keys (data.window, scorenet.*, sde.*, ablation.raw_model)
/// must agree with the run's manifest, else ConfigError.
TrainedModel load_run(const std::filesystem::path& run_dir, const ExperimentConfig* expected = nullptr);

// ---- scoring and evaluation -----------------------------------------------------

/// Scores a normalized series with the solver/scoring settings of `config`.
/// Window perturbations are seeded from (model seed, window start) so results
/// do not depend on thread count or window order.
AnomalyScoreSeries score_series(const TrainedModel& model, const ExperimentConfig& config,
                                const LabeledSeries& normalized);

struct Evaluation {
  metrics::EvaluationReport report;
  DetectionResult detection;
  AnomalyScoreSeries test_scores;
  std::string ratio_source;  // what actually set the ratio
  std::optional<GapStatisticResult> gap;
};

/// Scores the test split of a trained run, thresholds and computes metrics.
/// Writes report.json, report.txt, scores.csv and detection.json into the run
/// directory.
Evaluation evaluate(const ExperimentConfig& config, const std::filesystem::path& run_dir);

/// Evaluates every seed's run and, for several seeds, writes summary.json and
/// summary.txt with mean and standard deviation per metric.
std::vector<Evaluation> evaluate_all(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// Scores an unlabeled series file (labels are never read) and writes
/// scores.csv and detection.json into `out_dir`. The ratio comes from the
/// gap statistic on training scores or the fixed ratio, and the pool is the
/// scored series itself.
DetectionResult detect(const ExperimentConfig& config, const std::filesystem::path& run_dir,
                       const std::filesystem::path& series_path, const std::filesystem::path& out_dir);

/// Report JSON with all metric fields; absent ADD/NRD become null.
std::string report_json(const metrics::EvaluationReport& report, const Evaluation* context = nullptr);

void write_scores_csv(const std::filesystem::path& path, const AnomalyScoreSeries& scores,
                      const std::vector<int>& predictions);

/// Worker count for window scoring: U2AD_THREADS when set, else the
/// hardware concurrency, never below 1.
int worker_threads();

}  // namespace u2ad
