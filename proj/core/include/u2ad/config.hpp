#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "u2ad/data.hpp"
#include "u2ad/objectives.hpp"
#include "u2ad/scorenet.hpp"
#include "u2ad/sde.hpp"
#include "u2ad/solver.hpp"

namespace u2ad {

struct DataConfig {
  std::string train_path;  // empty: use the [synthetic] generator
  std::string test_path;
  std::string format = "csv";
  bool header = false;
  int window = 100;
  int train_stride = 0;  // 0 means the window length
  int eval_stride = 0;
  double train_fraction = 1.0;
};

/// Generated dataset used when no paths are configured. The first
/// `train_length` points are anomaly-free and form the training split.
struct SyntheticConfig {
  int length = 4000;
  int train_length = 4000;
  int channels = 2;
  double amplitude = 1.0;
  double noise = 0.05;
  double min_period = 20.0;
  double max_period = 80.0;
  int global = 4;
  int contextual = 4;
  int shapelet = 2;
  int seasonal = 1;
  int trend = 1;
  int min_span = 10;
  int max_span = 20;
  std::uint64_t seed = 0;
};

struct LossConfig {
  bool dsm = true;
  bool rec = true;
  bool vm = true;
  bool gamma = true;
  double lambda_rec_scale = 1.0;  // lambda_1 = scale / N
  double lambda_vm_scale = 1.0;   // lambda_2 = scale / N
  double lambda_gamma = 3.0;      // lambda_3
  std::string gamma_mode = "minimax";  // minimax | literal
};

struct TrainConfig {
  int batch_size = 256;
  double lr = 1e-4;
  double lr_decay = 0.25;  // multiplied into the rate after every epoch
  int epochs = 10;
  int patience = 3;
  std::string minimax_steps = "two";  // two | combined
  int max_steps = 0;                  // 0: no cap
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct ScoringConfig {
  std::string ratio_source = "gap_statistic";  // gap_statistic | fixed
  double ratio = 1.0;                          // percent, used by `fixed` and as fallback
  std::string threshold_pool = "train_test";   // train_test | test
};

struct MetricsConfig {
  int vus_fixed_buffer = -1;  // < 0: sweep buffers
};

struct AblationConfig {
  bool raw_model = false;
};

struct RunsConfig {
  int n_seeds = 1;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  DataConfig data;
  SyntheticConfig synthetic;
  ScoreNetConfig scorenet;  // window and channels are filled in from the data
  NoiseSchedule::Params sde;
  SolverConfig solver;
  LossConfig loss;
  TrainConfig train;
  ScoringConfig scoring;
  MetricsConfig metrics;
  AblationConfig ablation;
  RunsConfig runs;

  /// Throws ConfigError on the first inconsistent field.
  void validate() const;

  int train_stride() const { return data.train_stride > 0 ? data.train_stride : data.window; }
  int eval_stride() const { return data.eval_stride > 0 ? data.eval_stride : data.window; }
  LossWeights loss_weights() const;
  SyntheticSpec synthetic_spec() const;
};

/// Sets `section.key` from its textual value. Unknown keys and unparsable
/// values throw ConfigError.
void set_field(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Applies a `section.key=value` override.
void apply_override(ExperimentConfig& config, const std::string& assignment);

/// Every field as `section.key -> value`, in declaration order of sections.
std::vector<std::pair<std::string, std::string>> config_fields(const ExperimentConfig& config);

/// INI text with `[section]` headers; parse_config(to_ini(c)) == c.
std::string to_ini(const ExperimentConfig& config);

ExperimentConfig parse_config(const std::string& ini_text);
ExperimentConfig load_config(const std::filesystem::path& path);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace u2ad
