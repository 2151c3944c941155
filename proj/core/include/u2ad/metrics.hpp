#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace u2ad::metrics {

/// Half-open run [start, end) of anomalous points.
struct EventSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start; }
  bool operator==(const EventSpan&) const = default;
};

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct DelayStats {
  std::optional<double> add;  // absent when there are no episodes
  std::optional<double> nrd;
  std::size_t n_detected = 0;
};

enum class Curve { kRoc, kPr };

struct VusResult {
  double roc = 0.0;
  double pr = 0.0;
  std::size_t max_buffer = 0;
};

struct EvaluationReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> add;
  std::optional<double> nrd;
  double auc_roc = 0.0;
  double auc_pr = 0.0;
  double vus_roc = 0.0;
  double vus_pr = 0.0;
  std::size_t n_episodes = 0;
  std::size_t n_detected = 0;
};

std::vector<EventSpan> episodes(std::span<const int> labels);

/// Credits a whole labelled episode when any of its points is predicted.
std::vector<int> point_adjust(std::span<const int> labels, std::span<const int> predictions);

PrecisionRecall prf1(std::span<const int> labels, std::span<const int> predictions);

/// First raw detection inside each episode. Missed episodes count as a full
/// duration delay and an NRD term of 1.
DelayStats add_nrd(std::span<const EventSpan> events, std::span<const int> predictions);

/// Threshold-sweep area: trapezoidal for ROC, step-wise (average precision)
/// for PR. Throws DataError unless both classes are present.
double auc(std::span<const int> labels, std::span<const double> scores, Curve curve);

/// Same sweep with real-valued positive weights (soft labels in [0, 1]);
/// every point contributes `w` to the positives and `1 - w` to the negatives.
double soft_auc(std::span<const double> soft, std::span<const double> scores, Curve curve);

/// 1 inside episodes, 1 - dist / (buffer + 1) within `buffer` points of an
/// episode, 0 elsewhere; overlapping ramps take the maximum.
std::vector<double> soft_labels(std::span<const int> labels, std::size_t buffer);

/// Mean soft AUC over buffers 0..max_buffer. With `fixed_buffer` only that
/// single buffer is evaluated. Throws DataError without episodes.
VusResult vus(std::span<const int> labels, std::span<const double> scores,
              std::optional<std::size_t> fixed_buffer = std::nullopt);

/// Median episode length, rounded down, at least 1.
std::size_t median_episode_length(std::span<const EventSpan> events);

EvaluationReport evaluate(std::span<const int> labels, std::span<const double> scores,
                          std::span<const int> predictions,
                          std::optional<std::size_t> fixed_buffer = std::nullopt);

/// Aligned text table with the F1 / ADD / NRD and AUC / VUS columns.
std::string format_table(const std::vector<std::pair<std::string, EvaluationReport>>& rows);

}  // namespace u2ad::metrics
