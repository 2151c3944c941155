#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "u2ad/objectives.hpp"

namespace u2ad {

/// Per-point diagnostics behind one anomaly score.
struct ScoreComponents {
  Vector gain_weight;
  Vector rec_err;
  Vector center_dist;
};

struct WindowScore {
  Vector scores;
  ScoreComponents components;
};

/// Stitched per-point scores for a whole series.
struct AnomalyScoreSeries {
  Vector scores;
  ScoreComponents components;
};

struct DetectionResult {
  double threshold = 0.0;
  std::vector<int> predictions;
  double anomaly_ratio = 0.0;
};

/// softmax(-gain) * rec_err + center_dist, per point.
WindowScore window_anomaly_score(const Matrix& x0, const Matrix& x_hat, const Matrix& score_at_trec,
                                 const Vector& gain, const Center& center);

/// Averages overlapping window scores; throws DataError naming the first
/// uncovered index.
AnomalyScoreSeries stitch(std::span<const WindowScore> windows, std::span<const Eigen::Index> starts,
                          Eigen::Index length);

/// q-th percentile (0..100) with linear interpolation between order
/// statistics.
double percentile(std::span<const double> values, double q);

/// threshold = (100 - ratio)-th percentile of `pool`; a point is flagged when
/// its score is strictly above the threshold. An empty pool means `scores`.
DetectionResult threshold_by_ratio(std::span<const double> scores, double ratio_percent,
                                   std::span<const double> pool = {});

}  // namespace u2ad
