#include "u2ad/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "u2ad/error.hpp"

namespace u2ad {

WindowScore window_anomaly_score(const Matrix& x0, const Matrix& x_hat, const Matrix& score_at_trec,
                                 const Vector& gain, const Center& center) {
  const auto rec = rec_loss(x0, x_hat);
  const auto dist = vm_loss(score_at_trec, center);
  if (gain.size() != x0.rows()) {
    throw DataError("window_anomaly_score: gain has " + std::to_string(gain.size()) +
                    " entries for a window of " + std::to_string(x0.rows()));
  }
  // softmax(-gain), shifted by the minimum gain for stability.
  Vector w = (-(gain.array() - gain.minCoeff())).exp().matrix();
  w /= w.sum();
  WindowScore out;
  out.components.gain_weight = w;
  out.components.rec_err = rec.per_point;
  out.components.center_dist = dist.per_point;
  out.scores = w.cwiseProduct(rec.per_point) + dist.per_point;
  return out;
}

AnomalyScoreSeries stitch(std::span<const WindowScore> windows, std::span<const Eigen::Index> starts,
                          Eigen::Index length) {
  if (windows.size() != starts.size()) throw DataError("stitch: window and start counts differ");
  AnomalyScoreSeries out;
  out.scores = Vector::Zero(length);
  out.components.gain_weight = Vector::Zero(length);
  out.components.rec_err = Vector::Zero(length);
  out.components.center_dist = Vector::Zero(length);
  Vector count = Vector::Zero(length);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    const Eigen::Index s = starts[i];
    const Eigen::Index n = w.scores.size();
    if (s < 0 || s + n > length) throw DataError("stitch: window exceeds the series");
    out.scores.segment(s, n) += w.scores;
    out.components.gain_weight.segment(s, n) += w.components.gain_weight;
    out.components.rec_err.segment(s, n) += w.components.rec_err;
    out.components.center_dist.segment(s, n) += w.components.center_dist;
    count.segment(s, n).array() += 1.0;
  }
  for (Eigen::Index i = 0; i < length; ++i) {
    if (count(i) == 0.0) throw DataError("stitch: index " + std::to_string(i) + " is not covered by any window");
  }
  out.scores.array() /= count.array();
  out.components.gain_weight.array() /= count.array();
  out.components.rec_err.array() /= count.array();
  out.components.center_dist.array() /= count.array();
  return out;
}

double percentile(std::span<const double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty set");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

DetectionResult threshold_by_ratio(std::span<const double> scores, double ratio_percent,
                                   std::span<const double> pool) {
  if (scores.empty()) throw DataError("threshold_by_ratio: no scores");
  if (!(ratio_percent > 0.0 && ratio_percent < 100.0)) {
    throw ConfigError("anomaly ratio must lie in (0, 100)");
  }
  DetectionResult r;
  r.anomaly_ratio = ratio_percent;
  r.threshold = percentile(pool.empty() ? scores : pool, 100.0 - ratio_percent);
  r.predictions.reserve(scores.size());
  for (double s : scores) r.predictions.push_back(s > r.threshold ? 1 : 0);
  return r;
}

}  // namespace u2ad
