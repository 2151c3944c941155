#pragma once

// Brute-force reference implementations used by the tests. They are written
// for clarity and make no use of the library code they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace u2ad::oracle {

struct Episode {
  std::size_t start;
  std::size_t end;  // exclusive
};

// Bounds of the labelled run containing i, found by scanning outwards.
inline Episode episode_around(const std::vector<int>& labels, std::size_t i) {
  std::size_t a = i;
  while (a > 0 && labels[a - 1]) --a;
  std::size_t b = i;
  while (b < labels.size() && labels[b]) ++b;
  return {a, b};
}

inline std::vector<Episode> episodes(const std::vector<int>& labels) {
  std::vector<Episode> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] && (i == 0 || !labels[i - 1])) out.push_back(episode_around(labels, i));
  }
  return out;
}

inline std::vector<int> point_adjust(const std::vector<int>& labels, const std::vector<int>& pred) {
  std::vector<int> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out[i] = pred[i] ? 1 : 0;
    if (!labels[i]) continue;
    const auto e = episode_around(labels, i);
    for (std::size_t j = e.start; j < e.end; ++j) {
      if (pred[j]) out[i] = 1;
    }
  }
  return out;
}

struct Prf {
  double p, r, f1;
};

inline Prf prf1(const std::vector<int>& labels, const std::vector<int>& pred) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] && pred[i]) tp += 1;
    if (!labels[i] && pred[i]) fp += 1;
    if (labels[i] && !pred[i]) fn += 1;
  }
  const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return {p, r, p + r > 0 ? 2 * p * r / (p + r) : 0.0};
}

struct Delay {
  double add, nrd;
};

// Missed episodes count their full length as delay and 1 towards NRD.
inline Delay add_nrd(const std::vector<int>& labels, const std::vector<int>& pred) {
  const auto eps = episodes(labels);
  double add = 0, nrd = 0;
  for (const auto& e : eps) {
    const double len = static_cast<double>(e.end - e.start);
    double delay = len;
    for (std::size_t j = e.start; j < e.end; ++j) {
      if (pred[j]) {
        delay = static_cast<double>(j - e.start);
        break;
      }
    }
    add += delay;
    nrd += delay / len;
  }
  return {add / eps.size(), nrd / eps.size()};
}

// Probability that a random positive outscores a random negative, ties
// counted as one half (equals the trapezoidal ROC area).
inline double roc_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j]) continue;
      pairs += 1;
      if (scores[i] > scores[j]) wins += 1;
      if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Average precision: sum over distinct thresholds (high to low) of the
// recall increment times the precision at that threshold.
inline double pr_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  std::vector<double> thresholds = scores;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double positives = 0;
  for (int y : labels) positives += y ? 1 : 0;
  double ap = 0, prev_recall = 0;
  for (double th : thresholds) {
    double tp = 0, flagged = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= th) {
        flagged += 1;
        tp += labels[i] ? 1 : 0;
      }
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / flagged);
    prev_recall = recall;
  }
  return ap;
}

// Jeffrey divergence of two probability rows with the same floor as the
// library, computed as KL(p||q) + KL(q||p).
inline double jeffrey(const std::vector<double>& p, const std::vector<double>& q, double floor = 1e-12) {
  double kl_pq = 0, kl_qp = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = std::max(p[i], floor);
    const double b = std::max(q[i], floor);
    kl_pq += a * std::log(a / b);
    kl_qp += b * std::log(b / a);
  }
  return kl_pq + kl_qp;
}

}  // namespace u2ad::oracle
