#include "u2ad/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "u2ad/error.hpp"

namespace u2ad::metrics {

namespace {
void same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DataError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                    std::to_string(b) + ")");
  }
}
}  // namespace

std::vector<EventSpan> episodes(std::span<const int> labels) {
  std::vector<EventSpan> out;
  std::size_t i = 0;
  while (i < labels.size()) {
    if (labels[i] != 0) {
      const std::size_t start = i;
      while (i < labels.size() && labels[i] != 0) ++i;
      out.push_back({start, i});
    } else {
      ++i;
    }
  }
  return out;
}

std::vector<int> point_adjust(std::span<const int> labels, std::span<const int> predictions) {
  same_length(labels.size(), predictions.size(), "point_adjust");
  std::vector<int> out(predictions.begin(), predictions.end());
  for (const auto& e : episodes(labels)) {
    const bool hit = std::any_of(predictions.begin() + static_cast<std::ptrdiff_t>(e.start),
                                 predictions.begin() + static_cast<std::ptrdiff_t>(e.end),
                                 [](int p) { return p != 0; });
    if (hit) std::fill(out.begin() + static_cast<std::ptrdiff_t>(e.start),
                       out.begin() + static_cast<std::ptrdiff_t>(e.end), 1);
  }
  return out;
}

PrecisionRecall prf1(std::span<const int> labels, std::span<const int> predictions) {
  same_length(labels.size(), predictions.size(), "prf1");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool y = labels[i] != 0;
    const bool p = predictions[i] != 0;
    tp += y && p;
    fp += !y && p;
    fn += y && !p;
  }
  PrecisionRecall r;
  r.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  r.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  r.f1 = r.precision + r.recall == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

DelayStats add_nrd(std::span<const EventSpan> events, std::span<const int> predictions) {
  DelayStats out;
  if (events.empty()) return out;
  double delay_sum = 0.0;
  double nrd_sum = 0.0;
  for (const auto& e : events) {
    if (e.end > predictions.size() || e.start >= e.end) throw DataError("add_nrd: episode outside predictions");
    std::size_t first = e.end;
    for (std::size_t i = e.start; i < e.end; ++i) {
      if (predictions[i] != 0) {
        first = i;
        break;
      }
    }
    if (first < e.end) ++out.n_detected;
    const double delay = static_cast<double>(first - e.start);
    delay_sum += delay;
    nrd_sum += delay / static_cast<double>(e.length());
  }
  const double n = static_cast<double>(events.size());
  out.add = delay_sum / n;
  out.nrd = nrd_sum / n;
  return out;
}

double soft_auc(std::span<const double> soft, std::span<const double> scores, Curve curve) {
  same_length(soft.size(), scores.size(), "auc");
  double pos_total = 0.0, neg_total = 0.0;
  for (double w : soft) {
    pos_total += w;
    neg_total += 1.0 - w;
  }
  if (!(pos_total > 0.0) || !(neg_total > 0.0)) {
    throw DataError("AUC needs both anomalous and normal points");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double tp = 0.0, fp = 0.0;
  double prev_tpr = 0.0, prev_fpr = 0.0;
  double area = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      tp += soft[order[i]];
      fp += 1.0 - soft[order[i]];
      ++i;
    }
    const double tpr = tp / pos_total;
    const double fpr = fp / neg_total;
    if (curve == Curve::kRoc) {
      area += 0.5 * (fpr - prev_fpr) * (tpr + prev_tpr);
    } else {
      const double precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
      area += (tpr - prev_tpr) * precision;
    }
    prev_tpr = tpr;
    prev_fpr = fpr;
  }
  return std::clamp(area, 0.0, 1.0);
}

double auc(std::span<const int> labels, std::span<const double> scores, Curve curve) {
  std::vector<double> soft(labels.begin(), labels.end());
  for (auto& v : soft) v = v != 0.0 ? 1.0 : 0.0;
  return soft_auc(soft, scores, curve);
}

std::vector<double> soft_labels(std::span<const int> labels, std::size_t buffer) {
  std::vector<double> out(labels.size(), 0.0);
  const double denom = static_cast<double>(buffer + 1);
  for (const auto& e : episodes(labels)) {
    for (std::size_t i = e.start; i < e.end; ++i) out[i] = 1.0;
    for (std::size_t dist = 1; dist <= buffer; ++dist) {
      const double v = 1.0 - static_cast<double>(dist) / denom;
      if (e.start >= dist) out[e.start - dist] = std::max(out[e.start - dist], v);
      if (e.end - 1 + dist < out.size()) out[e.end - 1 + dist] = std::max(out[e.end - 1 + dist], v);
    }
  }
  return out;
}

std::size_t median_episode_length(std::span<const EventSpan> events) {
  if (events.empty()) throw DataError("no anomaly episodes");
  std::vector<std::size_t> lens;
  for (const auto& e : events) lens.push_back(e.length());
  std::sort(lens.begin(), lens.end());
  const std::size_t n = lens.size();
  const std::size_t med = n % 2 ? lens[n / 2] : (lens[n / 2 - 1] + lens[n / 2]) / 2;
  return std::max<std::size_t>(1, med);
}

VusResult vus(std::span<const int> labels, std::span<const double> scores,
              std::optional<std::size_t> fixed_buffer) {
  same_length(labels.size(), scores.size(), "vus");
  const auto events = episodes(labels);
  if (events.empty()) throw DataError("VUS needs at least one anomaly episode");
  VusResult r;
  std::vector<std::size_t> buffers;
  if (fixed_buffer) {
    buffers.push_back(*fixed_buffer);
    r.max_buffer = *fixed_buffer;
  } else {
    r.max_buffer = median_episode_length(events);
    for (std::size_t l = 0; l <= r.max_buffer; ++l) buffers.push_back(l);
  }
  for (auto l : buffers) {
    const auto soft = soft_labels(labels, l);
    r.roc += soft_auc(soft, scores, Curve::kRoc);
    r.pr += soft_auc(soft, scores, Curve::kPr);
  }
  r.roc /= static_cast<double>(buffers.size());
  r.pr /= static_cast<double>(buffers.size());
  return r;
}

EvaluationReport evaluate(std::span<const int> labels, std::span<const double> scores,
                          std::span<const int> predictions, std::optional<std::size_t> fixed_buffer) {
  same_length(labels.size(), scores.size(), "evaluate");
  same_length(labels.size(), predictions.size(), "evaluate");
  EvaluationReport r;
  const auto adjusted = point_adjust(labels, predictions);
  const auto pr = prf1(labels, adjusted);
  r.precision = pr.precision;
  r.recall = pr.recall;
  r.f1 = pr.f1;
  const auto events = episodes(labels);
  r.n_episodes = events.size();
  const auto delays = add_nrd(events, predictions);
  r.add = delays.add;
  r.nrd = delays.nrd;
  r.n_detected = delays.n_detected;
  const bool both = !events.empty() && std::any_of(labels.begin(), labels.end(), [](int v) { return v == 0; });
  if (both) {
    r.auc_roc = auc(labels, scores, Curve::kRoc);
    r.auc_pr = auc(labels, scores, Curve::kPr);
    const auto v = vus(labels, scores, fixed_buffer);
    r.vus_roc = v.roc;
    r.vus_pr = v.pr;
  }
  return r;
}

std::string format_table(const std::vector<std::pair<std::string, EvaluationReport>>& rows) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %8s %8s %8s %8s %8s %8s %8s %8s %8s\n", "Dataset", "P", "R", "F1",
                "ADD", "NRD(%)", "AUC-ROC", "AUC-PR", "VUS-ROC", "VUS-PR");
  out << buf;
  for (const auto& [name, r] : rows) {
    const auto opt = [](const std::optional<double>& v, double scale) {
      char b[32];
      if (v) {
        std::snprintf(b, sizeof b, "%8.2f", *v * scale);
      } else {
        std::snprintf(b, sizeof b, "%8s", "-");
      }
      return std::string(b);
    };
    std::snprintf(buf, sizeof buf, "%-16s %8.2f %8.2f %8.2f %s %s %8.2f %8.2f %8.2f %8.2f\n", name.c_str(),
                  100.0 * r.precision, 100.0 * r.recall, 100.0 * r.f1, opt(r.add, 1.0).c_str(),
                  opt(r.nrd, 100.0).c_str(), 100.0 * r.auc_roc, 100.0 * r.auc_pr, 100.0 * r.vus_roc,
                  100.0 * r.vus_pr);
    out << buf;
  }
  return out.str();
}

}  // namespace u2ad::metrics
