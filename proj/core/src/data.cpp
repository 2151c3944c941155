#include "u2ad/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "u2ad/error.hpp"
#include "u2ad/rng.hpp"

namespace u2ad {
namespace fs = std::filesystem;

const char* to_string(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::kGlobal: return "global";
    case AnomalyKind::kContextual: return "contextual";
    case AnomalyKind::kShapelet: return "shapelet";
    case AnomalyKind::kSeasonal: return "seasonal";
    case AnomalyKind::kTrend: return "trend";
  }
  return "unknown";
}

SeriesFormat parse_format(const std::string& name) {
  if (name == "csv") return SeriesFormat::kCsv;
  if (name == "f32bin") return SeriesFormat::kF32Bin;
  throw ConfigError("unknown series format '" + name + "' (expected csv or f32bin)");
}

fs::path label_sidecar_path(const fs::path& data_path) {
  auto p = data_path;
  p.replace_extension(".labels");
  return p;
}

fs::path f32bin_sidecar_path(const fs::path& data_path) {
  auto p = data_path;
  p.replace_extension(".json");
  return p;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

double parse_cell(std::string_view cell, std::size_t row, std::size_t col, const fs::path& path) {
  cell = trim(cell);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw DataError(path.string() + ": cannot parse '" + std::string(cell) + "' at row " +
                    std::to_string(row) + ", column " + std::to_string(col));
  }
  if (!std::isfinite(v)) {
    throw DataError(path.string() + ": non-finite value at row " + std::to_string(row) +
                    ", column " + std::to_string(col));
  }
  return v;
}

Matrix load_csv(const fs::path& path, const CsvOptions& opts,
                std::vector<std::string>& names) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<double> cells;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    if (first && opts.header) {
      first = false;
      std::stringstream ss(line);
      std::string name;
      while (std::getline(ss, name, ',')) names.emplace_back(trim(name));
      continue;
    }
    first = false;
    ++rows;
    std::size_t col = 0;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      cells.push_back(parse_cell(rest.substr(0, comma), rows, col + 1, path));
      ++col;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (cols == 0) {
      cols = col;
    } else if (col != cols) {
      throw DataError(path.string() + ": row " + std::to_string(rows) + " has " +
                      std::to_string(col) + " columns, expected " + std::to_string(cols));
    }
  }
  if (rows == 0 || cols == 0) throw DataError(path.string() + ": no data rows");
  if (!names.empty() && names.size() != cols) {
    throw DataError(path.string() + ": header names " + std::to_string(names.size()) +
                    " columns, data has " + std::to_string(cols));
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cells[r * cols + c];
  return m;
}

float load_le_float(const unsigned char* p) {
  std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                       (static_cast<std::uint32_t>(p[2]) << 16) |
                       (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

Matrix load_f32bin(const fs::path& path) {
  const auto sidecar = f32bin_sidecar_path(path);
  std::ifstream meta(sidecar);
  if (!meta) throw DataError("missing f32bin sidecar " + sidecar.string());
  nlohmann::json j;
  try {
    meta >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(sidecar.string() + ": " + e.what());
  }
  if (!j.contains("L") || !j.contains("d")) throw DataError(sidecar.string() + ": needs L and d");
  const auto rows = j.at("L").get<std::int64_t>();
  const auto cols = j.at("d").get<std::int64_t>();
  if (rows < 1 || cols < 1) throw DataError(sidecar.string() + ": L and d must be positive");

  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const auto expected = static_cast<std::size_t>(rows * cols) * 4;
  if (bytes.size() != expected) {
    throw DataError(path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                    std::to_string(bytes.size()));
  }
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double v = load_le_float(bytes.data() + 4 * (r * cols + c));
      if (!std::isfinite(v)) {
        throw DataError(path.string() + ": non-finite value at row " + std::to_string(r + 1) +
                        ", column " + std::to_string(c + 1));
      }
      m(r, c) = v;
    }
  }
  return m;
}

std::vector<int> load_labels(const fs::path& path, Eigen::Index expected) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<int> labels;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t == "0") {
      labels.push_back(0);
    } else if (t == "1") {
      labels.push_back(1);
    } else {
      throw DataError(path.string() + ": label line " + std::to_string(labels.size() + 1) +
                      " is '" + std::string(t) + "', expected 0 or 1");
    }
  }
  if (static_cast<Eigen::Index>(labels.size()) != expected) {
    throw DataError(path.string() + ": " + std::to_string(labels.size()) +
                    " labels for a series of length " + std::to_string(expected));
  }
  return labels;
}

}  // namespace

LabeledSeries load_series(const fs::path& path, SeriesFormat format, const CsvOptions& csv, bool read_labels) {
  if (!fs::exists(path)) throw DataError("missing file " + path.string());
  LabeledSeries s;
  s.source = path.string();
  s.values = format == SeriesFormat::kCsv ? load_csv(path, csv, s.channel_names)
                                          : load_f32bin(path);
  const auto labels_path = label_sidecar_path(path);
  if (read_labels && fs::exists(labels_path)) s.labels = load_labels(labels_path, s.length());
  return s;
}

void save_series(const LabeledSeries& series, const fs::path& path, SeriesFormat format) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (format == SeriesFormat::kCsv) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out.precision(17);
    for (Eigen::Index r = 0; r < series.length(); ++r) {
      for (Eigen::Index c = 0; c < series.channels(); ++c) {
        if (c) out << ',';
        out << series.values(r, c);
      }
      out << '\n';
    }
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (Eigen::Index r = 0; r < series.length(); ++r) {
      for (Eigen::Index c = 0; c < series.channels(); ++c) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(series.values(r, c)));
        const unsigned char b[4] = {static_cast<unsigned char>(bits & 0xff),
                                    static_cast<unsigned char>((bits >> 8) & 0xff),
                                    static_cast<unsigned char>((bits >> 16) & 0xff),
                                    static_cast<unsigned char>((bits >> 24) & 0xff)};
        out.write(reinterpret_cast<const char*>(b), 4);
      }
    }
    std::ofstream meta(f32bin_sidecar_path(path));
    meta << nlohmann::json{{"L", series.length()}, {"d", series.channels()}}.dump() << '\n';
  }
  if (series.labels) {
    std::ofstream out(label_sidecar_path(path));
    for (int v : *series.labels) out << v << '\n';
  }
}

NormalizationStats fit_normalization(const LabeledSeries& train) {
  NormalizationStats stats;
  stats.mean = train.values.colwise().mean().transpose();
  const Matrix centered = train.values.rowwise() - stats.mean.transpose();
  stats.std = (centered.array().square().colwise().sum() / static_cast<double>(train.length()))
                  .sqrt()
                  .transpose();
  stats.std = stats.std.cwiseMax(kStdFloor);
  return stats;
}

namespace {
void check_dims(const LabeledSeries& series, const NormalizationStats& stats) {
  if (stats.mean.size() != series.channels() || stats.std.size() != series.channels()) {
    throw DataError("normalization stats have " + std::to_string(stats.mean.size()) +
                    " channels, series has " + std::to_string(series.channels()));
  }
}
}  // namespace

LabeledSeries normalize(const LabeledSeries& series, const NormalizationStats& stats) {
  check_dims(series, stats);
  LabeledSeries out = series;
  const Vector stdv = stats.std.cwiseMax(kStdFloor);
  out.values = ((series.values.rowwise() - stats.mean.transpose()).array().rowwise() /
                stdv.transpose().array())
                   .matrix();
  return out;
}

LabeledSeries denormalize(const LabeledSeries& series, const NormalizationStats& stats) {
  check_dims(series, stats);
  LabeledSeries out = series;
  const Vector stdv = stats.std.cwiseMax(kStdFloor);
  out.values = ((series.values.array().rowwise() * stdv.transpose().array()).matrix().rowwise() +
                stats.mean.transpose());
  return out;
}

std::vector<Eigen::Index> window_starts(Eigen::Index series_length, Eigen::Index length,
                                        Eigen::Index stride) {
  if (length < 2) throw ConfigError("window length must be at least 2");
  if (stride < 1) throw ConfigError("window stride must be at least 1");
  if (length > series_length) {
    throw DataError("window length " + std::to_string(length) + " exceeds series length " +
                    std::to_string(series_length));
  }
  std::vector<Eigen::Index> starts;
  for (Eigen::Index s = 0; s + length <= series_length; s += stride) starts.push_back(s);
  if (starts.back() + length < series_length) starts.push_back(series_length - length);
  return starts;
}

std::vector<TimeSeriesWindow> make_windows(const LabeledSeries& series, Eigen::Index length,
                                           Eigen::Index stride) {
  std::vector<TimeSeriesWindow> out;
  for (auto s : window_starts(series.length(), length, stride)) {
    out.push_back({series.values.middleRows(s, length), s});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

struct ChannelShape {
  double period1, period2, phase1, phase2, weight1, weight2;
};

double base_value(const ChannelShape& c, double amplitude, double t, double freq_scale = 1.0) {
  return amplitude * (c.weight1 * std::sin(2.0 * std::numbers::pi * freq_scale * t / c.period1 + c.phase1) +
                      c.weight2 * std::sin(2.0 * std::numbers::pi * freq_scale * t / c.period2 + c.phase2));
}

struct Placement {
  AnomalyKind kind;
  Eigen::Index start;
  Eigen::Index length;
};

std::vector<Eigen::Index> pick_channels(Rng& rng, Eigen::Index d) {
  const Eigen::Index count = rng.integer(1, std::max<Eigen::Index>(1, (d + 1) / 2));
  std::vector<Eigen::Index> all(static_cast<std::size_t>(d));
  std::iota(all.begin(), all.end(), 0);
  for (Eigen::Index i = 0; i < count; ++i) {
    const auto j = rng.integer(i, d - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
  }
  all.resize(static_cast<std::size_t>(count));
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

LabeledSeries generate_synthetic(const SyntheticSpec& spec) {
  if (spec.length < 1 || spec.channels < 1) throw ConfigError("synthetic length and channels must be positive");
  if (spec.min_span < 2 || spec.max_span < spec.min_span) throw ConfigError("synthetic span range invalid");
  if (spec.min_period <= 1.0 || spec.max_period < spec.min_period) throw ConfigError("synthetic period range invalid");
  Rng rng(spec.seed);
  const Eigen::Index L = spec.length;
  const Eigen::Index d = spec.channels;

  std::vector<ChannelShape> shapes(static_cast<std::size_t>(d));
  for (auto& c : shapes) {
    c.period1 = rng.uniform(spec.min_period, spec.max_period);
    c.period2 = c.period1 * rng.uniform(0.25, 0.5);
    c.phase1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    c.phase2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    c.weight1 = 0.75;
    c.weight2 = 0.25;
  }

  LabeledSeries out;
  out.values.resize(L, d);
  out.source = "synthetic(seed=" + std::to_string(spec.seed) + ")";
  for (Eigen::Index c = 0; c < d; ++c) {
    out.channel_names.push_back("ch" + std::to_string(c));
    for (Eigen::Index t = 0; t < L; ++t) {
      out.values(t, c) = base_value(shapes[static_cast<std::size_t>(c)], spec.amplitude,
                                    static_cast<double>(t));
    }
  }
  const Matrix clean = out.values;
  Matrix noise(L, d);
  for (Eigen::Index t = 0; t < L; ++t)
    for (Eigen::Index c = 0; c < d; ++c) noise(t, c) = spec.noise * rng.normal();
  out.values += noise;
  std::vector<int> labels(static_cast<std::size_t>(L), 0);

  // Plan placements: spans first (longest), then points, all non-overlapping
  // with a guard gap so neighbouring anomalies do not merge into one episode.
  std::vector<Placement> plan;
  Eigen::Index total_points = 0;
  for (const auto& [kind, count] : spec.mix) {
    if (count < 0) throw ConfigError("negative anomaly count");
    const bool point = kind == AnomalyKind::kGlobal || kind == AnomalyKind::kContextual;
    for (int i = 0; i < count; ++i) {
      const Eigen::Index len = point ? 1 : rng.integer(spec.min_span, spec.max_span);
      plan.push_back({kind, 0, len});
      total_points += len;
    }
  }
  if (plan.empty()) {
    out.labels = std::move(labels);
    return out;
  }
  if (spec.clean_prefix < 0 || spec.clean_prefix >= L) throw ConfigError("synthetic clean prefix outside the series");
  const Eigen::Index region = L - spec.clean_prefix;
  if (static_cast<double>(total_points) > 0.2 * static_cast<double>(region)) {
    throw ConfigError("anomaly mix needs " + std::to_string(total_points) +
                      " points, more than 20% of length " + std::to_string(region));
  }
  std::stable_sort(plan.begin(), plan.end(),
                   [](const Placement& a, const Placement& b) { return a.length > b.length; });

  const auto guard = static_cast<Eigen::Index>(std::ceil(spec.max_period / 2.0));
  const Eigen::Index margin = std::min(guard, region / 10);
  const Eigen::Index lo = spec.clean_prefix + margin;
  std::vector<char> taken(static_cast<std::size_t>(L), 0);
  for (auto& p : plan) {
    const Eigen::Index hi = L - margin - p.length;
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && hi >= lo; ++attempt) {
      const Eigen::Index s = rng.integer(lo, hi);
      const Eigen::Index a = std::max<Eigen::Index>(0, s - guard);
      const Eigen::Index b = std::min<Eigen::Index>(L, s + p.length + guard);
      bool free = true;
      for (Eigen::Index t = a; t < b && free; ++t) free = !taken[static_cast<std::size_t>(t)];
      if (!free) continue;
      // Contextual points sit where the local mean is far from the middle of
      // the global range, so the injected value can differ from its
      // neighbourhood while staying within range.
      if (p.kind == AnomalyKind::kContextual && attempt < 1500) {
        bool good = false;
        for (Eigen::Index c = 0; c < d && !good; ++c) {
          double m = 0.0;
          int n = 0;
          for (Eigen::Index t = std::max<Eigen::Index>(0, s - 3); t <= std::min(L - 1, s + 3); ++t) {
            if (t == s) continue;
            m += clean(t, c);
            ++n;
          }
          m /= n;
          good = std::abs(m) >= 0.5 * spec.amplitude;
        }
        if (!good) continue;
      }
      p.start = s;
      for (Eigen::Index t = s; t < s + p.length; ++t) taken[static_cast<std::size_t>(t)] = 1;
      placed = true;
      break;
    }
    if (!placed) {
      throw ConfigError("cannot place " + std::string(to_string(p.kind)) +
                        " anomaly: mix infeasible for length " + std::to_string(region));
    }
  }
  std::sort(plan.begin(), plan.end(),
            [](const Placement& a, const Placement& b) { return a.start < b.start; });

  for (const auto& p : plan) {
    const auto chans = pick_channels(rng, d);
    const Eigen::Index s = p.start;
    for (auto c : chans) {
      const auto& shape = shapes[static_cast<std::size_t>(c)];
      switch (p.kind) {
        case AnomalyKind::kGlobal: {
          const Eigen::Index a = std::max<Eigen::Index>(0, s - guard);
          const Eigen::Index b = std::min<Eigen::Index>(L, s + guard + 1);
          const double local_hi = out.values.col(c).segment(a, b - a).maxCoeff();
          const double local_lo = out.values.col(c).segment(a, b - a).minCoeff();
          const double offset = 5.0 * spec.noise + 0.5 * spec.amplitude;
          out.values(s, c) = rng.uniform() < 0.5 ? local_hi + offset : local_lo - offset;
          break;
        }
        case AnomalyKind::kContextual: {
          double m = 0.0;
          int n = 0;
          for (Eigen::Index t = std::max<Eigen::Index>(0, s - 3); t <= std::min(L - 1, s + 3); ++t) {
            if (t == s) continue;
            m += out.values(t, c);
            ++n;
          }
          m /= n;
          const double gmax = clean.col(c).maxCoeff();
          const double gmin = clean.col(c).minCoeff();
          // Mirror to the opposite side of the range, at least 4 noise levels away.
          double v = m >= 0.5 * (gmax + gmin) ? gmin + 0.1 * (gmax - gmin) : gmax - 0.1 * (gmax - gmin);
          if (std::abs(v - m) < 4.0 * spec.noise) v = m >= 0.5 * (gmax + gmin) ? gmin : gmax;
          out.values(s, c) = v;
          break;
        }
        case AnomalyKind::kShapelet: {
          // Sawtooth with the channel's primary period and the same amplitude.
          for (Eigen::Index t = s; t < s + p.length; ++t) {
            const double phase = std::fmod(static_cast<double>(t - s) / shape.period1 * 0.5 + 10.0, 1.0);
            out.values(t, c) = spec.amplitude * (2.0 * phase - 1.0) + noise(t, c);
          }
          break;
        }
        case AnomalyKind::kSeasonal: {
          const double scale = rng.uniform(2.0, 3.0);
          // Keep the phase continuous at the span start.
          for (Eigen::Index t = s; t < s + p.length; ++t) {
            const double shifted = static_cast<double>(s) + scale * static_cast<double>(t - s);
            out.values(t, c) = base_value(shape, spec.amplitude, shifted) + noise(t, c);
          }
          break;
        }
        case AnomalyKind::kTrend: {
          const double end = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.0) * spec.amplitude;
          for (Eigen::Index t = s; t < s + p.length; ++t) {
            out.values(t, c) += end * static_cast<double>(t - s + 1) / static_cast<double>(p.length);
          }
          break;
        }
      }
    }
    for (Eigen::Index t = s; t < s + p.length; ++t) labels[static_cast<std::size_t>(t)] = 1;
  }
  out.labels = std::move(labels);
  return out;
}

// ---------------------------------------------------------------------------

GapStatisticResult gap_statistic(std::span<const double> scores) {
  if (scores.size() < 100) {
    throw DataError("gap statistic needs at least 100 scores, got " + std::to_string(scores.size()));
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  for (double v : sorted) {
    if (!std::isfinite(v) || v < 0.0) throw DataError("gap statistic scores must be finite and nonnegative");
  }
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) {
    throw DataError(
        "all training scores are identical; no two-cluster split exists, fall back to a fixed anomaly ratio");
  }
  const std::size_t n = sorted.size();
  // Exact 1-D 2-means: scan every split between distinct neighbours and keep
  // the one with the smallest within-cluster sum of squares. Values are
  // shifted by the median to keep the running sums well conditioned.
  const double shift = sorted[n / 2];
  std::vector<double> prefix(n + 1, 0.0), prefix_sq(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = sorted[i] - shift;
    prefix[i + 1] = prefix[i] + v;
    prefix_sq[i + 1] = prefix_sq[i] + v * v;
  }
  auto sse = [&](std::size_t a, std::size_t b) {
    const double cnt = static_cast<double>(b - a);
    const double s = prefix[b] - prefix[a];
    return (prefix_sq[b] - prefix_sq[a]) - s * s / cnt;
  };
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_split = 0;
  for (std::size_t k = 1; k < n; ++k) {
    if (sorted[k] == sorted[k - 1]) continue;
    const double cost = sse(0, k) + sse(k, n);
    if (cost < best) {
      best = cost;
      best_split = k;
    }
  }
  GapStatisticResult r;
  r.total = n;
  r.upper_count = n - best_split;
  r.divider = 0.5 * (sorted[best_split - 1] + sorted[best_split]);
  r.ratio_percent = 100.0 * static_cast<double>(r.upper_count) / static_cast<double>(n);
  return r;
}

LabeledSeries slice(const LabeledSeries& series, Eigen::Index begin, Eigen::Index end) {
  if (begin < 0 || end > series.length() || begin >= end) {
    throw DataError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside series of length " +
                    std::to_string(series.length()));
  }
  LabeledSeries out;
  out.values = series.values.middleRows(begin, end - begin);
  if (series.labels) out.labels = std::vector<int>(series.labels->begin() + begin, series.labels->begin() + end);
  out.channel_names = series.channel_names;
  out.source = series.source;
  return out;
}

}  // namespace u2ad
