#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace u2ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raw multivariate series, one row per timestep and one column per channel.
struct LabeledSeries {
  Matrix values;
  std::optional<std::vector<int>> labels;
  std::vector<std::string> channel_names;
  std::string source;

  Eigen::Index length() const { return values.rows(); }
  Eigen::Index channels() const { return values.cols(); }
};

/// One model input: N consecutive timesteps of the parent series.
struct TimeSeriesWindow {
  Matrix x0;
  Eigen::Index start_index = 0;

  Eigen::Index length() const { return x0.rows(); }
};

struct NormalizationStats {
  Vector mean;
  Vector std;
};

enum class SeriesFormat { kCsv, kF32Bin };

enum class AnomalyKind { kGlobal, kContextual, kShapelet, kSeasonal, kTrend };

const char* to_string(AnomalyKind kind);

/// Parameters of the synthetic generator. Spans (shapelet, seasonal, trend)
/// draw their length from [min_span, max_span]; global and contextual
/// anomalies are single points.
struct SyntheticSpec {
  Eigen::Index length = 2000;
  Eigen::Index channels = 4;
  double amplitude = 1.0;
  double noise = 0.05;
  double min_period = 20.0;
  double max_period = 80.0;
  std::map<AnomalyKind, int> mix;
  Eigen::Index min_span = 10;
  Eigen::Index max_span = 30;
  // Anomalies are only placed at or after this index (clean training prefix).
  Eigen::Index clean_prefix = 0;
  std::uint64_t seed = 0;
};

struct CsvOptions {
  bool header = false;
};

/// Loads a series. Labels are attached when `read_labels` is set and
/// `<stem>.labels` sits next to the data file. Throws DataError on any parse
/// or consistency problem.
LabeledSeries load_series(const std::filesystem::path& path, SeriesFormat format,
                          const CsvOptions& csv = {}, bool read_labels = true);

/// Writes values (and a `.labels` sidecar when labels are present). f32bin
/// also writes the `{ "L", "d" }` JSON sidecar next to the payload.
void save_series(const LabeledSeries& series, const std::filesystem::path& path,
                 SeriesFormat format);

std::filesystem::path label_sidecar_path(const std::filesystem::path& data_path);
std::filesystem::path f32bin_sidecar_path(const std::filesystem::path& data_path);

SeriesFormat parse_format(const std::string& name);

inline constexpr double kStdFloor = 1e-8;

/// Population mean and std per channel, std clamped to kStdFloor.
NormalizationStats fit_normalization(const LabeledSeries& train);

LabeledSeries normalize(const LabeledSeries& series, const NormalizationStats& stats);
LabeledSeries denormalize(const LabeledSeries& series, const NormalizationStats& stats);

/// Sliding windows with a tail window [L-N, L) when the stride does not land
/// exactly on the end of the series.
std::vector<TimeSeriesWindow> make_windows(const LabeledSeries& series, Eigen::Index length,
                                           Eigen::Index stride);

std::vector<Eigen::Index> window_starts(Eigen::Index series_length, Eigen::Index length,
                                        Eigen::Index stride);

LabeledSeries generate_synthetic(const SyntheticSpec& spec);

/// Rows [begin, end) of a series, labels included.
LabeledSeries slice(const LabeledSeries& series, Eigen::Index begin, Eigen::Index end);

/// Result of the two-cluster split of training scores.
struct GapStatisticResult {
  double ratio_percent = 0.0;  // 100 * upper / total
  double divider = 0.0;        // midpoint between the two clusters
  std::size_t upper_count = 0;
  std::size_t total = 0;
};

/// Splits nonnegative scores into two 1-D clusters (exact optimal 2-means)
/// and reports the share of the upper cluster. Throws DataError when all
/// scores coincide.
GapStatisticResult gap_statistic(std::span<const double> scores);

inline double gap_statistic_ratio(std::span<const double> scores) {
  return gap_statistic(scores).ratio_percent;
}

}  // namespace u2ad
