#include "u2ad_tools/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "u2ad/metrics.hpp"

namespace u2ad::plot {

namespace {

constexpr double kWidth = 1200.0;
constexpr double kPanelHeight = 220.0;
constexpr double kMarginLeft = 60.0;
constexpr double kMarginRight = 20.0;
constexpr double kMarginTop = 40.0;
constexpr double kGap = 40.0;

const char* const kPalette[] = {"#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
                                "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Panel {
  double top;
  double lo;
  double hi;
  std::size_t n;

  double x(std::size_t i) const {
    const double span = kWidth - kMarginLeft - kMarginRight;
    return kMarginLeft + (n > 1 ? span * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0);
  }
  double y(double v) const {
    const double frac = hi > lo ? (v - lo) / (hi - lo) : 0.5;
    return top + kPanelHeight * (1.0 - frac);
  }
};

void frame(std::ostringstream& out, const Panel& p, const std::string& label) {
  out << "<rect x=\"" << fmt(kMarginLeft) << "\" y=\"" << fmt(p.top) << "\" width=\""
      << fmt(kWidth - kMarginLeft - kMarginRight) << "\" height=\"" << fmt(kPanelHeight)
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  out << "<text x=\"8\" y=\"" << fmt(p.top + 14) << "\" font-size=\"12\">" << label << "</text>\n";
  out << "<text x=\"8\" y=\"" << fmt(p.top + kPanelHeight) << "\" font-size=\"10\">" << value(p.lo) << "</text>\n";
  out << "<text x=\"8\" y=\"" << fmt(p.top + 26) << "\" font-size=\"10\">" << value(p.hi) << "</text>\n";
}

void shade(std::ostringstream& out, const Panel& p, const std::vector<int>& labels) {
  for (const auto& e : metrics::episodes(labels)) {
    const double x0 = p.x(e.start);
    const double x1 = std::max(p.x(e.end - 1), x0 + 1.5);
    out << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(p.top) << "\" width=\"" << fmt(x1 - x0) << "\" height=\""
        << fmt(kPanelHeight) << "\" fill=\"#d62728\" fill-opacity=\"0.18\"/>\n";
  }
}

void polyline(std::ostringstream& out, const Panel& p, const std::vector<double>& v, const char* color) {
  out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1\" points=\"";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out << ' ';
    out << fmt(p.x(i)) << ',' << fmt(p.y(v[i]));
  }
  out << "\"/>\n";
}

}  // namespace

std::string score_trace_svg(const Matrix& values, const std::vector<double>& scores, double threshold,
                            const std::vector<int>& labels, const std::vector<int>& predictions,
                            const std::string& title) {
  const std::size_t n = scores.size();
  const double height = kMarginTop + 2 * kPanelHeight + kGap + 30.0;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(kWidth) << "\" height=\"" << fmt(height)
      << "\" font-family=\"sans-serif\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << fmt(kMarginLeft) << "\" y=\"24\" font-size=\"15\">" << title << "</text>\n";

  Panel top{kMarginTop, values.size() ? values.minCoeff() : 0.0, values.size() ? values.maxCoeff() : 1.0, n};
  shade(out, top, labels);
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    std::vector<double> col(values.col(c).data(), values.col(c).data() + values.rows());
    polyline(out, top, col, kPalette[static_cast<std::size_t>(c) % std::size(kPalette)]);
  }
  frame(out, top, "input");

  double lo = 0.0;
  double hi = threshold;
  for (double s : scores) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  Panel bottom{kMarginTop + kPanelHeight + kGap, lo, hi > lo ? hi : lo + 1.0, n};
  shade(out, bottom, labels);
  polyline(out, bottom, scores, "#1f77b4");
  out << "<line x1=\"" << fmt(kMarginLeft) << "\" x2=\"" << fmt(kWidth - kMarginRight) << "\" y1=\""
      << fmt(bottom.y(threshold)) << "\" y2=\"" << fmt(bottom.y(threshold))
      << "\" stroke=\"#d62728\" stroke-dasharray=\"6,4\"/>\n";
  for (std::size_t i = 0; i < predictions.size() && i < n; ++i) {
    if (predictions[i]) {
      out << "<circle cx=\"" << fmt(bottom.x(i)) << "\" cy=\"" << fmt(bottom.y(scores[i]))
          << "\" r=\"2\" fill=\"#ff7f0e\"/>\n";
    }
  }
  frame(out, bottom, "score");
  out << "<text x=\"" << fmt(kMarginLeft) << "\" y=\"" << fmt(height - 8)
      << "\" font-size=\"11\">shaded: labelled anomalies; dashed: threshold " << value(threshold)
      << "; dots: detections</text>\n";
  out << "</svg>\n";
  return out.str();
}

}  // namespace u2ad::plot
