#pragma once

#include <string>
#include <vector>

#include "u2ad/data.hpp"

namespace u2ad::plot {

/// Two stacked panels: the input channels on top, the anomaly score with its
/// threshold below. Labelled episodes are shaded in both panels.
std::string score_trace_svg(const Matrix& values, const std::vector<double>& scores, double threshold,
                            const std::vector<int>& labels, const std::vector<int>& predictions,
                            const std::string& title);

}  // namespace u2ad::plot
