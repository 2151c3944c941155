#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "u2ad/autodiff.hpp"
#include "u2ad/rng.hpp"

namespace u2ad::testing {

struct GradCheck {
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double norm = 0.0;       // ||numeric||
  int coordinates = 0;
};

/// Compares the tape gradient of `loss` with central differences on up to
/// `max_coords` randomly chosen scalar parameters (all of them when the set
/// is smaller).
inline GradCheck check_gradient(ad::ParameterSet& params,
                                const std::function<double(ad::Gradients*)>& loss, int max_coords,
                                std::uint64_t seed, double h = 1e-6) {
  ad::Gradients grads = params.zeros_like();
  loss(&grads);
  std::vector<std::pair<int, Eigen::Index>> coords;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (Eigen::Index i = 0; i < params.value(static_cast<int>(p)).size(); ++i) {
      coords.emplace_back(static_cast<int>(p), i);
    }
  }
  Rng rng(seed);
  for (std::size_t i = coords.size(); i > 1; --i) {
    std::swap(coords[i - 1], coords[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1))]);
  }
  if (static_cast<int>(coords.size()) > max_coords) coords.resize(static_cast<std::size_t>(max_coords));
  double diff2 = 0.0, ana2 = 0.0, num2 = 0.0;
  for (const auto& [p, i] : coords) {
    double& w = params.value(p)(i);
    const double saved = w;
    w = saved + h;
    const double up = loss(nullptr);
    w = saved - h;
    const double down = loss(nullptr);
    w = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grads[static_cast<std::size_t>(p)](i);
    diff2 += (numeric - analytic) * (numeric - analytic);
    ana2 += analytic * analytic;
    num2 += numeric * numeric;
  }
  GradCheck r;
  r.coordinates = static_cast<int>(coords.size());
  r.norm = std::sqrt(num2);
  const double scale = std::max(std::sqrt(ana2), std::sqrt(num2));
  r.rel_error = scale > 0.0 ? std::sqrt(diff2) / scale : 0.0;
  return r;
}

}  // namespace u2ad::testing
