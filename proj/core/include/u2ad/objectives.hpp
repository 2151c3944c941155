#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "u2ad/autodiff.hpp"
#include "u2ad/data.hpp"
#include "u2ad/scorenet.hpp"
#include "u2ad/sde.hpp"

namespace u2ad {

/// Logged values of one optimisation step.
struct LossComponents {
  double dsm = 0.0;
  double rec = 0.0;
  double vm = 0.0;
  double gamma = 0.0;  // mean over points of the per-point gain
  double total = 0.0;
};

/// lambda_1 (reconstruction), lambda_2 (volume), lambda_3 (contextual gain).
struct LossWeights {
  double rec = 0.0;
  double vm = 0.0;
  double gamma = 3.0;
};

/// Fixed centre of the score hypersphere, one row per window position.
struct Center {
  Matrix c;
};

/// Which side of the gain sees gradient.
///   kMaximizeLocal: xi is trained to increase the gain, psi is frozen.
///   kMinimizeGlobal: psi is trained to decrease the gain, xi is frozen.
///   kLiteral: both sides receive the gradient of -lambda_3 * gain.
enum class GammaPhase { kMaximizeLocal, kMinimizeGlobal, kLiteral };

const char* to_string(GammaPhase phase);

struct PointwiseLoss {
  Vector per_point;
  double mean = 0.0;
};

inline constexpr double kKlFloor = 1e-12;

/// Denoising target -(x(t) - alpha x(0)) / sigma^2, i.e. -noise / sigma.
Matrix dsm_target(const PerturbedBatch& batch);

/// (1 / 2N) * sum_i |score_i - target_i|^2.
double dsm_loss(const Matrix& score, const PerturbedBatch& batch);

/// Per-row squared distance to the centre and its mean.
PointwiseLoss vm_loss(const Matrix& score, const Center& center);

/// Per-row squared reconstruction error and its mean.
PointwiseLoss rec_loss(const Matrix& x0, const Matrix& x_hat);

/// Layer-averaged Jeffrey divergence between matching rows of xi and psi.
/// Throws DataError when a row is not a probability vector (1e-5).
Vector contextual_gain(const PathwayCharacteristics& chars);

/// dsm + l1 * rec + l2 * vm - l3 * gamma on already computed parts.
double total_loss(const LossComponents& parts, const LossWeights& weights);

/// Mean score of the initial network over one pass of the windows with fresh
/// perturbations; coordinates with |c| < 0.1 are pushed to +-0.1. The draw
/// for each window depends only on `seed` and its start index. The
/// perturbation time is `t` when given, else uniform on (t_eps, 1].
Center init_center(const ScoreNet& model, std::span<const TimeSeriesWindow> windows,
                   const NoiseSchedule& schedule, std::uint64_t seed, std::optional<double> t = std::nullopt);

// ---- differentiable forms ---------------------------------------------------

namespace loss {

/// Weighted denoising loss: weight * (1 / 2N) * sum |score - target|^2.
ad::Var dsm(ad::Var score, const PerturbedBatch& batch, double weight);
ad::Var vm(ad::Var score, const Center& center);
ad::Var rec(ad::Var x_hat, const Matrix& x0);
/// Per-point gain (N x 1) with stop-gradients placed according to `phase`.
ad::Var gain(const std::vector<ad::Var>& psi, const std::vector<ad::Var>& xi, GammaPhase phase);

}  // namespace loss

}  // namespace u2ad
