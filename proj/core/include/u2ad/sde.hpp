#pragma once

#include <Eigen/Dense>

#include <string>

namespace u2ad {

using Matrix = Eigen::MatrixXd;

enum class SdeKind { kVp, kSubVp, kVe };

SdeKind parse_sde_kind(const std::string& name);
const char* to_string(SdeKind kind);

/// Forward noising process. Immutable once constructed; validated on
/// construction.
class NoiseSchedule {
 public:
  struct Params {
    SdeKind kind = SdeKind::kVp;
    double beta_min = 0.1;
    double beta_max = 20.0;
    double sigma_min = 0.01;
    double sigma_max = 50.0;
    double t_eps = 1e-5;
  };

  NoiseSchedule() : NoiseSchedule(Params{}) {}
  explicit NoiseSchedule(const Params& params);

  static constexpr double kHorizon = 1.0;

  const Params& params() const { return params_; }
  SdeKind kind() const { return params_.kind; }
  double t_eps() const { return params_.t_eps; }

  /// Linear rate beta(t) for VP / sub-VP.
  double beta(double t) const;
  /// Integral of beta over [0, t].
  double beta_integral(double t) const;

 private:
  Params params_;
};

/// Mean coefficient and standard deviation of p_t(x(t) | x(0)).
struct MarginalParams {
  double alpha = 1.0;
  double sigma = 0.0;
};

MarginalParams marginal_params(const NoiseSchedule& schedule, double t);

/// x(t) = alpha * x0 + sigma * noise along with everything needed to form
/// the denoising target.
struct PerturbedBatch {
  Matrix x0;
  double t = 0.0;
  Matrix noise;
  Matrix xt;
  MarginalParams marginal;
};

PerturbedBatch perturb(const NoiseSchedule& schedule, const Matrix& x0, double t,
                       const Matrix& noise);

struct DriftDiffusion {
  Matrix drift;
  double diffusion = 0.0;
};

DriftDiffusion drift_diffusion(const NoiseSchedule& schedule, const Matrix& x, double t);

/// g(t)^2 without forming the drift.
double diffusion_squared(const NoiseSchedule& schedule, double t);

/// Linear drift coefficient: f(x, t) = drift_coefficient(t) * x.
double drift_coefficient(const NoiseSchedule& schedule, double t);

}  // namespace u2ad
