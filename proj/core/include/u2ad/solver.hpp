#pragma once

#include <Eigen/Dense>

#include <functional>

#include "u2ad/rng.hpp"
#include "u2ad/sde.hpp"

namespace u2ad {

using Matrix = Eigen::MatrixXd;

struct SolverConfig {
  double t_rec = 0.5;
  double t_end = 1e-3;
  double rtol = 1e-5;
  double atol = 1e-5;
  int max_steps = 10000;

  void validate(const NoiseSchedule& schedule) const;
};

/// Score field s(x, t); a trained network or an analytic stand-in.
using ScoreFn = std::function<Matrix(const Matrix& x, double t)>;

/// Right-hand side of the probability-flow ODE: f(x, t) - g(t)^2 / 2 * s(x, t).
Matrix ode_rhs(const Matrix& x, double t, const ScoreFn& score, const NoiseSchedule& schedule);

struct OdeStats {
  int accepted = 0;
  int rejected = 0;
  int evaluations = 0;
};

/// Adaptive Dormand-Prince 5(4) integration of dy/dt = f(t, y) from t0 to t1
/// (either direction). The error test uses the RMS norm of
/// err / (atol + rtol * max(|y_old|, |y_new|)). Throws RuntimeFailure on
/// step-size underflow, non-finite state or when max_steps is exceeded.
class DormandPrince45 {
 public:
  using Rhs = std::function<Matrix(double t, const Matrix& y)>;

  DormandPrince45(double rtol, double atol, int max_steps);

  Matrix integrate(const Rhs& f, const Matrix& y0, double t0, double t1, OdeStats* stats = nullptr) const;

 private:
  double initial_step(const Rhs& f, double t0, const Matrix& y0, const Matrix& f0, double direction,
                      double span) const;
  double rtol_;
  double atol_;
  int max_steps_;
};

struct Reconstruction {
  Matrix x_hat;
  Matrix xt;     // perturbed input the integration started from
  int n_steps = 0;
};

/// Integrates the probability-flow ODE from (xt, t_rec) down to t_end.
Reconstruction reconstruct_from(const Matrix& xt, const ScoreFn& score, const NoiseSchedule& schedule,
                                const SolverConfig& cfg);

/// Perturbs x0 to t_rec with a draw from `rng`, then reconstructs.
Reconstruction reconstruct(const Matrix& x0, const ScoreFn& score, const NoiseSchedule& schedule,
                           const SolverConfig& cfg, Rng& rng);

}  // namespace u2ad
