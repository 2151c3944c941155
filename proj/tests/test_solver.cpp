#include <gtest/gtest.h>

#include <cmath>

#include "u2ad/error.hpp"
#include "u2ad/solver.hpp"

namespace u2ad {
namespace {

// Marginal of N(mu, s^2) data under the VP schedule: N(alpha mu, alpha^2 s^2 + sigma^2).
struct GaussianMarginal {
  double mu, s2;
  NoiseSchedule schedule;

  double mean(double t) const { return marginal_params(schedule, t).alpha * mu; }
  double var(double t) const {
    const auto m = marginal_params(schedule, t);
    return m.alpha * m.alpha * s2 + m.sigma * m.sigma;
  }
  ScoreFn score() const {
    return [this](const Matrix& x, double t) { return Matrix((-(x.array() - mean(t)) / var(t)).matrix()); };
  }
  // Probability-flow map between two times: it preserves the standardized value.
  double flow(double x, double from, double to) const {
    return mean(to) + std::sqrt(var(to) / var(from)) * (x - mean(from));
  }
};

TEST(DormandPrince, ExponentialDecay) {
  const DormandPrince45 solver(1e-10, 1e-12, 10000);
  OdeStats stats;
  const Matrix y = solver.integrate([](double, const Matrix& y) { return Matrix(-y); }, Matrix::Ones(1, 1), 0.0,
                                    2.0, &stats);
  EXPECT_NEAR(y(0, 0), std::exp(-2.0), 1e-9);
  EXPECT_GT(stats.accepted, 0);
  EXPECT_GE(stats.evaluations, 6 * stats.accepted);
}

TEST(DormandPrince, BackwardInTime) {
  const DormandPrince45 solver(1e-10, 1e-12, 10000);
  const Matrix y = solver.integrate([](double, const Matrix& y) { return Matrix(-y); },
                                    Matrix::Constant(1, 1, std::exp(-1.0)), 1.0, 0.0);
  EXPECT_NEAR(y(0, 0), 1.0, 1e-9);
}

TEST(DormandPrince, TimeDependentRhs) {
  const DormandPrince45 solver(1e-10, 1e-12, 10000);
  // y' = cos t, y(0) = 0 -> sin t
  const Matrix y =
      solver.integrate([](double t, const Matrix& y) { return Matrix::Constant(y.rows(), y.cols(), std::cos(t)); },
                       Matrix::Zero(2, 3), 0.0, 3.0);
  EXPECT_LT((y.array() - std::sin(3.0)).abs().maxCoeff(), 1e-9);
}

TEST(DormandPrince, TighterToleranceIsMoreAccurate) {
  const auto f = [](double, const Matrix& y) { return Matrix(y.array().square()); };
  // y' = y^2, y(0) = 0.5 -> y = 1 / (2 - t)
  double previous = 1.0;
  for (double tol : {1e-3, 1e-6, 1e-9}) {
    const DormandPrince45 solver(tol, tol, 100000);
    const double err = std::abs(solver.integrate(f, Matrix::Constant(1, 1, 0.5), 0.0, 1.5)(0, 0) - 2.0);
    EXPECT_LT(err, previous);
    previous = err;
  }
  EXPECT_LT(previous, 1e-7);
}

TEST(DormandPrince, StepLimitIsRuntimeFailure) {
  const DormandPrince45 solver(1e-12, 1e-12, 3);
  EXPECT_THROW(solver.integrate([](double, const Matrix& y) { return Matrix(-10.0 * y); }, Matrix::Ones(1, 1),
                                0.0, 5.0),
               RuntimeFailure);
}

TEST(DormandPrince, NonFiniteStateIsRuntimeFailure) {
  const DormandPrince45 solver(1e-6, 1e-6, 1000);
  EXPECT_THROW(solver.integrate([](double, const Matrix& y) { return Matrix::Constant(y.rows(), y.cols(), NAN); },
                                Matrix::Ones(1, 1), 0.0, 1.0),
               RuntimeFailure);
}

TEST(Solver, StandardNormalScoreIsStationaryUnderVp) {
  const NoiseSchedule s;
  const ScoreFn score = [](const Matrix& x, double) { return Matrix(-x); };
  Matrix x(4, 1);
  x << -2, -0.5, 0.3, 1.7;
  for (double t : {0.01, 0.5, 1.0}) {
    EXPECT_LT(ode_rhs(x, t, score, s).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Solver, GaussianFlowMatchesAnalyticMap) {
  const GaussianMarginal g{1.5, 0.25, NoiseSchedule()};
  SolverConfig cfg;
  cfg.t_rec = 0.5;
  Matrix xt(5, 1);
  xt << -1.0, 0.0, 0.3, 0.9, 2.0;
  const auto r = reconstruct_from(xt, g.score(), g.schedule, cfg);
  for (Eigen::Index i = 0; i < xt.rows(); ++i) {
    const double expect = g.flow(xt(i, 0), cfg.t_rec, cfg.t_end);
    EXPECT_NEAR(r.x_hat(i, 0), expect, 1e-4 * std::max(1.0, std::abs(expect)));
  }
  EXPECT_GT(r.n_steps, 0);
}

TEST(Solver, ReconstructInvertsForwardFlow) {
  const GaussianMarginal g{-0.7, 0.5, NoiseSchedule()};
  SolverConfig cfg;
  cfg.t_rec = 0.5;
  const DormandPrince45 forward(cfg.rtol, cfg.atol, cfg.max_steps);
  Matrix x0(4, 1);
  x0 << -2.0, -0.7, 0.1, 1.2;
  const auto score = g.score();
  const Matrix xt = forward.integrate([&](double t, const Matrix& y) { return ode_rhs(y, t, score, g.schedule); },
                                      x0, cfg.t_end, cfg.t_rec);
  const auto r = reconstruct_from(xt, score, g.schedule, cfg);
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    EXPECT_NEAR(r.x_hat(i, 0), x0(i, 0), 0.05 * std::abs(x0(i, 0)) + 1e-6);
  }
}

TEST(Solver, ReconstructIsDeterministicGivenRng) {
  const GaussianMarginal g{0.0, 1.0, NoiseSchedule()};
  SolverConfig cfg;
  const Matrix x0 = Matrix::Constant(3, 2, 0.4);
  Rng a(5), b(5);
  EXPECT_EQ(reconstruct(x0, g.score(), g.schedule, cfg, a).x_hat,
            reconstruct(x0, g.score(), g.schedule, cfg, b).x_hat);
  Matrix bad = x0;
  bad(0, 0) = NAN;
  EXPECT_THROW(reconstruct(bad, g.score(), g.schedule, cfg, a), DataError);
}

TEST(Solver, NonFiniteScoreIsRuntimeFailure) {
  const NoiseSchedule s;
  SolverConfig cfg;
  const ScoreFn nan_score = [](const Matrix& x, double) { return Matrix::Constant(x.rows(), x.cols(), NAN); };
  EXPECT_THROW(reconstruct_from(Matrix::Ones(2, 1), nan_score, s, cfg), RuntimeFailure);
}

TEST(Solver, ConfigValidation) {
  const NoiseSchedule s;
  SolverConfig cfg;
  cfg.t_end = cfg.t_rec;
  EXPECT_THROW(cfg.validate(s), ConfigError);
  cfg = {};
  cfg.t_end = 1e-7;
  EXPECT_THROW(cfg.validate(s), ConfigError);
  cfg = {};
  cfg.rtol = 0;
  EXPECT_THROW(cfg.validate(s), ConfigError);
  cfg = {};
  cfg.t_rec = 1.5;
  EXPECT_THROW(cfg.validate(s), ConfigError);
}

}  // namespace
}  // namespace u2ad
