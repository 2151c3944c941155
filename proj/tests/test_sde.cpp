#include <gtest/gtest.h>

#include <cmath>

#include "u2ad/error.hpp"
#include "u2ad/rng.hpp"
#include "u2ad/sde.hpp"

namespace u2ad {
namespace {

NoiseSchedule schedule_of(SdeKind kind) {
  NoiseSchedule::Params p;
  p.kind = kind;
  return NoiseSchedule(p);
}

// Composite Simpson rule on the linear beta; independent of beta_integral.
double simpson_beta(const NoiseSchedule& s, double t, int intervals = 2000) {
  const double h = t / intervals;
  double acc = s.beta(0.0) + s.beta(t);
  for (int i = 1; i < intervals; ++i) acc += (i % 2 ? 4.0 : 2.0) * s.beta(i * h);
  return acc * h / 3.0;
}

TEST(Sde, VpAlphaSigmaOnUnitCircle) {
  const auto s = schedule_of(SdeKind::kVp);
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const double t = s.t_eps() + (1.0 - s.t_eps()) * rng.uniform();
    const auto m = marginal_params(s, t);
    EXPECT_NEAR(m.alpha * m.alpha + m.sigma * m.sigma, 1.0, 1e-12) << "t=" << t;
  }
}

TEST(Sde, VpEndpoints) {
  const auto s = schedule_of(SdeKind::kVp);
  const auto early = marginal_params(s, 1e-5);
  EXPECT_NEAR(early.alpha, 1.0, 1e-5);
  EXPECT_GT(early.sigma, 0.0);
  const auto late = marginal_params(s, 1.0);
  // B(1) = 0.1 + 9.95 = 10.05
  EXPECT_NEAR(late.alpha, std::exp(-0.5 * 10.05), 1e-12);
}

TEST(Sde, AlphaMatchesQuadrature) {
  for (auto kind : {SdeKind::kVp, SdeKind::kSubVp}) {
    const auto s = schedule_of(kind);
    for (double t : {1e-3, 0.1, 0.25, 0.5, 0.75, 1.0}) {
      EXPECT_NEAR(marginal_params(s, t).alpha, std::exp(-0.5 * simpson_beta(s, t)), 1e-10) << t;
    }
  }
}

TEST(Sde, SubVpSigmaIsOneMinusExp) {
  const auto s = schedule_of(SdeKind::kSubVp);
  for (double t : {0.01, 0.3, 1.0}) {
    const double b = simpson_beta(s, t);
    EXPECT_NEAR(marginal_params(s, t).sigma, 1.0 - std::exp(-b), 1e-10);
  }
}

TEST(Sde, VeGeometricSigma) {
  const auto s = schedule_of(SdeKind::kVe);
  EXPECT_DOUBLE_EQ(marginal_params(s, 1.0).sigma, 50.0);
  EXPECT_NEAR(marginal_params(s, 0.5).sigma, std::sqrt(0.01 * 50.0), 1e-12);
  EXPECT_EQ(marginal_params(s, 0.5).alpha, 1.0);
  EXPECT_EQ(drift_coefficient(s, 0.5), 0.0);
}

// For x0 = 0 the marginal variance obeys d(sigma^2)/dt = 2 f(t) sigma^2 + g(t)^2.
TEST(Sde, VarianceOdeConsistency) {
  for (auto kind : {SdeKind::kVp, SdeKind::kSubVp, SdeKind::kVe}) {
    const auto s = schedule_of(kind);
    for (double t : {0.05, 0.2, 0.5, 0.9}) {
      const double h = 1e-6;
      const auto var = [&](double u) {
        const double sg = marginal_params(s, u).sigma;
        return sg * sg;
      };
      const double lhs = (var(t + h) - var(t - h)) / (2 * h);
      const double rhs = 2.0 * drift_coefficient(s, t) * var(t) + diffusion_squared(s, t);
      EXPECT_NEAR(lhs, rhs, 1e-5 * std::max(1.0, std::abs(rhs))) << to_string(kind) << " t=" << t;
    }
  }
}

TEST(Sde, PerturbMonteCarloVariance) {
  const auto s = schedule_of(SdeKind::kVp);
  Rng rng(3);
  for (double t : {0.25, 0.5, 1.0}) {
    const int n = 100000;
    Matrix x0 = Matrix::Constant(n, 1, 0.7);
    Matrix noise(n, 1);
    for (int i = 0; i < n; ++i) noise(i, 0) = rng.normal();
    const auto b = perturb(s, x0, t, noise);
    const double mean = b.xt.mean();
    const double var = (b.xt.array() - mean).square().sum() / (n - 1);
    const double sigma2 = b.marginal.sigma * b.marginal.sigma;
    EXPECT_NEAR(var / sigma2, 1.0, 0.02) << t;
    EXPECT_NEAR(mean, 0.7 * b.marginal.alpha, 5.0 * b.marginal.sigma / std::sqrt(n));
  }
}

TEST(Sde, PerturbIsExactAffineMap) {
  const auto s = schedule_of(SdeKind::kVp);
  Matrix x0(2, 2);
  x0 << 1, -2, 0.5, 3;
  Matrix noise(2, 2);
  noise << 0.1, 0.2, -0.3, 0.4;
  const auto b = perturb(s, x0, 0.4, noise);
  EXPECT_TRUE(b.xt.isApprox(b.marginal.alpha * x0 + b.marginal.sigma * noise, 1e-15));
  EXPECT_THROW(perturb(s, x0, 0.4, Matrix::Zero(3, 2)), DataError);
}

TEST(Sde, RejectsBadParameters) {
  NoiseSchedule::Params p;
  p.beta_min = 5.0;
  p.beta_max = 1.0;
  EXPECT_THROW(NoiseSchedule{p}, ConfigError);
  p = {};
  p.t_eps = 0.0;
  EXPECT_THROW(NoiseSchedule{p}, ConfigError);
  p = {};
  p.kind = SdeKind::kVe;
  p.sigma_min = 0.0;
  EXPECT_THROW(NoiseSchedule{p}, ConfigError);
  EXPECT_THROW(parse_sde_kind("cosine"), ConfigError);
}

TEST(Sde, TimeOutsideRangeIsRuntimeFailure) {
  const auto s = schedule_of(SdeKind::kVp);
  EXPECT_THROW(marginal_params(s, 0.0), RuntimeFailure);
  EXPECT_THROW(marginal_params(s, 1.5), RuntimeFailure);
  EXPECT_THROW(marginal_params(s, std::nan("")), RuntimeFailure);
}

TEST(Sde, DriftDiffusionVp) {
  const auto s = schedule_of(SdeKind::kVp);
  const Matrix x = Matrix::Ones(3, 2);
  const auto dd = drift_diffusion(s, x, 0.5);
  EXPECT_NEAR(dd.drift(0, 0), -0.5 * (0.1 + 0.5 * 19.9), 1e-12);
  EXPECT_NEAR(dd.diffusion, std::sqrt(0.1 + 0.5 * 19.9), 1e-12);
}

}  // namespace
}  // namespace u2ad
