#include "u2ad/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "u2ad/error.hpp"

namespace u2ad {

void SolverConfig::validate(const NoiseSchedule& schedule) const {
  if (!(t_end >= schedule.t_eps())) throw ConfigError("solver.t_end must be >= sde.t_eps");
  if (!(t_end < t_rec)) throw ConfigError("solver.t_end must be < solver.t_rec");
  if (!(t_rec <= NoiseSchedule::kHorizon)) throw ConfigError("solver.t_rec must be <= 1");
  if (!(rtol > 0.0 && atol > 0.0)) throw ConfigError("solver tolerances must be positive");
  if (max_steps < 1) throw ConfigError("solver.max_steps must be >= 1");
}

Matrix ode_rhs(const Matrix& x, double t, const ScoreFn& score, const NoiseSchedule& schedule) {
  const Matrix s = score(x, t);
  if (!s.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite score at t=" << t;
    throw RuntimeFailure(msg.str());
  }
  return drift_coefficient(schedule, t) * x - 0.5 * diffusion_squared(schedule, t) * s;
}

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// b - b_hat (difference between the 5th and embedded 4th order weights).
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 10.0;

double rms(const Matrix& m) { return std::sqrt(m.squaredNorm() / static_cast<double>(m.size())); }

[[noreturn]] void fail(const std::string& what, double t) {
  std::ostringstream msg;
  msg << what << " at t=" << t;
  throw RuntimeFailure(msg.str());
}

}  // namespace

DormandPrince45::DormandPrince45(double rtol, double atol, int max_steps)
    : rtol_(rtol), atol_(atol), max_steps_(max_steps) {
  if (!(rtol > 0.0 && atol > 0.0)) throw ConfigError("ODE tolerances must be positive");
  if (max_steps < 1) throw ConfigError("ODE max_steps must be >= 1");
}

double DormandPrince45::initial_step(const Rhs& f, double t0, const Matrix& y0, const Matrix& f0,
                                     double direction, double span) const {
  const Matrix scale = (atol_ + rtol_ * y0.array().abs()).matrix();
  const double d0 = rms(y0.cwiseQuotient(scale));
  const double d1 = rms(f0.cwiseQuotient(scale));
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);
  const Matrix y1 = y0 + direction * h0 * f0;
  const Matrix f1 = f(t0 + direction * h0, y1);
  const double d2 = rms((f1 - f0).cwiseQuotient(scale)) / h0;
  const double h1 = (d1 <= 1e-15 && d2 <= 1e-15) ? std::max(1e-6, h0 * 1e-3)
                                                 : std::pow(0.01 / std::max(d1, d2), 1.0 / 5.0);
  return std::min({100.0 * h0, h1, span});
}

Matrix DormandPrince45::integrate(const Rhs& f, const Matrix& y0, double t0, double t1,
                                  OdeStats* stats) const {
  OdeStats local;
  OdeStats& st = stats ? *stats : local;
  st = {};
  if (t0 == t1) return y0;
  const double direction = t1 > t0 ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);

  Matrix y = y0;
  double t = t0;
  Matrix k1 = f(t, y);
  ++st.evaluations;
  if (!k1.allFinite()) fail("non-finite derivative", t);
  double h = initial_step(f, t0, y0, k1, direction, span);
  ++st.evaluations;

  while (direction * (t1 - t) > 0.0) {
    if (st.accepted >= max_steps_) fail("ODE solver exceeded " + std::to_string(max_steps_) + " steps", t);
    const double min_step = 10.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(t), 1e-300);
    if (h < min_step) fail("ODE step size underflow", t);
    bool last = false;
    if (h >= direction * (t1 - t)) {
      h = direction * (t1 - t);
      last = true;
    }
    const double hs = direction * h;
    const Matrix k2 = f(t + c2 * hs, y + hs * (a21 * k1));
    const Matrix k3 = f(t + c3 * hs, y + hs * (a31 * k1 + a32 * k2));
    const Matrix k4 = f(t + c4 * hs, y + hs * (a41 * k1 + a42 * k2 + a43 * k3));
    const Matrix k5 = f(t + c5 * hs, y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Matrix k6 = f(t + hs, y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const Matrix y_new = y + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const double t_new = last ? t1 : t + hs;
    const Matrix k7 = f(t_new, y_new);
    st.evaluations += 6;
    if (!y_new.allFinite() || !k7.allFinite()) fail("non-finite ODE state", t_new);

    const Matrix err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const Matrix scale = (atol_ + rtol_ * y.array().abs().max(y_new.array().abs())).matrix();
    const double err_norm = rms(err.cwiseQuotient(scale));

    if (err_norm <= 1.0) {
      ++st.accepted;
      t = t_new;
      y = y_new;
      k1 = k7;  // first-same-as-last
      const double factor = err_norm == 0.0 ? kMaxFactor
                                            : std::min(kMaxFactor, kSafety * std::pow(err_norm, -0.2));
      h *= factor;
      if (last) break;
    } else {
      ++st.rejected;
      h *= std::max(kMinFactor, kSafety * std::pow(err_norm, -0.2));
    }
  }
  return y;
}

Reconstruction reconstruct_from(const Matrix& xt, const ScoreFn& score, const NoiseSchedule& schedule,
                                const SolverConfig& cfg) {
  cfg.validate(schedule);
  const DormandPrince45 solver(cfg.rtol, cfg.atol, cfg.max_steps);
  OdeStats stats;
  Reconstruction r;
  r.xt = xt;
  r.x_hat = solver.integrate(
      [&](double t, const Matrix& y) { return ode_rhs(y, t, score, schedule); }, xt, cfg.t_rec,
      cfg.t_end, &stats);
  r.n_steps = stats.accepted;
  return r;
}

Reconstruction reconstruct(const Matrix& x0, const ScoreFn& score, const NoiseSchedule& schedule,
                           const SolverConfig& cfg, Rng& rng) {
  if (!x0.allFinite()) throw DataError("reconstruct: non-finite input window");
  Matrix noise(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise(i) = rng.normal();
  const auto batch = perturb(schedule, x0, cfg.t_rec, noise);
  return reconstruct_from(batch.xt, score, schedule, cfg);
}

}  // namespace u2ad
