#include "u2ad/sde.hpp"

#include <cmath>

#include "u2ad/error.hpp"

namespace u2ad {

SdeKind parse_sde_kind(const std::string& name) {
  if (name == "vp") return SdeKind::kVp;
  if (name == "subvp") return SdeKind::kSubVp;
  if (name == "ve") return SdeKind::kVe;
  throw ConfigError("unknown sde.kind '" + name + "' (expected vp, subvp or ve)");
}

const char* to_string(SdeKind kind) {
  switch (kind) {
    case SdeKind::kVp: return "vp";
    case SdeKind::kSubVp: return "subvp";
    case SdeKind::kVe: return "ve";
  }
  return "unknown";
}

NoiseSchedule::NoiseSchedule(const Params& params) : params_(params) {
  if (!(params.t_eps > 0.0 && params.t_eps < kHorizon)) {
    throw ConfigError("sde.t_eps must lie in (0, 1)");
  }
  if (params.kind == SdeKind::kVe) {
    if (!(params.sigma_min > 0.0 && params.sigma_min < params.sigma_max)) {
      throw ConfigError("sde requires 0 < sigma_min < sigma_max");
    }
  } else if (!(params.beta_min >= 0.0 && params.beta_min < params.beta_max)) {
    throw ConfigError("sde requires 0 <= beta_min < beta_max");
  }
}

namespace {
void check_time(double t, double lo, bool open_low) {
  const bool ok = (open_low ? t > lo : t >= lo) && t <= NoiseSchedule::kHorizon;
  if (!ok || !std::isfinite(t)) {
    throw RuntimeFailure("time " + std::to_string(t) + " outside the schedule range");
  }
}
}  // namespace

double NoiseSchedule::beta(double t) const {
  if (params_.kind == SdeKind::kVe) throw RuntimeFailure("beta(t) is undefined for the VE schedule");
  check_time(t, 0.0, false);
  return params_.beta_min + t * (params_.beta_max - params_.beta_min) / kHorizon;
}

double NoiseSchedule::beta_integral(double t) const {
  if (params_.kind == SdeKind::kVe) throw RuntimeFailure("beta(t) is undefined for the VE schedule");
  return params_.beta_min * t + 0.5 * t * t * (params_.beta_max - params_.beta_min) / kHorizon;
}

MarginalParams marginal_params(const NoiseSchedule& schedule, double t) {
  check_time(t, 0.0, true);
  const auto& p = schedule.params();
  MarginalParams m;
  switch (p.kind) {
    case SdeKind::kVp: {
      const double b = schedule.beta_integral(t);
      m.alpha = std::exp(-0.5 * b);
      // 1 - exp(-B) via expm1 keeps sigma accurate for small t.
      m.sigma = std::sqrt(-std::expm1(-b));
      break;
    }
    case SdeKind::kSubVp: {
      const double b = schedule.beta_integral(t);
      m.alpha = std::exp(-0.5 * b);
      m.sigma = -std::expm1(-b);
      break;
    }
    case SdeKind::kVe:
      m.alpha = 1.0;
      m.sigma = p.sigma_min * std::pow(p.sigma_max / p.sigma_min, t);
      break;
  }
  return m;
}

PerturbedBatch perturb(const NoiseSchedule& schedule, const Matrix& x0, double t,
                       const Matrix& noise) {
  if (noise.rows() != x0.rows() || noise.cols() != x0.cols()) {
    throw DataError("perturb: noise shape does not match x0");
  }
  PerturbedBatch b;
  b.marginal = marginal_params(schedule, t);
  b.x0 = x0;
  b.t = t;
  b.noise = noise;
  b.xt = b.marginal.alpha * x0 + b.marginal.sigma * noise;
  return b;
}

double drift_coefficient(const NoiseSchedule& schedule, double t) {
  if (schedule.kind() == SdeKind::kVe) {
    check_time(t, 0.0, false);
    return 0.0;
  }
  return -0.5 * schedule.beta(t);
}

double diffusion_squared(const NoiseSchedule& schedule, double t) {
  const auto& p = schedule.params();
  switch (p.kind) {
    case SdeKind::kVp:
      return schedule.beta(t);
    case SdeKind::kSubVp:
      return schedule.beta(t) * -std::expm1(-2.0 * schedule.beta_integral(t));
    case SdeKind::kVe: {
      check_time(t, 0.0, false);
      const double s = p.sigma_min * std::pow(p.sigma_max / p.sigma_min, t);
      return s * s * 2.0 * std::log(p.sigma_max / p.sigma_min);
    }
  }
  return 0.0;
}

DriftDiffusion drift_diffusion(const NoiseSchedule& schedule, const Matrix& x, double t) {
  DriftDiffusion out;
  out.drift = drift_coefficient(schedule, t) * x;
  out.diffusion = std::sqrt(diffusion_squared(schedule, t));
  return out;
}

}  // namespace u2ad
