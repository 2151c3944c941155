#include "u2ad/objectives.hpp"

#include <cmath>

#include "u2ad/error.hpp"
#include "u2ad/rng.hpp"

namespace u2ad {

const char* to_string(GammaPhase phase) {
  switch (phase) {
    case GammaPhase::kMaximizeLocal: return "A";
    case GammaPhase::kMinimizeGlobal: return "B";
    case GammaPhase::kLiteral: return "literal";
  }
  return "unknown";
}

namespace {
void same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DataError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()) + ")");
  }
}
}  // namespace

Matrix dsm_target(const PerturbedBatch& batch) {
  const double sigma = batch.marginal.sigma;
  if (!(sigma > 0.0)) throw RuntimeFailure("denoising target undefined at sigma = 0");
  return -(batch.xt - batch.marginal.alpha * batch.x0) / (sigma * sigma);
}

double dsm_loss(const Matrix& score, const PerturbedBatch& batch) {
  const Matrix target = dsm_target(batch);
  same_shape(score, target, "dsm_loss");
  return (score - target).squaredNorm() / (2.0 * static_cast<double>(score.rows()));
}

PointwiseLoss vm_loss(const Matrix& score, const Center& center) {
  same_shape(score, center.c, "vm_loss");
  PointwiseLoss out;
  out.per_point = (score - center.c).rowwise().squaredNorm();
  out.mean = out.per_point.mean();
  return out;
}

PointwiseLoss rec_loss(const Matrix& x0, const Matrix& x_hat) {
  same_shape(x0, x_hat, "rec_loss");
  PointwiseLoss out;
  out.per_point = (x_hat - x0).rowwise().squaredNorm();
  out.mean = out.per_point.mean();
  return out;
}

namespace {
void check_stochastic(const Matrix& m, const char* what, std::size_t layer) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double s = m.row(r).sum();
    if (std::abs(s - 1.0) > 1e-5 || m.row(r).minCoeff() < 0.0) {
      throw DataError(std::string(what) + " layer " + std::to_string(layer) + " row " +
                      std::to_string(r) + " is not a probability vector (sum " + std::to_string(s) + ")");
    }
  }
}
}  // namespace

Vector contextual_gain(const PathwayCharacteristics& chars) {
  if (chars.psi.empty() || chars.psi.size() != chars.xi.size()) {
    throw DataError("contextual gain needs the same nonzero number of psi and xi layers");
  }
  const Eigen::Index n = chars.psi.front().rows();
  Vector gain = Vector::Zero(n);
  for (std::size_t k = 0; k < chars.psi.size(); ++k) {
    same_shape(chars.psi[k], chars.xi[k], "contextual_gain");
    check_stochastic(chars.psi[k], "psi", k);
    check_stochastic(chars.xi[k], "xi", k);
    const Eigen::ArrayXXd p = chars.xi[k].array().max(kKlFloor);
    const Eigen::ArrayXXd q = chars.psi[k].array().max(kKlFloor);
    gain += ((p - q) * (p.log() - q.log())).rowwise().sum().matrix();
  }
  return gain / static_cast<double>(chars.psi.size());
}

double total_loss(const LossComponents& parts, const LossWeights& w) {
  return parts.dsm + w.rec * parts.rec + w.vm * parts.vm - w.gamma * parts.gamma;
}

Center init_center(const ScoreNet& model, std::span<const TimeSeriesWindow> windows,
                   const NoiseSchedule& schedule, std::uint64_t seed, std::optional<double> t) {
  if (windows.empty()) throw DataError("init_center needs at least one window");
  const auto& cfg = model.config();
  Matrix sum = Matrix::Zero(cfg.window, cfg.channels);
  for (const auto& w : windows) {
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(w.start_index)));
    const double u = schedule.t_eps() + (NoiseSchedule::kHorizon - schedule.t_eps()) * rng.uniform_open_low();
    const double tw = t ? *t : u;
    Matrix noise(w.x0.rows(), w.x0.cols());
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise(i) = rng.normal();
    const auto batch = perturb(schedule, w.x0, tw, noise);
    sum += model.score(batch.xt, tw);
  }
  Center center{sum / static_cast<double>(windows.size())};
  for (Eigen::Index i = 0; i < center.c.size(); ++i) {
    double& v = center.c(i);
    if (std::abs(v) < 0.1) v = v < 0.0 ? -0.1 : 0.1;
  }
  return center;
}

namespace loss {

ad::Var dsm(ad::Var score, const PerturbedBatch& batch, double weight) {
  ad::Tape& tape = *score.tape();
  const ad::Var target = tape.constant(dsm_target(batch));
  const double n = static_cast<double>(score.rows());
  return ad::scale(ad::sum_all(ad::square(ad::sub(score, target))), weight / (2.0 * n));
}

ad::Var vm(ad::Var score, const Center& center) {
  const ad::Var c = score.tape()->constant(center.c);
  // mean over points of the row sums = sum / N
  return ad::scale(ad::sum_all(ad::square(ad::sub(score, c))), 1.0 / static_cast<double>(score.rows()));
}

ad::Var rec(ad::Var x_hat, const Matrix& x0) {
  const ad::Var target = x_hat.tape()->constant(x0);
  return ad::scale(ad::sum_all(ad::square(ad::sub(x_hat, target))), 1.0 / static_cast<double>(x_hat.rows()));
}

ad::Var gain(const std::vector<ad::Var>& psi, const std::vector<ad::Var>& xi, GammaPhase phase) {
  if (psi.empty() || psi.size() != xi.size()) throw DataError("gain: psi/xi layer mismatch");
  std::vector<ad::Var> per_layer;
  for (std::size_t k = 0; k < psi.size(); ++k) {
    ad::Var p = xi[k];
    ad::Var q = psi[k];
    if (phase == GammaPhase::kMaximizeLocal) q = ad::detach(q);
    if (phase == GammaPhase::kMinimizeGlobal) p = ad::detach(p);
    const ad::Var pc = ad::clamp_min(p, kKlFloor);
    const ad::Var qc = ad::clamp_min(q, kKlFloor);
    per_layer.push_back(ad::row_sums(ad::hadamard(ad::sub(pc, qc), ad::sub(ad::log(pc), ad::log(qc)))));
  }
  return per_layer.size() == 1 ? per_layer.front() : ad::mean_of(per_layer);
}

}  // namespace loss

}  // namespace u2ad
