#include "u2ad/scorenet.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "u2ad/error.hpp"

namespace u2ad {

using ad::Tape;
using ad::Var;

void ScoreNetConfig::validate() const {
  if (layers < 1) throw ConfigError("scorenet.layers must be >= 1");
  if (d_model < 2 || heads < 1 || d_model % heads != 0) {
    throw ConfigError("scorenet.d_model must be divisible by scorenet.heads");
  }
  if (d_ff < 1) throw ConfigError("scorenet.d_ff must be >= 1");
  if (window < 2) throw ConfigError("window length must be >= 2");
  if (channels < 1) throw ConfigError("channel count must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("scorenet.dropout must lie in [0, 1)");
}

namespace {

// Truncated normal (two standard deviations) with std 1/sqrt(fan_in).
Matrix init_weight(Rng& rng, Eigen::Index fan_in, Eigen::Index fan_out) {
  const double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    double v = rng.normal();
    while (std::abs(v) > 2.0) v = rng.normal();
    w(i) = std * v;
  }
  return w;
}

Matrix zeros(Eigen::Index r, Eigen::Index c) { return Matrix::Zero(r, c); }

void check_finite(const Var& v, int layer) {
  if (!v.value().allFinite()) {
    throw RuntimeFailure("non-finite activation in score network layer " + std::to_string(layer));
  }
}

}  // namespace

Matrix cosine_similarity_matrix(const Matrix& x, double eps) {
  const Eigen::VectorXd inv = x.rowwise().norm().cwiseMax(eps).cwiseInverse();
  const Matrix unit = inv.asDiagonal() * x;
  return unit * unit.transpose();
}

ScoreNet::Attention ScoreNet::add_attention(const std::string& prefix, Rng& rng) {
  const Eigen::Index dm = config_.d_model;
  Attention a{};
  a.wq = params_.add(prefix + ".wq", init_weight(rng, dm, dm));
  a.bq = params_.add(prefix + ".bq", zeros(1, dm));
  a.wk = params_.add(prefix + ".wk", init_weight(rng, dm, dm));
  a.bk = params_.add(prefix + ".bk", zeros(1, dm));
  a.wv = params_.add(prefix + ".wv", init_weight(rng, dm, dm));
  a.bv = params_.add(prefix + ".bv", zeros(1, dm));
  a.wo = params_.add(prefix + ".wo", init_weight(rng, dm, dm));
  a.bo = params_.add(prefix + ".bo", zeros(1, dm));
  return a;
}

ScoreNet::ScoreNet(const ScoreNetConfig& config, std::uint64_t seed, const NoiseSchedule& schedule)
    : config_(config), schedule_(schedule) {
  config_.validate();
  Rng rng(seed);
  const Eigen::Index dm = config_.d_model;
  const Eigen::Index n = config_.window;

  in_w_ = params_.add("input.w", init_weight(rng, config_.channels, dm));
  in_b_ = params_.add("input.b", zeros(1, dm));
  t1_w_ = params_.add("time.w1", init_weight(rng, dm, dm));
  t1_b_ = params_.add("time.b1", zeros(1, dm));
  t2_w_ = params_.add("time.w2", init_weight(rng, dm, dm));
  t2_b_ = params_.add("time.b2", zeros(1, dm));
  for (int k = 0; k < config_.layers; ++k) {
    const std::string p = "layer" + std::to_string(k);
    Layer l{};
    l.mod_w = params_.add(p + ".mod.w", init_weight(rng, dm, 2 * dm) * 0.1);
    l.mod_b = params_.add(p + ".mod.b", zeros(1, 2 * dm));
    l.global = add_attention(p + ".global", rng);
    l.local_in_w = params_.add(p + ".local.in.w", init_weight(rng, n, dm));
    l.local_in_b = params_.add(p + ".local.in.b", zeros(1, dm));
    l.local = add_attention(p + ".local", rng);
    l.xi_w = params_.add(p + ".xi.w", init_weight(rng, dm, n));
    l.xi_b = params_.add(p + ".xi.b", zeros(1, n));
    l.ff1_w = params_.add(p + ".ff1.w", init_weight(rng, dm, config_.d_ff));
    l.ff1_b = params_.add(p + ".ff1.b", zeros(1, config_.d_ff));
    l.ff2_w = params_.add(p + ".ff2.w", init_weight(rng, config_.d_ff, dm));
    l.ff2_b = params_.add(p + ".ff2.b", zeros(1, dm));
    layers_.push_back(l);
  }
  // Zero head: the score field starts at 0.
  out_w_ = params_.add("head.w", zeros(dm, config_.channels));
  out_b_ = params_.add("head.b", zeros(1, config_.channels));

  positional_.resize(n, dm);
  for (Eigen::Index pos = 0; pos < n; ++pos) {
    for (Eigen::Index i = 0; i < dm; i += 2) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(dm));
      positional_(pos, i) = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < dm) positional_(pos, i + 1) = std::cos(static_cast<double>(pos) * freq);
    }
  }
}

Var ScoreNet::sinusoid(Tape& tape, double t) const {
  const Eigen::Index dm = config_.d_model;
  const Eigen::Index half = dm / 2;
  Matrix e = Matrix::Zero(1, dm);
  const double scaled = 1000.0 * t;
  for (Eigen::Index i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                 static_cast<double>(std::max<Eigen::Index>(1, half - 1)));
    e(0, i) = std::sin(scaled * freq);
    e(0, half + i) = std::cos(scaled * freq);
  }
  return tape.constant(std::move(e));
}

Var ScoreNet::time_embedding(Tape& tape, double t) const {
  Var h = ad::add_row(ad::matmul(sinusoid(tape, t), tape.parameter(params_, t1_w_)),
                      tape.parameter(params_, t1_b_));
  h = ad::silu(h);
  return ad::add_row(ad::matmul(h, tape.parameter(params_, t2_w_)), tape.parameter(params_, t2_b_));
}

Vector ScoreNet::embed_time(double t) const {
  Tape tape(false);
  return time_embedding(tape, t).value().row(0).transpose();
}

std::pair<Var, Var> ScoreNet::attend(Tape& tape, const Attention& a, Var x, Rng* dropout_rng) const {
  auto linear = [&](Var in, int w, int b) {
    return ad::add_row(ad::matmul(in, tape.parameter(params_, w)), tape.parameter(params_, b));
  };
  const Var q = linear(x, a.wq, a.bq);
  const Var k = linear(x, a.wk, a.bk);
  const Var v = linear(x, a.wv, a.bv);
  const int heads = config_.heads;
  const Eigen::Index dh = config_.d_model / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> weights;
  std::vector<Var> mixed;
  for (int h = 0; h < heads; ++h) {
    const Var qh = ad::col_block(q, h * dh, dh);
    const Var kh = ad::col_block(k, h * dh, dh);
    const Var vh = ad::col_block(v, h * dh, dh);
    const Var w = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), scale));
    weights.push_back(w);
    const Var wd = dropout_rng ? ad::dropout(w, config_.dropout, *dropout_rng) : w;
    mixed.push_back(ad::matmul(wd, vh));
  }
  const Var cat = heads == 1 ? mixed.front() : ad::hcat(mixed);
  const Var avg = heads == 1 ? weights.front() : ad::mean_of(weights);
  return {linear(cat, a.wo, a.bo), avg};
}

ScoreNet::Trace ScoreNet::forward(Tape& tape, const Matrix& xt, double t, Rng* dropout_rng) const {
  if (xt.rows() != config_.window || xt.cols() != config_.channels) {
    throw DataError("score network expects a " + std::to_string(config_.window) + "x" +
                    std::to_string(config_.channels) + " window, got " + std::to_string(xt.rows()) +
                    "x" + std::to_string(xt.cols()));
  }
  auto p = [&](int id) { return tape.parameter(params_, id); };
  auto linear = [&](Var in, int w, int b) { return ad::add_row(ad::matmul(in, p(w)), p(b)); };
  auto drop = [&](Var v) { return dropout_rng ? ad::dropout(v, config_.dropout, *dropout_rng) : v; };
  const Eigen::Index dm = config_.d_model;

  const Var temb = time_embedding(tape, t);
  const Var temb_act = ad::silu(temb);
  Var h = linear(tape.constant(xt), in_w_, in_b_);
  h = ad::add(h, tape.constant(positional_));
  h = ad::add_row(h, temb);
  check_finite(h, 0);

  Trace trace;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const Layer& l = layers_[k];
    const Var mod = linear(temb_act, l.mod_w, l.mod_b);
    const Var scale = ad::add_scalar(ad::col_block(mod, 0, dm), 1.0);
    const Var shift = ad::col_block(mod, dm, dm);
    const Var a = ad::add_row(ad::mul_row(ad::layer_norm_rows(h), scale), shift);

    auto [global_out, psi] = attend(tape, l.global, a, dropout_rng);

    // Local pathway: rows of the cosine-similarity matrix are the tokens.
    const Var unit = ad::row_normalize(a, 1e-8);
    const Var upsilon = ad::matmul_nt(unit, unit);
    const Var tokens = linear(upsilon, l.local_in_w, l.local_in_b);
    auto [local_out, local_weights] = attend(tape, l.local, tokens, dropout_rng);
    (void)local_weights;

    h = ad::add(ad::add(h, drop(global_out)), drop(local_out));
    const Var xi = ad::softmax_rows(linear(ad::layer_norm_rows(h), l.xi_w, l.xi_b));

    const Var ff = linear(ad::gelu(linear(ad::layer_norm_rows(h), l.ff1_w, l.ff1_b)), l.ff2_w, l.ff2_b);
    h = ad::add(h, drop(ff));
    check_finite(h, static_cast<int>(k) + 1);

    trace.psi.push_back(psi);
    trace.xi.push_back(xi);
  }
  trace.score = linear(h, out_w_, out_b_);
  if (config_.scale_by_sigma) {
    const double sigma = marginal_params(schedule_, t).sigma;
    if (!(sigma > 0.0)) throw DataError("score network output scaling needs sigma(t) > 0, got t=" + std::to_string(t));
    trace.score = ad::scale(trace.score, 1.0 / sigma);
  }
  check_finite(trace.score, static_cast<int>(layers_.size()) + 1);
  return trace;
}

ScoreOutput ScoreNet::forward(const Matrix& xt, double t) const {
  Tape tape(false);
  const auto trace = forward(tape, xt, t);
  ScoreOutput out;
  out.score = trace.score.value();
  for (const auto& v : trace.psi) out.chars.psi.push_back(v.value());
  for (const auto& v : trace.xi) out.chars.xi.push_back(v.value());
  return out;
}

Matrix ScoreNet::score(const Matrix& xt, double t) const {
  Tape tape(false);
  return forward(tape, xt, t).score.value();
}

// Blob layout: magic, count, then per parameter: name length, name, rows,
// cols, row-major doubles. Integers are uint64 little-endian.
namespace {
constexpr char kMagic[8] = {'U', '2', 'A', 'D', 'P', 'R', 'M', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated parameter blob");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
}  // namespace

void ScoreNet::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out.write(kMagic, 8);
  put_u64(out, params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto id = static_cast<int>(i);
    const auto& name = params_.name(id);
    const auto& m = params_.value(id);
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) put_u64(out, std::bit_cast<std::uint64_t>(m(r, c)));
  }
}

void ScoreNet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError(path.string() + " is not a parameter blob");
  }
  const auto count = get_u64(in);
  if (count != params_.size()) throw DataError("checkpoint parameter count does not match the network");
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = get_u64(in);
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    const auto id = static_cast<int>(i);
    if (name != params_.name(id)) {
      throw DataError("checkpoint parameter '" + name + "' does not match '" + params_.name(id) + "'");
    }
    const auto rows = static_cast<Eigen::Index>(get_u64(in));
    const auto cols = static_cast<Eigen::Index>(get_u64(in));
    auto& m = params_.value(id);
    if (rows != m.rows() || cols != m.cols()) throw DataError("checkpoint shape mismatch for " + name);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = std::bit_cast<double>(get_u64(in));
  }
}

}  // namespace u2ad
