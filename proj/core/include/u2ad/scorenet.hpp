#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "u2ad/autodiff.hpp"
#include "u2ad/rng.hpp"
#include "u2ad/sde.hpp"

namespace u2ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ScoreNetConfig {
  int layers = 3;         // K
  int d_model = 512;
  int heads = 8;
  int d_ff = 512;
  int window = 100;       // N
  int channels = 1;       // d
  double dropout = 0.0;
  // Divide the head output by sigma(t), so the network regresses unit-scale
  // noise instead of a score whose size grows like 1 / sigma.
  bool scale_by_sigma = true;

  void validate() const;
  bool operator==(const ScoreNetConfig&) const = default;
};

/// Per-layer row-stochastic N x N maps: psi from the attention branch, xi
/// from the cosine-similarity branch.
struct PathwayCharacteristics {
  std::vector<Matrix> psi;
  std::vector<Matrix> xi;
};

struct ScoreOutput {
  Matrix score;
  PathwayCharacteristics chars;
};

/// Upsilon[i][j] = <x_i, x_j> / (max(|x_i|, eps) * max(|x_j|, eps)).
Matrix cosine_similarity_matrix(const Matrix& x, double eps = 1e-8);

/// Dual-pathway score network s_theta(x(t), t).
class ScoreNet {
 public:
  /// `schedule` supplies sigma(t) for the output scaling.
  ScoreNet(const ScoreNetConfig& config, std::uint64_t seed, const NoiseSchedule& schedule = NoiseSchedule());

  /// Nodes produced by a differentiable forward pass.
  struct Trace {
    ad::Var score;
    std::vector<ad::Var> psi;
    std::vector<ad::Var> xi;
  };

  /// Records the forward pass on `tape`. Dropout is active only when
  /// `dropout_rng` is given.
  Trace forward(ad::Tape& tape, const Matrix& xt, double t, Rng* dropout_rng = nullptr) const;

  /// Inference pass (no recording, no dropout).
  ScoreOutput forward(const Matrix& xt, double t) const;

  /// Score only.
  Matrix score(const Matrix& xt, double t) const;

  /// Learned time embedding, length d_model.
  Vector embed_time(double t) const;

  const ScoreNetConfig& config() const { return config_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  ad::ParameterSet& parameters() { return params_; }
  const ad::ParameterSet& parameters() const { return params_; }

  void save(const std::filesystem::path& path) const;
  /// Replaces parameter values from a blob written by save(). Names and
  /// shapes must match this network exactly.
  void load(const std::filesystem::path& path);

 private:
  struct Attention {
    int wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct Layer {
    int mod_w, mod_b;
    Attention global;
    int local_in_w, local_in_b;
    Attention local;
    int xi_w, xi_b;
    int ff1_w, ff1_b, ff2_w, ff2_b;
  };

  Attention add_attention(const std::string& prefix, Rng& rng);
  ad::Var sinusoid(ad::Tape& tape, double t) const;
  ad::Var time_embedding(ad::Tape& tape, double t) const;
  // Returns the mixed output and the head-averaged attention weights.
  std::pair<ad::Var, ad::Var> attend(ad::Tape& tape, const Attention& a, ad::Var x,
                                     Rng* dropout_rng) const;

  ScoreNetConfig config_;
  NoiseSchedule schedule_;
  ad::ParameterSet params_;
  Matrix positional_;
  int in_w_, in_b_, t1_w_, t1_b_, t2_w_, t2_b_, out_w_, out_b_;
  std::vector<Layer> layers_;
};

}  // namespace u2ad
