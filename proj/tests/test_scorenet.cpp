#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "u2ad/error.hpp"
#include "u2ad/objectives.hpp"
#include "u2ad/scorenet.hpp"

namespace u2ad {
namespace {

ScoreNetConfig small_config() {
  ScoreNetConfig c;
  c.layers = 2;
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 16;
  c.window = 8;
  c.channels = 3;
  return c;
}

Matrix random_input(std::uint64_t seed, Eigen::Index n, Eigen::Index d) {
  Rng rng(seed);
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
  return x;
}

// Moves every parameter off its initial value so the head is not zero.
void jitter(ScoreNet& net, std::uint64_t seed, double scale = 0.2) {
  Rng rng(seed);
  auto& p = net.parameters();
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& m = p.value(static_cast<int>(i));
    for (Eigen::Index j = 0; j < m.size(); ++j) m(j) += scale * rng.normal();
  }
}

TEST(CosineSimilarity, HandCases) {
  Matrix x(2, 2);
  x << 1, 0, 0, 1;
  EXPECT_NEAR(cosine_similarity_matrix(x)(0, 1), 0.0, 1e-15);
  x << 1, 0, 1, 1;
  EXPECT_NEAR(cosine_similarity_matrix(x)(0, 1), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(cosine_similarity_matrix(x)(1, 1), 1.0, 1e-12);
}

TEST(CosineSimilarity, ZeroRowIsGuarded) {
  Matrix x = Matrix::Zero(2, 3);
  x(1, 0) = 2.0;
  const Matrix u = cosine_similarity_matrix(x);
  EXPECT_TRUE(u.allFinite());
  EXPECT_EQ(u(0, 1), 0.0);
}

TEST(ScoreNet, OutputShapeAndStochasticMaps) {
  ScoreNet net(small_config(), 1);
  jitter(net, 2);
  for (double t : {1e-3, 0.3, 1.0}) {
    const auto out = net.forward(random_input(3, 8, 3), t);
    EXPECT_EQ(out.score.rows(), 8);
    EXPECT_EQ(out.score.cols(), 3);
    ASSERT_EQ(out.chars.psi.size(), 2u);
    ASSERT_EQ(out.chars.xi.size(), 2u);
    for (int k = 0; k < 2; ++k) {
      for (const Matrix* m : {&out.chars.psi[k], &out.chars.xi[k]}) {
        EXPECT_EQ(m->rows(), 8);
        EXPECT_EQ(m->cols(), 8);
        EXPECT_GE(m->minCoeff(), 0.0);
        EXPECT_LT((m->rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-5);
      }
    }
  }
}

TEST(ScoreNet, ZeroHeadGivesZeroScore) {
  const ScoreNet net(small_config(), 4);
  EXPECT_EQ(net.score(random_input(1, 8, 3), 0.5).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ScoreNet, SameSeedSameNetwork) {
  ScoreNet a(small_config(), 9), b(small_config(), 9), c(small_config(), 10);
  jitter(a, 1);
  jitter(b, 1);
  jitter(c, 1);
  const Matrix x = random_input(5, 8, 3);
  EXPECT_EQ(a.score(x, 0.4), b.score(x, 0.4));
  EXPECT_NE(a.score(x, 0.4), c.score(x, 0.4));
}

TEST(ScoreNet, ChannelPermutationEquivariance) {
  ScoreNet net(small_config(), 12);
  jitter(net, 3);
  ScoreNet permuted = net;
  const std::vector<int> perm{2, 0, 1};
  auto& p = permuted.parameters();
  const auto& src = net.parameters();
  const int in_w = p.find("input.w");
  const int head_w = p.find("head.w");
  const int head_b = p.find("head.b");
  ASSERT_GE(in_w, 0);
  ASSERT_GE(head_w, 0);
  for (int c = 0; c < 3; ++c) {
    p.value(in_w).row(c) = src.value(in_w).row(perm[c]);
    p.value(head_w).col(c) = src.value(head_w).col(perm[c]);
    p.value(head_b).col(c) = src.value(head_b).col(perm[c]);
  }
  const Matrix x = random_input(7, 8, 3);
  Matrix xp(8, 3);
  for (int c = 0; c < 3; ++c) xp.col(c) = x.col(perm[c]);
  const Matrix s = net.score(x, 0.3);
  const Matrix sp = permuted.score(xp, 0.3);
  for (int c = 0; c < 3; ++c) EXPECT_LT((sp.col(c) - s.col(perm[c])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ScoreNet, SigmaScalingDividesByMarginalStd) {
  auto cfg = small_config();
  ScoreNet scaled(cfg, 5);
  cfg.scale_by_sigma = false;
  ScoreNet plain(cfg, 5);
  jitter(scaled, 8);
  jitter(plain, 8);
  const Matrix x = random_input(2, 8, 3);
  for (double t : {0.01, 0.5}) {
    const double sigma = marginal_params(NoiseSchedule(), t).sigma;
    EXPECT_TRUE(scaled.score(x, t).isApprox(plain.score(x, t) / sigma, 1e-12));
  }
}

TEST(ScoreNet, TimeEmbeddingDependsOnTime) {
  ScoreNet net(small_config(), 6);
  jitter(net, 1);
  const Vector a = net.embed_time(0.1);
  const Vector b = net.embed_time(0.2);
  EXPECT_EQ(a.size(), 16);
  EXPECT_GT((a - b).norm(), 1e-6);
  EXPECT_EQ(a, net.embed_time(0.1));
}

TEST(ScoreNet, ShapeMismatchIsDataError) {
  const ScoreNet net(small_config(), 1);
  EXPECT_THROW(net.score(Matrix::Zero(7, 3), 0.5), DataError);
  EXPECT_THROW(net.score(Matrix::Zero(8, 2), 0.5), DataError);
}

TEST(ScoreNet, NonFiniteInputIsReportedWithLayer) {
  const ScoreNet net(small_config(), 1);
  Matrix x = Matrix::Zero(8, 3);
  x(0, 0) = std::nan("");
  try {
    net.score(x, 0.5);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("layer"), std::string::npos) << e.what();
  }
}

TEST(ScoreNet, InvalidConfigIsConfigError) {
  auto c = small_config();
  c.heads = 3;  // 16 is not divisible by 3
  EXPECT_THROW(ScoreNet(c, 1), ConfigError);
  c = small_config();
  c.layers = 0;
  EXPECT_THROW(ScoreNet(c, 1), ConfigError);
}

TEST(ScoreNet, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "u2ad_scorenet_test";
  std::filesystem::create_directories(dir);
  ScoreNet a(small_config(), 1);
  jitter(a, 4);
  a.save(dir / "p.bin");
  ScoreNet b(small_config(), 2);
  b.load(dir / "p.bin");
  const Matrix x = random_input(3, 8, 3);
  EXPECT_EQ(a.score(x, 0.2), b.score(x, 0.2));

  auto other = small_config();
  other.d_model = 8;
  ScoreNet c(other, 1);
  EXPECT_THROW(c.load(dir / "p.bin"), DataError);
  EXPECT_THROW(c.load(dir / "missing.bin"), DataError);
  std::filesystem::remove_all(dir);
}

TEST(ScoreNet, GradientMatchesFiniteDifferences) {
  ScoreNetConfig cfg = small_config();
  cfg.channels = 2;
  ScoreNet net(cfg, 3);
  jitter(net, 5, 0.3);
  const Matrix x = random_input(4, 8, 2);
  const Matrix probe = random_input(5, 8, 2);
  const auto loss = [&](ad::Gradients* g) {
    ad::Tape tape(g != nullptr);
    const auto tr = net.forward(tape, x, 0.3);
    ad::Var root = ad::sum_all(ad::hadamard(tr.score, tape.constant(probe)));
    root = ad::add(root, ad::mean_all(loss::gain(tr.psi, tr.xi, GammaPhase::kLiteral)));
    if (g) tape.backward(root, *g);
    return root.scalar();
  };
  const auto r = testing::check_gradient(net.parameters(), loss, 300, 11);
  EXPECT_LT(r.rel_error, 1e-4) << "over " << r.coordinates << " coordinates";
}

}  // namespace
}  // namespace u2ad
