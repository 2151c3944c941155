#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "gradcheck.hpp"
#include "u2ad/autodiff.hpp"

namespace u2ad {
namespace {

using ad::Matrix;
using ad::Var;

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(lo, hi);
  return m;
}

struct OpCase {
  std::string name;
  // Shapes of the two inputs and the value range of their entries.
  Eigen::Index ar, ac, br, bc;
  double lo, hi;
  std::function<Var(Var, Var)> op;
};

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const auto& c = GetParam();
  Rng rng(42);
  ad::ParameterSet params;
  const int a = params.add("a", random_matrix(rng, c.ar, c.ac, c.lo, c.hi));
  const int b = params.add("b", random_matrix(rng, c.br, c.bc, c.lo, c.hi));
  Matrix probe;
  const auto loss = [&](ad::Gradients* g) {
    ad::Tape tape(g != nullptr);
    const Var out = c.op(tape.parameter(params, a), tape.parameter(params, b));
    if (probe.size() == 0) {
      Rng prng(7);
      probe = random_matrix(prng, out.rows(), out.cols());
    }
    const Var root = ad::sum_all(ad::hadamard(out, tape.constant(probe)));
    if (g) tape.backward(root, *g);
    return root.scalar();
  };
  const auto r = testing::check_gradient(params, loss, 200, 3);
  EXPECT_LT(r.rel_error, 1e-6) << c.name << " norm " << r.norm;
}

std::vector<OpCase> op_cases() {
  return {
      {"matmul", 3, 4, 4, 2, -1, 1, [](Var a, Var b) { return ad::matmul(a, b); }},
      {"matmul_nt", 3, 4, 5, 4, -1, 1, [](Var a, Var b) { return ad::matmul_nt(a, b); }},
      {"add", 3, 3, 3, 3, -1, 1, [](Var a, Var b) { return ad::add(a, b); }},
      {"sub", 3, 3, 3, 3, -1, 1, [](Var a, Var b) { return ad::sub(a, b); }},
      {"hadamard", 3, 3, 3, 3, -1, 1, [](Var a, Var b) { return ad::hadamard(a, b); }},
      {"scale", 2, 3, 1, 1, -1, 1, [](Var a, Var) { return ad::scale(a, -2.5); }},
      {"add_scalar", 2, 3, 1, 1, -1, 1, [](Var a, Var) { return ad::add_scalar(a, 0.7); }},
      {"add_row", 4, 3, 1, 3, -1, 1, [](Var a, Var b) { return ad::add_row(a, b); }},
      {"mul_row", 4, 3, 1, 3, -1, 1, [](Var a, Var b) { return ad::mul_row(a, b); }},
      {"transpose", 2, 5, 1, 1, -1, 1, [](Var a, Var) { return ad::transpose(a); }},
      {"softmax_rows", 4, 5, 1, 1, -2, 2, [](Var a, Var) { return ad::softmax_rows(a); }},
      {"layer_norm_rows", 4, 6, 1, 1, -2, 2, [](Var a, Var) { return ad::layer_norm_rows(a); }},
      {"row_normalize", 4, 3, 1, 1, -2, 2, [](Var a, Var) { return ad::row_normalize(a, 1e-8); }},
      {"gelu", 3, 4, 1, 1, -3, 3, [](Var a, Var) { return ad::gelu(a); }},
      {"silu", 3, 4, 1, 1, -3, 3, [](Var a, Var) { return ad::silu(a); }},
      {"exp", 3, 4, 1, 1, -1, 1, [](Var a, Var) { return ad::exp(a); }},
      {"log", 3, 4, 1, 1, 0.2, 2, [](Var a, Var) { return ad::log(a); }},
      {"square", 3, 4, 1, 1, -1, 1, [](Var a, Var) { return ad::square(a); }},
      {"clamp_min", 3, 4, 1, 1, 0.5, 1, [](Var a, Var) { return ad::clamp_min(a, 0.1); }},
      {"sum_all", 3, 4, 1, 1, -1, 1, [](Var a, Var) { return ad::sum_all(a); }},
      {"mean_all", 3, 4, 1, 1, -1, 1, [](Var a, Var) { return ad::mean_all(a); }},
      {"row_sums", 3, 4, 1, 1, -1, 1, [](Var a, Var) { return ad::row_sums(a); }},
      {"col_block", 3, 6, 1, 1, -1, 1, [](Var a, Var) { return ad::col_block(a, 2, 3); }},
      {"hcat", 3, 2, 3, 4, -1, 1, [](Var a, Var b) { return ad::hcat({a, b, a}); }},
      {"mean_of", 3, 3, 3, 3, -1, 1, [](Var a, Var b) { return ad::mean_of({a, b, b}); }},
      {"operators", 2, 2, 2, 2, -1, 1, [](Var a, Var b) { return 2.0 * (a + b) - a; }},
      {"dropout", 4, 4, 1, 1, -1, 1,
       [](Var a, Var) {
         Rng rng(99);
         return ad::dropout(a, 0.3, rng);
       }},
      {"chain", 4, 3, 3, 5, -1, 1,
       [](Var a, Var b) { return ad::softmax_rows(ad::layer_norm_rows(ad::gelu(ad::matmul(a, b)))); }},
  };
}

INSTANTIATE_TEST_SUITE_P(Ops, OpGradient, ::testing::ValuesIn(op_cases()),
                         [](const auto& info) { return info.param.name; });

TEST(Autodiff, DetachBlocksGradient) {
  ad::ParameterSet params;
  const int a = params.add("a", Matrix::Constant(2, 2, 1.5));
  ad::Tape tape;
  const Var x = tape.parameter(params, a);
  const Var root = ad::sum_all(ad::add(ad::square(ad::detach(x)), x));
  ad::Gradients g = params.zeros_like();
  tape.backward(root, g);
  EXPECT_TRUE(g[0].isApprox(Matrix::Ones(2, 2)));
}

TEST(Autodiff, GradientsAccumulateAcrossBackwardCalls) {
  ad::ParameterSet params;
  const int a = params.add("a", Matrix::Constant(1, 3, 2.0));
  ad::Gradients g = params.zeros_like();
  for (int k = 0; k < 2; ++k) {
    ad::Tape tape;
    tape.backward(ad::sum_all(ad::square(tape.parameter(params, a))), g);
  }
  EXPECT_TRUE(g[0].isApprox(Matrix::Constant(1, 3, 8.0)));
}

TEST(Autodiff, SharedNodeReceivesBothPaths) {
  ad::ParameterSet params;
  const int a = params.add("a", Matrix::Constant(1, 1, 3.0));
  ad::Tape tape;
  const Var x = tape.parameter(params, a);
  const Var root = ad::sum_all(ad::hadamard(x, x));
  ad::Gradients g = params.zeros_like();
  tape.backward(root, g);
  EXPECT_DOUBLE_EQ(g[0](0, 0), 6.0);
}

TEST(Autodiff, ForwardValues) {
  ad::Tape tape(false);
  Matrix m(1, 3);
  m << 1, 2, 3;
  const Var x = tape.constant(m);
  const Matrix sm = ad::softmax_rows(x).value();
  EXPECT_NEAR(sm.sum(), 1.0, 1e-15);
  EXPECT_NEAR(sm(0, 2) / sm(0, 1), std::exp(1.0), 1e-12);
  const Matrix ln = ad::layer_norm_rows(x, 0.0).value();
  EXPECT_NEAR(ln.mean(), 0.0, 1e-15);
  EXPECT_NEAR(ln.squaredNorm() / 3, 1.0, 1e-12);
  EXPECT_NEAR(ad::row_normalize(x, 1e-8).value().norm(), 1.0, 1e-15);
  EXPECT_NEAR(ad::gelu(tape.constant(Matrix::Zero(1, 1))).scalar(), 0.0, 1e-15);
  EXPECT_NEAR(ad::silu(tape.constant(Matrix::Constant(1, 1, 1.0))).scalar(), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(Autodiff, DropoutZeroIsIdentity) {
  ad::Tape tape(false);
  Rng rng(1);
  const Matrix m = Matrix::Constant(3, 3, 2.0);
  EXPECT_EQ(ad::dropout(tape.constant(m), 0.0, rng).value(), m);
}

TEST(Autodiff, DropoutPreservesExpectation) {
  ad::Tape tape(false);
  Rng rng(1);
  const Matrix m = Matrix::Ones(200, 200);
  const Matrix d = ad::dropout(tape.constant(m), 0.25, rng).value();
  EXPECT_NEAR(d.mean(), 1.0, 0.02);
  const double kept = (d.array() > 0).cast<double>().mean();
  EXPECT_NEAR(kept, 0.75, 0.01);
}

TEST(Autodiff, ParameterSetLookup) {
  ad::ParameterSet params;
  params.add("w", Matrix::Zero(2, 3));
  params.add("b", Matrix::Zero(1, 3));
  EXPECT_EQ(params.find("b"), 1);
  EXPECT_EQ(params.find("missing"), -1);
  EXPECT_EQ(params.scalar_count(), 9u);
  EXPECT_EQ(params.zeros_like()[0].rows(), 2);
}

}  // namespace
}  // namespace u2ad
