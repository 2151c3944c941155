#include "u2ad/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace u2ad::ad {

int ParameterSet::add(std::string name, Matrix init) {
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return static_cast<int>(values_.size() - 1);
}

int ParameterSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return static_cast<int>(i);
  return -1;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

std::vector<Matrix> ParameterSet::zeros_like() const {
  std::vector<Matrix> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(Matrix::Zero(v.rows(), v.cols()));
  return out;
}

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, -1, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(const ParameterSet& params, int id) {
  nodes_.push_back(Node{params.value(id), {}, {}, id, record_});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  if (record_) {
    for (const auto& v : inputs) needs = needs || requires_grad(v.id());
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, -1, needs});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::push(Matrix value, const std::vector<Var>& inputs, Backward backward) {
  bool needs = false;
  if (record_) {
    for (const auto& v : inputs) needs = needs || requires_grad(v.id());
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, -1, needs});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(Var root, Gradients& grads) {
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  if (root.tape() != this || root.rows() != 1 || root.cols() != 1) {
    throw std::logic_error("backward root must be a 1x1 node of this tape");
  }
  if (!requires_grad(root.id())) return;
  nodes_[static_cast<std::size_t>(root.id())].grad = Matrix::Ones(1, 1);
  for (int i = root.id(); i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.param_id >= 0) {
      grads[static_cast<std::size_t>(n.param_id)] += n.grad;
    } else if (n.backward) {
      // Move the gradient out: the closure writes into other nodes only.
      const Matrix g = std::move(n.grad);
      n.backward(*this, n.value, g);
    }
  }
}

namespace {
void same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}
}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() * b.value().transpose(), {a, b},
                        [ia, ib](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
                          if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
                          if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
                        });
}

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var hadamard(Var a, Var b) {
  same_shape(a, b, "hadamard");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value().cwiseProduct(b.value()), {a, b},
                        [ia, ib](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
                          if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                          if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                        });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape()->push(s * a.value(), {a}, [ia, s](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
    t.accumulate(ia, s * g);
  });
}

Var add_scalar(Var a, double s) {
  const int ia = a.id();
  return a.tape()->push((a.value().array() + s).matrix(), {a},
                        [ia](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) { t.accumulate(ia, g); });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  const int ia = a.id(), ir = row.id();
  Matrix v = a.value().rowwise() + row.value().row(0);
  return a.tape()->push(std::move(v), {a, row}, [ia, ir](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

Var mul_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("mul_row: shape mismatch");
  const int ia = a.id(), ir = row.id();
  Matrix v = (a.value().array().rowwise() * row.value().row(0).array()).matrix();
  return a.tape()->push(std::move(v), {a, row}, [ia, ir](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
    if (t.requires_grad(ia)) {
      t.accumulate(ia, (g.array().rowwise() * t.value(ir).row(0).array()).matrix());
    }
    if (t.requires_grad(ir)) t.accumulate(ir, g.cwiseProduct(t.value(ia)).colwise().sum());
  });
}

Var transpose(Var a) {
  const int ia = a.id();
  return a.tape()->push(a.value().transpose(), {a},
                        [ia](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) { t.accumulate(ia, g.transpose()); });
}

Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  const int ia = a.id();
  return a.tape()->push(std::move(y), {a}, [ia](Tape& t, const Matrix& out, const Matrix& g) {
    const Eigen::VectorXd dots = g.cwiseProduct(out).rowwise().sum();
    t.accumulate(ia, (out.array() * (g.colwise() - dots).array()).matrix());
  });
}

Var layer_norm_rows(Var a, double eps) {
  const Matrix& x = a.value();
  const Eigen::Index n = x.cols();
  Matrix xhat(x.rows(), n);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mean) * inv_std(r);
  }
  const int ia = a.id();
  return a.tape()->push(std::move(xhat), {a},
                        [ia, inv_std, n](Tape& t, const Matrix& xh, const Matrix& g) {
                          Matrix dx(g.rows(), g.cols());
                          for (Eigen::Index r = 0; r < g.rows(); ++r) {
                            const double mg = g.row(r).mean();
                            const double mgx = g.row(r).dot(xh.row(r)) / static_cast<double>(n);
                            dx.row(r) = inv_std(r) * (g.row(r).array() - mg - xh.row(r).array() * mgx);
                          }
                          t.accumulate(ia, dx);
                        });
}

Var row_normalize(Var a, double eps) {
  const Matrix& x = a.value();
  Eigen::VectorXd norms = x.rowwise().norm();
  Eigen::VectorXd denom = norms.cwiseMax(eps);
  Matrix y = denom.cwiseInverse().asDiagonal() * x;
  const int ia = a.id();
  return a.tape()->push(std::move(y), {a},
                        [ia, norms, denom, eps](Tape& t, const Matrix& yc, const Matrix& g) {
                          Matrix dx(g.rows(), g.cols());
                          for (Eigen::Index r = 0; r < g.rows(); ++r) {
                            if (norms(r) > eps) {
                              const double proj = g.row(r).dot(yc.row(r));
                              dx.row(r) = (g.row(r) - proj * yc.row(r)) / denom(r);
                            } else {
                              dx.row(r) = g.row(r) / denom(r);
                            }
                          }
                          t.accumulate(ia, dx);
                        });
}

Var gelu(Var a) {
  const Matrix& x = a.value();
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix y = x.unaryExpr([&](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
  const int ia = a.id();
  return a.tape()->push(std::move(y), {a}, [ia, inv_sqrt2](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = t.value(ia).unaryExpr([&](double v) {
      return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
    });
    t.accumulate(ia, g.cwiseProduct(d));
  });
}

Var silu(Var a) {
  Matrix y = a.value().unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
  const int ia = a.id();
  return a.tape()->push(std::move(y), {a}, [ia](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
    Matrix d = t.value(ia).unaryExpr([](double v) {
      const double s = 1.0 / (1.0 + std::exp(-v));
      return s * (1.0 + v * (1.0 - s));
    });
    t.accumulate(ia, g.cwiseProduct(d));
  });
}

Var exp(Var a) {
  Matrix y = a.value().array().exp().matrix();
  const int ia = a.id();
  return a.tape()->push(std::move(y), {a}, [ia](Tape& t, const Matrix& out, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(out));
  });
}

Var log(Var a) {
  const int ia = a.id();
  return a.tape()->push(a.value().array().log().matrix(), {a}, [ia](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
    t.accumulate(ia, g.cwiseQuotient(t.value(ia)));
  });
}

Var square(Var a) {
  const int ia = a.id();
  return a.tape()->push(a.value().array().square().matrix(), {a},
                        [ia](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
                          t.accumulate(ia, 2.0 * g.cwiseProduct(t.value(ia)));
                        });
}

Var clamp_min(Var a, double floor) {
  const int ia = a.id();
  return a.tape()->push(a.value().cwiseMax(floor), {a}, [ia, floor](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
    const Matrix& x = t.value(ia);
    t.accumulate(ia, (x.array() >= floor).select(g, 0.0).matrix());
  });
}

Var sum_all(Var a) {
  const int ia = a.id();
  const auto r = a.rows(), c = a.cols();
  return a.tape()->push(Matrix::Constant(1, 1, a.value().sum()), {a},
                        [ia, r, c](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
                          t.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
                        });
}

Var mean_all(Var a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Var row_sums(Var a) {
  const int ia = a.id();
  const auto c = a.cols();
  return a.tape()->push(a.value().rowwise().sum(), {a}, [ia, c](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
    t.accumulate(ia, g.replicate(1, c));
  });
}

Var col_block(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.cols()) throw std::invalid_argument("col_block: out of range");
  const int ia = a.id();
  const auto r = a.rows(), c = a.cols();
  return a.tape()->push(a.value().middleCols(start, count), {a},
                        [ia, r, c, start, count](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
                          Matrix full = Matrix::Zero(r, c);
                          full.middleCols(start, count) = g;
                          t.accumulate(ia, full);
                        });
}

Var hcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("hcat: no inputs");
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) throw std::invalid_argument("hcat: row mismatch");
    cols += p.cols();
  }
  Matrix v(parts.front().rows(), cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    layout.emplace_back(p.id(), p.cols());
    off += p.cols();
  }
  return parts.front().tape()->push(std::move(v), parts, [layout](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
    Eigen::Index o = 0;
    for (const auto& [id, n] : layout) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(o, n));
      o += n;
    }
  });
}

Var mean_of(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("mean_of: no inputs");
  Matrix v = Matrix::Zero(parts.front().rows(), parts.front().cols());
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (p.rows() != v.rows() || p.cols() != v.cols()) throw std::invalid_argument("mean_of: shape mismatch");
    v += p.value();
    ids.push_back(p.id());
  }
  const double w = 1.0 / static_cast<double>(parts.size());
  v *= w;
  return parts.front().tape()->push(std::move(v), parts, [ids, w](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
    for (int id : ids) t.accumulate(id, w * g);
  });
}

Var detach(Var a) { return a.tape()->constant(a.value()); }

Var dropout(Var a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout probability must be < 1");
  Matrix mask(a.rows(), a.cols());
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask(i) = rng.uniform() < p ? 0.0 : keep;
  const int ia = a.id();
  Matrix v = a.value().cwiseProduct(mask);
  return a.tape()->push(std::move(v), {a}, [ia, mask = std::move(mask)](Tape& t, [[maybe_unused]] const Matrix& out, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(mask));
  });
}

}  // namespace u2ad::ad
