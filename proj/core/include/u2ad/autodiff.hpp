#pragma once

// Minimal reverse-mode differentiation over dense double matrices. A Tape
// records one forward evaluation; backward() pushes the gradient of a scalar
// root into per-parameter accumulators. Tapes are single-use and not shared
// between threads.

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

#include "u2ad/rng.hpp"

namespace u2ad::ad {

using Matrix = Eigen::MatrixXd;

/// Named trainable matrices. Indices are stable for the life of the set.
class ParameterSet {
 public:
  int add(std::string name, Matrix init);

  std::size_t size() const { return values_.size(); }
  Matrix& value(int id) { return values_[static_cast<std::size_t>(id)]; }
  const Matrix& value(int id) const { return values_[static_cast<std::size_t>(id)]; }
  const std::string& name(int id) const { return names_[static_cast<std::size_t>(id)]; }
  int find(const std::string& name) const;  // -1 when absent
  std::size_t scalar_count() const;

  std::vector<Matrix> zeros_like() const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
};

using Gradients = std::vector<Matrix>;

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Receives the node's own value and the gradient flowing into it.
  using Backward = std::function<void(Tape&, const Matrix& out, const Matrix& grad_out)>;

  /// With record == false nothing is kept for backward (inference mode).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  Var parameter(const ParameterSet& params, int id);

  /// Creates a node. `inputs` are the nodes `backward` will touch.
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Matrix value, const std::vector<Var>& inputs, Backward backward);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Adds `g` into the gradient buffer of node `id` (no-op for constants).
  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Backpropagates from a 1x1 root; parameter gradients are added into
  /// `grads` (sized like the ParameterSet).
  void backward(Var root, Gradients& grads);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    int param_id = -1;
    bool requires_grad = false;
  };
  bool record_;
  std::vector<Node> nodes_;
};

// ---- operations -----------------------------------------------------------

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_row(Var a, Var row);  // row broadcast, row is 1 x cols
Var mul_row(Var a, Var row);
Var transpose(Var a);
Var softmax_rows(Var a);
Var layer_norm_rows(Var a, double eps = 1e-5);
Var row_normalize(Var a, double eps);  // x / max(||x||, eps)
Var gelu(Var a);
Var silu(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var clamp_min(Var a, double floor);
Var sum_all(Var a);
Var mean_all(Var a);
Var row_sums(Var a);  // N x 1
Var col_block(Var a, Eigen::Index start, Eigen::Index count);
Var hcat(const std::vector<Var>& parts);
Var mean_of(const std::vector<Var>& parts);
Var detach(Var a);
Var dropout(Var a, double p, Rng& rng);  // inverted dropout; identity when p == 0

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace u2ad::ad
