#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "lst/matrix.hpp"

namespace lst {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Matrix grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape. Every primitive appends one node holding its
/// value and a closure that pushes the upstream gradient into its inputs.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = true);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  /// Append the result of a primitive. The backward closure is kept only if
  /// some input requires a gradient.
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);

  const Matrix& value(Var v) const { return nodes_[v.id()].value; }
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Add g into the gradient slot of v (no-op for constants).
  void accumulate(Var v, const Matrix& g);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  /// loss must be 1x1. May be called once per tape.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };

  void check_owned(Var v) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

/// Differentiable primitives. Each registers its own gradient rule.
namespace ad {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// a + bias, with bias a 1 x cols row broadcast over every row of a.
Var add_row(Var a, Var bias);
Var scale(Var a, double s);
/// a * s with s a 1x1 variable.
Var mul_scalar(Var a, Var s);
/// Elementwise 1/x.
Var reciprocal(Var a);
Var relu(Var a);
Var tanh(Var a);
Var transpose(Var a);
Var softmax_rows(Var a, double temperature = 1.0);

Var sum(Var a);
Var mean(Var a);
/// 1 x cols mean over rows.
Var row_mean(Var a);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var table, std::span<const std::size_t> ids);
/// out(i) = a(i - offset), zero where i - offset falls outside [0, rows).
Var shift_rows(Var a, long offset);

/// rows x rows l2 distances between rows; subgradient 0 where a distance is 0.
Var pairwise_l2(Var a);

/// Mean over rows of -log softmax(logits)[row, target[row]].
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets);
/// Mean over all entries of binary cross-entropy of sigmoid(logits) against targets in {0, 1}.
Var sigmoid_bce(Var logits, const Matrix& targets);

/// sum_{i,i',j,j'} plan(i,j) plan(i',j') |source_dist(i,i') - target_dist(j,j')|
/// with plan and source_dist held constant; |.| has subgradient 0 at 0.
Var gw_fixed_plan(Var target_dist, const Matrix& source_dist, const Matrix& plan);

}  // namespace ad
}  // namespace lst
