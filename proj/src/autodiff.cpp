#include "lst/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lst/errors.hpp"

namespace lst {

const Matrix& Var::value() const { return tape_->value(*this); }

Matrix Var::grad() const { return tape_->grad(*this); }

Var Tape::leaf(Matrix value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (Var in : inputs) {
    check_owned(in);
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Matrix Tape::grad(Var v) const {
  check_owned(v);
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (!g.same_shape(n.value)) {
    throw ShapeError("gradient shape " + g.shape_string() + " for value " + n.value.shape_string());
  }
  if (n.grad.empty()) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (backward_done_) throw std::logic_error("Tape::backward called twice");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) throw ShapeError("backward needs a 1x1 loss, got " + lv.shape_string());
  backward_done_ = true;
  accumulate(loss, Matrix(1, 1, 1.0));
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    const Matrix upstream = n.grad;
    n.backward(*this, upstream);
  }
}

void Tape::check_owned(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) throw std::logic_error("variable does not belong to this tape");
}

namespace ad {
namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::logic_error("uninitialised variable");
  return *a.tape();
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  Matrix out = lst::matmul(a.value(), b.value());
  const Var in[] = {a, b};
  return t.record(std::move(out), in, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, matmul_nt(g, t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, matmul_tn(t.value(a), g));
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  out += b.value();
  const Var in[] = {a, b};
  return t.record(std::move(out), in, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.value().data()[i];
  const Var in[] = {a, b};
  return t.record(std::move(out), in, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    Matrix neg = g;
    neg *= -1.0;
    t.accumulate(b, neg);
  });
}

Var add_row(Var a, Var bias) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw ShapeError("add_row: " + av.shape_string() + " + " + bv.shape_string());
  }
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv(0, j);
  const Var in[] = {a, bias};
  return t.record(std::move(out), in, [a, bias](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(bias)) {
      Matrix gb(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
      t.accumulate(bias, gb);
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  out *= s;
  const Var in[] = {a};
  return t.record(std::move(out), in, [a, s](Tape& t, const Matrix& g) {
    Matrix ga = g;
    ga *= s;
    t.accumulate(a, ga);
  });
}

Var mul_scalar(Var a, Var s) {
  Tape& t = tape_of(a);
  const Matrix& sv = s.value();
  if (sv.rows() != 1 || sv.cols() != 1) throw ShapeError("mul_scalar: scalar is " + sv.shape_string());
  Matrix out = a.value();
  out *= sv(0, 0);
  const Var in[] = {a, s};
  return t.record(std::move(out), in, [a, s](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) {
      Matrix ga = g;
      ga *= t.value(s)(0, 0);
      t.accumulate(a, ga);
    }
    if (t.requires_grad(s)) {
      const Matrix& av = t.value(a);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g.data()[i] * av.data()[i];
      t.accumulate(s, Matrix(1, 1, acc));
    }
  });
}

Var reciprocal(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (double& v : out.data()) v = 1.0 / v;
  const Var in[] = {a};
  return t.record(std::move(out), in, [a](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    Matrix ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av.data()[i];
      ga.data()[i] = -g.data()[i] / (x * x);
    }
    t.accumulate(a, ga);
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (double& v : out.data()) v = std::max(v, 0.0);
  const Var in[] = {a};
  return t.record(std::move(out), in, [a](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    Matrix ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] = av.data()[i] > 0.0 ? g.data()[i] : 0.0;
    t.accumulate(a, ga);
  });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  const Var in[] = {a};
  return t.record(std::move(out), in, [a](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    Matrix ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = std::tanh(av.data()[i]);
      ga.data()[i] = g.data()[i] * (1.0 - y * y);
    }
    t.accumulate(a, ga);
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Var in[] = {a};
  return t.record(lst::transpose(a.value()), in,
                  [a](Tape& t, const Matrix& g) { t.accumulate(a, lst::transpose(g)); });
}

Var softmax_rows(Var a, double temperature) {
  Tape& t = tape_of(a);
  Matrix out = lst::softmax_rows(a.value(), temperature);
  const Var in[] = {a};
  // The closure keeps its own copy of the probabilities.
  return t.record(out, in, [a, p = out, temperature](Tape& t, const Matrix& g) {
    Matrix ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * p(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) = p(i, j) * (g(i, j) - dot) / temperature;
    }
    t.accumulate(a, ga);
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const Var in[] = {a};
  return t.record(Matrix(1, 1, lst::sum(a.value())), in, [a](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    t.accumulate(a, Matrix(av.rows(), av.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var row_mean(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (av.rows() == 0) throw ShapeError("row_mean of empty matrix");
  Matrix out(1, av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(0, j) += av(i, j);
  const double inv = 1.0 / static_cast<double>(av.rows());
  out *= inv;
  const Var in[] = {a};
  return t.record(std::move(out), in, [a, inv](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    Matrix ga(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) ga(i, j) = g(0, j) * inv;
    t.accumulate(a, ga);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  Tape& t = tape_of(parts.front());
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    if (p.value().cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.value().rows();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t r = 0;
  for (Var p : parts) {
    offsets.push_back(r);
    const Matrix& pv = p.value();
    std::copy(pv.data().begin(), pv.data().end(), out.data().begin() + static_cast<long>(r * cols));
    r += pv.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [inputs, offsets, cols](Tape& t, const Matrix& g) {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (!t.requires_grad(inputs[k])) continue;
      const Matrix& pv = t.value(inputs[k]);
      auto first = g.data().begin() + static_cast<long>(offsets[k] * cols);
      t.accumulate(inputs[k], Matrix(pv.rows(), cols, std::vector<double>(first, first + static_cast<long>(pv.size()))));
    }
  });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  Tape& t = tape_of(table);
  const Matrix& tv = table.value();
  Matrix out(ids.size(), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " out of range");
    std::copy(tv.row(ids[i]).begin(), tv.row(ids[i]).end(), out.row(i).begin());
  }
  const Var in[] = {table};
  return t.record(std::move(out), in, [table, idx = std::vector<std::size_t>(ids.begin(), ids.end())](Tape& t, const Matrix& g) {
    const Matrix& tv = t.value(table);
    Matrix gt(tv.rows(), tv.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < tv.cols(); ++j) gt(idx[i], j) += g(i, j);
    t.accumulate(table, gt);
  });
}

Var shift_rows(Var a, long offset) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const long n = static_cast<long>(av.rows());
  Matrix out(av.rows(), av.cols());
  for (long i = 0; i < n; ++i) {
    const long src = i - offset;
    if (src < 0 || src >= n) continue;
    std::copy(av.row(src).begin(), av.row(src).end(), out.row(i).begin());
  }
  const Var in[] = {a};
  return t.record(std::move(out), in, [a, offset, n](Tape& t, const Matrix& g) {
    Matrix ga(g.rows(), g.cols());
    for (long i = 0; i < n; ++i) {
      const long src = i - offset;
      if (src < 0 || src >= n) continue;
      std::copy(g.row(i).begin(), g.row(i).end(), ga.row(src).begin());
    }
    t.accumulate(a, ga);
  });
}

Var pairwise_l2(Var a) {
  Tape& t = tape_of(a);
  Matrix d = lst::pairwise_l2(a.value());
  const Var in[] = {a};
  return t.record(d, in, [a, d](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a);
    Matrix ga(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) {
      for (std::size_t j = i + 1; j < av.rows(); ++j) {
        if (d(i, j) == 0.0) continue;
        // d(i,j) sits at both (i,j) and (j,i).
        const double w = (g(i, j) + g(j, i)) / d(i, j);
        for (std::size_t k = 0; k < av.cols(); ++k) {
          const double diff = av(i, k) - av(j, k);
          ga(i, k) += w * diff;
          ga(j, k) -= w * diff;
        }
      }
    }
    t.accumulate(a, ga);
  });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets) {
  Tape& t = tape_of(logits);
  const Matrix& lv = logits.value();
  if (targets.size() != lv.rows()) throw ShapeError("softmax_cross_entropy: target count mismatch");
  if (lv.rows() == 0) throw ShapeError("softmax_cross_entropy: no rows");
  Matrix p = lst::softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t i = 0; i < lv.rows(); ++i) {
    if (targets[i] >= lv.cols()) throw ShapeError("softmax_cross_entropy: target out of range");
    // log-softmax via log-sum-exp for accuracy when p is tiny.
    const auto row = lv.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    loss -= row[targets[i]] - mx - std::log(z);
  }
  const double inv = 1.0 / static_cast<double>(lv.rows());
  const Var in[] = {logits};
  return t.record(Matrix(1, 1, loss * inv), in,
                  [logits, p, tg = std::vector<std::size_t>(targets.begin(), targets.end()), inv](Tape& t, const Matrix& g) {
                    Matrix gl = p;
                    for (std::size_t i = 0; i < gl.rows(); ++i) gl(i, tg[i]) -= 1.0;
                    gl *= g(0, 0) * inv;
                    t.accumulate(logits, gl);
                  });
}

Var sigmoid_bce(Var logits, const Matrix& targets) {
  Tape& t = tape_of(logits);
  const Matrix& lv = logits.value();
  require_same_shape(lv, targets, "sigmoid_bce");
  if (lv.size() == 0) throw ShapeError("sigmoid_bce: empty input");
  double loss = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i) {
    const double x = lv.data()[i];
    const double y = targets.data()[i];
    // max(x,0) - x*y + log(1 + exp(-|x|))
    loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  const double inv = 1.0 / static_cast<double>(lv.size());
  const Var in[] = {logits};
  return t.record(Matrix(1, 1, loss * inv), in, [logits, targets, inv](Tape& t, const Matrix& g) {
    const Matrix& lv = t.value(logits);
    Matrix gl(lv.rows(), lv.cols());
    for (std::size_t i = 0; i < lv.size(); ++i) {
      const double x = lv.data()[i];
      const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      gl.data()[i] = (s - targets.data()[i]) * g(0, 0) * inv;
    }
    t.accumulate(logits, gl);
  });
}

Var gw_fixed_plan(Var target_dist, const Matrix& source_dist, const Matrix& plan) {
  Tape& t = tape_of(target_dist);
  const Matrix& dt = target_dist.value();
  const std::size_t n = source_dist.rows();
  const std::size_t m = dt.rows();
  if (source_dist.cols() != n || dt.cols() != m || plan.rows() != n || plan.cols() != m) {
    throw ShapeError("gw_fixed_plan: source " + source_dist.shape_string() + ", target " + dt.shape_string() +
                     ", plan " + plan.shape_string());
  }
  double value = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double tij = plan(i, j);
      if (tij == 0.0) continue;
      for (std::size_t i2 = 0; i2 < n; ++i2)
        for (std::size_t j2 = 0; j2 < m; ++j2)
          value += tij * plan(i2, j2) * std::abs(source_dist(i, i2) - dt(j, j2));
    }
  const Var in[] = {target_dist};
  return t.record(Matrix(1, 1, value), in, [target_dist, source_dist, plan, n, m](Tape& t, const Matrix& g) {
    const Matrix& dt = t.value(target_dist);
    Matrix gd(m, m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double tij = plan(i, j);
        if (tij == 0.0) continue;
        for (std::size_t i2 = 0; i2 < n; ++i2)
          for (std::size_t j2 = 0; j2 < m; ++j2) {
            const double diff = source_dist(i, i2) - dt(j, j2);
            if (diff == 0.0) continue;
            gd(j, j2) += tij * plan(i2, j2) * (diff > 0.0 ? -1.0 : 1.0);
          }
      }
    gd *= g(0, 0);
    t.accumulate(target_dist, gd);
  });
}

}  // namespace ad
}  // namespace lst
