#include "lst/gw.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "lst/autodiff.hpp"
#include "lst/errors.hpp"

namespace lst {
namespace {

double log_sum_exp(const std::vector<double>& xs) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

void check_weights(const std::vector<double>& w, const char* name) {
  double total = 0.0;
  for (double x : w) {
    if (!(x > 0.0)) throw std::invalid_argument(std::string("sinkhorn: ") + name + " must be strictly positive");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument(std::string("sinkhorn: ") + name + " must sum to 1");
}

void check_distance_matrix(const Matrix& d, const char* name) {
  if (d.rows() != d.cols()) throw ShapeError(std::string(name) + " must be square, got " + d.shape_string());
  if (!d.all_finite()) throw NumericError(std::string(name) + " has non-finite entries");
}

std::vector<double> uniform(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

// Projects a nonnegative matrix onto the couplings of (u, v): rows and columns
// are scaled down to their marginals, then the deficits are filled by a rank-one term.
Matrix round_to_coupling(Matrix p, const std::vector<double>& u, const std::vector<double>& v) {
  const std::size_t n = p.rows();
  const std::size_t m = p.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += p(i, j);
    if (s > u[i])
      for (std::size_t j = 0; j < m; ++j) p(i, j) *= u[i] / s;
  }
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p(i, j);
    if (s > v[j])
      for (std::size_t i = 0; i < n; ++i) p(i, j) *= v[j] / s;
  }
  std::vector<double> dr(n), dc(m);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += p(i, j);
    dr[i] = std::max(u[i] - s, 0.0);
    total += dr[i];
  }
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p(i, j);
    dc[j] = std::max(v[j] - s, 0.0);
  }
  if (total > 0.0)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) p(i, j) += dr[i] * dc[j] / total;
  return p;
}

}  // namespace

double TransportPlan::marginal_error() const {
  double worst = 0.0;
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    double s = 0.0;
    for (double x : matrix.row(i)) s += x;
    worst = std::max(worst, std::abs(s - row_marginal[i]));
  }
  for (std::size_t j = 0; j < matrix.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < matrix.rows(); ++i) s += matrix(i, j);
    worst = std::max(worst, std::abs(s - col_marginal[j]));
  }
  return worst;
}

std::string TransportPlan::to_csv(const std::vector<std::string>& row_labels,
                                  const std::vector<std::string>& col_labels) const {
  if (row_labels.size() != matrix.rows() || col_labels.size() != matrix.cols()) {
    throw ShapeError("transport plan csv: label counts do not match " + matrix.shape_string());
  }
  std::string out = "label";
  for (const auto& l : col_labels) out += "," + l;
  out += "\n";
  char buf[64];
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    out += row_labels[i];
    for (std::size_t j = 0; j < matrix.cols(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.6f", matrix(i, j));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

SinkhornResult sinkhorn(const Matrix& cost, const std::vector<double>& u, const std::vector<double>& v,
                        double epsilon, std::size_t max_iter, double tol, const SinkhornWarmStart* warm) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("sinkhorn: epsilon must be positive");
  if (cost.rows() != u.size() || cost.cols() != v.size()) {
    throw ShapeError("sinkhorn: cost " + cost.shape_string() + " vs marginals " + std::to_string(u.size()) + "/" +
                     std::to_string(v.size()));
  }
  if (!cost.all_finite()) throw NumericError("sinkhorn: non-finite cost");
  check_weights(u, "row marginal");
  check_weights(v, "column marginal");

  const std::size_t n = u.size();
  const std::size_t m = v.size();
  SinkhornResult res;
  res.f.assign(n, 0.0);
  res.g.assign(m, 0.0);
  if (warm && warm->f.size() == n && warm->g.size() == m) {
    res.f = warm->f;
    res.g = warm->g;
  }
  std::vector<double> log_u(n), log_v(m);
  for (std::size_t i = 0; i < n; ++i) log_u[i] = std::log(u[i]);
  for (std::size_t j = 0; j < m; ++j) log_v[j] = std::log(v[j]);

  std::vector<double> scratch_m(m), scratch_n(n), next_f(n);
  for (std::size_t it = 0; it <= max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) scratch_m[j] = (res.g[j] - cost(i, j)) / epsilon;
      next_f[i] = epsilon * (log_u[i] - log_sum_exp(scratch_m));
    }
    // Row sums of the current plan are u_i * exp((f_i - next_f_i) / epsilon);
    // columns are already exact after the last g update.
    if (it > 0) {
      double worst = 0.0;
      for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, u[i] * std::abs(std::expm1((res.f[i] - next_f[i]) / epsilon)));
      if (worst < tol) {
        res.converged = true;
        break;
      }
    }
    if (it == max_iter) break;
    res.f = next_f;
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) scratch_n[i] = (res.f[i] - cost(i, j)) / epsilon;
      res.g[j] = epsilon * (log_v[j] - log_sum_exp(scratch_n));
    }
    res.iterations = it + 1;
  }

  res.plan.matrix = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) res.plan.matrix(i, j) = std::exp((res.f[i] + res.g[j] - cost(i, j)) / epsilon);
  res.plan.row_marginal = u;
  res.plan.col_marginal = v;
  return res;
}

Matrix structural_cost(const Matrix& d_s, const Matrix& d_t, const Matrix& plan) {
  check_distance_matrix(d_s, "source distances");
  check_distance_matrix(d_t, "target distances");
  const std::size_t n = d_s.rows();
  const std::size_t m = d_t.rows();
  if (plan.rows() != n || plan.cols() != m) throw ShapeError("structural_cost: plan is " + plan.shape_string());
  Matrix c(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t i2 = 0; i2 < n; ++i2)
        for (std::size_t j2 = 0; j2 < m; ++j2) acc += plan(i2, j2) * std::abs(d_s(i, i2) - d_t(j, j2));
      c(i, j) = acc;
    }
  return c;
}

double gw_objective(const Matrix& d_s, const Matrix& d_t, const Matrix& plan) {
  const Matrix c = structural_cost(d_s, d_t, plan);
  double value = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) value += plan.data()[k] * c.data()[k];
  return value;
}

namespace {

GwResult descend(const Matrix& d_s, const Matrix& d_t, Matrix start, const GwOptions& opts, double eps_start) {
  const std::size_t n = d_s.rows();
  const std::size_t m = d_t.rows();
  const auto u = uniform(n);
  const auto v = uniform(m);

  GwResult res;
  res.plan.matrix = std::move(start);
  res.plan.row_marginal = u;
  res.plan.col_marginal = v;
  res.value = gw_objective(d_s, d_t, res.plan.matrix);
  res.history.push_back(res.value);

  SinkhornWarmStart warm;
  double epsilon = eps_start;
  for (std::size_t outer = 0; outer < opts.outer_iter; ++outer) {
    const Matrix cost = structural_cost(d_s, d_t, res.plan.matrix);
    SinkhornResult sk = sinkhorn(cost, u, v, epsilon, opts.inner_iter, opts.tol, &warm);
    res.inner_iterations += sk.iterations;
    res.outer_iterations = outer + 1;

    // Exact line search on the quadratic objective along the segment to the new plan.
    Matrix direction = round_to_coupling(std::move(sk.plan.matrix), u, v);
    for (std::size_t k = 0; k < direction.size(); ++k) direction.data()[k] -= res.plan.matrix.data()[k];
    double slope = 0.0;
    for (std::size_t k = 0; k < direction.size(); ++k) slope += 2.0 * cost.data()[k] * direction.data()[k];
    const double curvature = gw_objective(d_s, d_t, direction);
    double step = 1.0;
    if (curvature > 0.0) {
      step = std::clamp(-slope / (2.0 * curvature), 0.0, 1.0);
    } else if (slope + curvature >= 0.0) {
      step = 0.0;
    }

    Matrix next = res.plan.matrix;
    for (std::size_t k = 0; k < next.size(); ++k) next.data()[k] += step * direction.data()[k];
    const double value = gw_objective(d_s, d_t, next);
    if (value > res.value + 1e-9) {
      res.monotonicity_violated = true;
      break;
    }
    const double change = max_abs_diff(next, res.plan.matrix);
    res.plan.matrix = std::move(next);
    res.value = value;
    res.history.push_back(value);
    warm.f = std::move(sk.f);
    warm.g = std::move(sk.g);

    const bool at_floor = epsilon <= opts.epsilon_min;
    if (at_floor && change < opts.tol && sk.converged) {
      res.converged = true;
      break;
    }
    epsilon = std::max(epsilon * opts.epsilon_decay, opts.epsilon_min);
  }
  return res;
}

double permutation_objective(const Matrix& d_s, const Matrix& d_t, const std::vector<std::size_t>& perm) {
  const std::size_t n = perm.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t i2 = 0; i2 < n; ++i2) acc += std::abs(d_s(i, i2) - d_t(perm[i], perm[i2]));
  return acc / static_cast<double>(n * n);
}

// Rounds a square plan to the permutation picked by repeatedly taking its
// largest free entry, then applies improving pairwise swaps until none is left.
std::vector<std::size_t> swap_refined_permutation(const Matrix& d_s, const Matrix& d_t, const Matrix& plan) {
  const std::size_t n = plan.rows();
  std::vector<std::size_t> perm(n, n);
  std::vector<bool> row_used(n, false), col_used(n, false);
  for (std::size_t step = 0; step < n; ++step) {
    double best = -1.0;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (row_used[i]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (!col_used[j] && plan(i, j) > best) {
          best = plan(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    perm[bi] = bj;
    row_used[bi] = col_used[bj] = true;
  }

  double current = permutation_objective(d_s, d_t, perm);
  auto try_move = [&](std::vector<std::size_t> candidate) {
    const double value = permutation_objective(d_s, d_t, candidate);
    if (value < current - 1e-12) {
      current = value;
      perm = std::move(candidate);
      return true;
    }
    return false;
  };
  for (bool improved = true; improved;) {
    improved = false;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) {
        auto c = perm;
        std::swap(c[a], c[b]);
        improved = try_move(std::move(c)) || improved;
      }
  }
  return perm;
}

}  // namespace

GwResult gromov_wasserstein(const Matrix& d_s, const Matrix& d_t, const GwOptions& opts) {
  check_distance_matrix(d_s, "source distances");
  check_distance_matrix(d_t, "target distances");
  const std::size_t n = d_s.rows();
  const std::size_t m = d_t.rows();
  if (n == 0 || m == 0) throw ShapeError("gromov_wasserstein: empty graph");

  GwResult best = descend(d_s, d_t, Matrix(n, m, 1.0 / static_cast<double>(n * m)), opts, opts.epsilon);
  std::size_t inner = best.inner_iterations;
  std::size_t outer = best.outer_iterations;

  if (opts.anchor_restarts) {
    // Start (a, b): pretend a matches b and align the rest by distance to the anchors.
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < m; ++b) {
        Matrix cost(n, m);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) cost(i, j) = std::abs(d_s(a, i) - d_t(b, j));
        SinkhornResult start = sinkhorn(cost, uniform(n), uniform(m), opts.epsilon, opts.inner_iter, opts.tol);
        GwResult alt = descend(d_s, d_t, round_to_coupling(std::move(start.plan.matrix), uniform(n), uniform(m)), opts,
                               opts.restart_epsilon);
        inner += start.iterations + alt.inner_iterations;
        outer += alt.outer_iterations;
        if (alt.value < best.value - 1e-12) best = std::move(alt);
      }
  }

  if (opts.swap_refinement && n == m) {
    const auto perm = swap_refined_permutation(d_s, d_t, best.plan.matrix);
    Matrix plan(n, m);
    for (std::size_t i = 0; i < n; ++i) plan(i, perm[i]) = 1.0 / static_cast<double>(n);
    const double value = gw_objective(d_s, d_t, plan);
    if (value < best.value - 1e-12) {
      best.plan.matrix = std::move(plan);
      best.value = value;
      best.history.push_back(value);
    }
  }
  best.inner_iterations = inner;
  best.outer_iterations = outer;
  return best;
}

std::optional<GwResult> gromov_wasserstein(const LabelGraph& source, const LabelGraph& target,
                                           const GwOptions& opts) {
  if (source.degenerate() || target.degenerate() || source.size() < 2 || target.size() < 2) return std::nullopt;
  return gromov_wasserstein(source.distances(), target.distances(), opts);
}

Matrix gw_loss_gradient(const LabelGraph& source, const Matrix& target_nodes, const GwResult& result) {
  Tape tape;
  Var nodes = tape.leaf(target_nodes);
  Var loss = ad::gw_fixed_plan(ad::pairwise_l2(nodes), source.distances(), result.plan.matrix);
  tape.backward(loss);
  return nodes.grad();
}

}  // namespace lst
