#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "lst/errors.hpp"
#include "lst/gw.hpp"
#include "support.hpp"

using namespace lst;
using testing::random_distributions;
using testing::random_matrix;

namespace {

Matrix random_distance(std::size_t n, std::mt19937_64& rng) {
  return pairwise_l2(normalize_nodes(random_distributions(n, 4, rng)).nodes);
}

double brute_objective(const Matrix& ds, const Matrix& dt, const Matrix& plan) {
  double total = 0.0;
  for (std::size_t i = 0; i < ds.rows(); ++i)
    for (std::size_t j = 0; j < dt.rows(); ++j)
      for (std::size_t a = 0; a < ds.rows(); ++a)
        for (std::size_t b = 0; b < dt.rows(); ++b) total += plan(i, j) * plan(a, b) * std::abs(ds(i, a) - dt(j, b));
  return total;
}

double best_permutation_objective(const Matrix& ds, const Matrix& dt) {
  const std::size_t n = ds.rows();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    Matrix plan(n, n);
    for (std::size_t i = 0; i < n; ++i) plan(i, perm[i]) = 1.0 / static_cast<double>(n);
    best = std::min(best, brute_objective(ds, dt, plan));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Matrix uniform_plan(std::size_t n, std::size_t m) { return Matrix(n, m, 1.0 / static_cast<double>(n * m)); }

}  // namespace

TEST_CASE("structural_cost examples") {
  std::mt19937_64 rng(1);
  const Matrix d = random_distance(4, rng);
  const Matrix c = structural_cost(d, d, testing::scaled(Matrix::identity(4), 0.25));
  for (std::size_t i = 0; i < 4; ++i) CHECK(c(i, i) == 0.0);

  CHECK(structural_cost(Matrix{{0}}, Matrix{{0}}, Matrix{{1}}) == Matrix{{0}});

  for (int trial = 0; trial < 10; ++trial) {
    const Matrix ds = random_distance(3, rng);
    const Matrix dt = random_distance(3, rng);
    const Matrix plan = testing::scaled(random_distributions(3, 3, rng), 1.0 / 3.0);
    const Matrix cost = structural_cost(ds, dt, plan);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        double expected = 0.0;
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = 0; b < 3; ++b) expected += plan(a, b) * std::abs(ds(i, a) - dt(j, b));
        CHECK(cost(i, j) == doctest::Approx(expected).epsilon(1e-13));
      }
    }
    CHECK(gw_objective(ds, dt, plan) == doctest::Approx(brute_objective(ds, dt, plan)).epsilon(1e-13));
  }

  Matrix bad = random_distance(3, rng);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(structural_cost(bad, bad, uniform_plan(3, 3)), NumericError);
}

TEST_CASE("sinkhorn examples") {
  const std::vector<double> u{0.2, 0.3, 0.5};
  const std::vector<double> v{0.6, 0.4};
  const auto zero = sinkhorn(Matrix(3, 2), u, v, 0.05, 200, 1e-9);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(zero.plan.matrix(i, j) == doctest::Approx(u[i] * v[j]).epsilon(1e-9));

  const std::vector<double> half{0.5, 0.5};
  const auto diag = sinkhorn(Matrix{{0, 1}, {1, 0}}, half, half, 0.01, 500, 1e-10);
  CHECK(diag.plan.matrix(0, 0) > 0.4999);
  CHECK(diag.plan.matrix(1, 1) > 0.4999);
  CHECK(diag.plan.matrix(0, 1) < 1e-6);
  CHECK(diag.converged);

  CHECK_THROWS_AS(sinkhorn(Matrix(2, 2), half, half, 0.0, 10, 1e-6), std::invalid_argument);
  CHECK_THROWS_AS(sinkhorn(Matrix(2, 2), std::vector<double>{1.0, 0.0}, half, 0.1, 10, 1e-6), std::invalid_argument);
  CHECK_THROWS_AS(sinkhorn(Matrix(2, 2), std::vector<double>{0.7, 0.7}, half, 0.1, 10, 1e-6), std::invalid_argument);
  CHECK_THROWS_AS(sinkhorn(Matrix(3, 2), half, half, 0.1, 10, 1e-6), ShapeError);
}

TEST_CASE("sinkhorn plans satisfy their marginals") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + trial % 6, m = 2 + (trial / 6) % 6;
    const Matrix cost = random_matrix(n, m, rng, 0.0, 3.0);
    const auto u = random_distributions(1, n, rng).values();
    const auto v = random_distributions(1, m, rng).values();
    const auto r = sinkhorn(cost, u, v, 0.2, 5000, 1e-9);
    CHECK(r.converged);
    CHECK(r.plan.marginal_error() < 1e-6);
    for (double x : r.plan.matrix.values()) CHECK(x >= 0.0);
  }
}

TEST_CASE("sinkhorn reports non-convergence instead of failing") {
  const std::vector<double> u{0.5, 0.5};
  const std::vector<double> v{0.9, 0.1};
  const auto r = sinkhorn(Matrix{{0, 5}, {5, 0}}, u, v, 0.001, 1, 1e-12);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 1);
}

TEST_CASE("warm-started sinkhorn reaches the same plan") {
  std::mt19937_64 rng(3);
  const Matrix cost = random_matrix(4, 4, rng, 0.0, 2.0);
  const std::vector<double> w(4, 0.25);
  const auto cold = sinkhorn(cost, w, w, 0.1, 20000, 1e-12);
  REQUIRE(cold.converged);
  const SinkhornWarmStart warm{cold.f, cold.g};
  const auto hot = sinkhorn(cost, w, w, 0.1, 20000, 1e-12, &warm);
  CHECK(hot.iterations <= 2);
  CHECK(max_abs_diff(hot.plan.matrix, cold.plan.matrix) < 1e-9);
}

TEST_CASE("gromov_wasserstein identity and permutation cases") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + trial % 6;
    const Matrix d = random_distance(n, rng);
    const auto self = gromov_wasserstein(d, d);
    CHECK(self.value <= 1e-6);
    CHECK(self.plan.marginal_error() < 1e-6);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto permuted = gromov_wasserstein(d, testing::permute_rows_cols(d, perm));
    CHECK(permuted.value <= 1e-6);
    CHECK(permuted.plan.marginal_error() < 1e-6);
  }
}

TEST_CASE("gromov_wasserstein is within the permutation oracle bound") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = trial % 2 == 0 ? 3 : 4;
    const Matrix ds = random_distance(n, rng);
    const Matrix dt = random_distance(n, rng);
    const auto r = gromov_wasserstein(ds, dt);
    CHECK(r.value <= best_permutation_objective(ds, dt) + 1e-3);
  }
}

TEST_CASE("gromov_wasserstein result invariants") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + trial % 5, m = 2 + (trial / 5) % 5;
    const Matrix ds = random_distance(n, rng);
    const Matrix dt = random_distance(m, rng);
    const auto r = gromov_wasserstein(ds, dt);
    CHECK(r.value >= 0.0);
    CHECK(std::abs(r.value - brute_objective(ds, dt, r.plan.matrix)) < 1e-9);
    CHECK(r.plan.marginal_error() < 1e-6);
    CHECK_FALSE(r.monotonicity_violated);
    REQUIRE_FALSE(r.history.empty());
    for (std::size_t k = 1; k < r.history.size(); ++k) CHECK(r.history[k] <= r.history[k - 1] + 1e-9);
    CHECK(r.value <= r.history.front() + 1e-9);
    CHECK(r.outer_iterations >= 1);
    CHECK(r.inner_iterations >= r.outer_iterations);
  }
}

TEST_CASE("the uniform start alone is a monotone descent") {
  std::mt19937_64 rng(7);
  GwOptions opts;
  opts.anchor_restarts = false;
  opts.swap_refinement = false;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix ds = random_distance(5, rng);
    const Matrix dt = random_distance(4, rng);
    const auto r = gromov_wasserstein(ds, dt, opts);
    CHECK(r.history.front() == doctest::Approx(gw_objective(ds, dt, uniform_plan(5, 4))).epsilon(1e-12));
    for (std::size_t k = 1; k < r.history.size(); ++k) CHECK(r.history[k] <= r.history[k - 1] + 1e-9);
  }
}

TEST_CASE("degenerate label graphs are skipped") {
  const LabelGraph flat = build_graph({"A", "B"}, Matrix{{0.5, 0.5}, {0.5, 0.5}}, 1.5);
  const LabelGraph fine = build_graph({"A", "B"}, Matrix{{0.9, 0.1}, {0.1, 0.9}}, 1.5);
  CHECK_FALSE(gromov_wasserstein(flat, fine).has_value());
  CHECK_FALSE(gromov_wasserstein(fine, flat).has_value());
  CHECK(gromov_wasserstein(fine, fine).has_value());
}

TEST_CASE("gw_loss_gradient") {
  std::mt19937_64 rng(8);
  SUBCASE("identical graphs have zero gradient") {
    const LabelGraph g = build_graph({"A", "B", "C", "D"}, random_distributions(4, 3, rng), 1.5);
    const auto r = gromov_wasserstein(g, g);
    const Matrix grad = gw_loss_gradient(g, g.nodes(), *r);
    for (double x : grad.values()) CHECK(std::abs(x) < 1e-6);
  }
  SUBCASE("matches central differences of the fixed-plan objective") {
    for (int trial = 0; trial < 10; ++trial) {
      const LabelGraph gs = build_graph({"A", "B", "C"}, random_distributions(3, 3, rng), 1.5);
      const LabelGraph gt = build_graph({"A", "B", "C", "D"}, random_distributions(4, 3, rng), 1.5);
      const auto r = gromov_wasserstein(gs, gt);
      const Matrix grad = gw_loss_gradient(gs, gt.nodes(), *r);
      Matrix probe = gt.nodes();
      for (std::size_t k = 0; k < probe.size(); ++k) {
        const double h = 1e-5, x = probe.data()[k];
        probe.data()[k] = x + h;
        const double up = gw_objective(gs.distances(), pairwise_l2(probe), r->plan.matrix);
        probe.data()[k] = x - h;
        const double down = gw_objective(gs.distances(), pairwise_l2(probe), r->plan.matrix);
        probe.data()[k] = x;
        const double numeric = (up - down) / (2 * h);
        const double exact = grad.data()[k];
        const double err = std::abs(numeric - exact);
        if (err > 1e-6) CHECK(err / std::max(std::abs(numeric), std::abs(exact)) < 1e-4);
        if (std::abs(numeric) > 1e-6) CHECK((numeric > 0) == (exact > 0));
      }
    }
  }
  SUBCASE("scaling target distances gives the predicted first-order change") {
    const LabelGraph gs = build_graph({"A", "B", "C"}, random_distributions(3, 3, rng), 1.5);
    const LabelGraph gt = build_graph({"A", "B", "C"}, random_distributions(3, 3, rng), 1.5);
    const auto r = gromov_wasserstein(gs, gt);
    const Matrix& plan = r->plan.matrix;
    const Matrix& ds = gs.distances();
    const Matrix& dt = gt.distances();
    double predicted = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = 0; b < 3; ++b) {
            const double diff = dt(j, b) - ds(i, a);
            const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
            predicted += plan(i, j) * plan(a, b) * sign * dt(j, b);
          }
    const double h = 1e-6;
    const double base = gw_objective(ds, dt, plan);
    const double moved = gw_objective(ds, testing::scaled(dt, 1.0 + h), plan);
    CHECK((moved - base) / h == doctest::Approx(predicted).epsilon(1e-4));

    const Matrix grad = gw_loss_gradient(gs, gt.nodes(), *r);
    double directional = 0.0;
    for (std::size_t k = 0; k < grad.size(); ++k) directional += grad.data()[k] * gt.nodes().data()[k];
    CHECK(directional == doctest::Approx(predicted).epsilon(1e-9));
  }
}

TEST_CASE("transport plan CSV export") {
  TransportPlan p;
  p.matrix = Matrix{{0.5, 0.0}, {0.0, 0.5}};
  p.row_marginal = {0.5, 0.5};
  p.col_marginal = {0.5, 0.5};
  CHECK(p.to_csv({"A", "B"}, {"X", "Y"}) == "label,X,Y\nA,0.500000,0.000000\nB,0.000000,0.500000\n");
  CHECK_THROWS_AS(p.to_csv({"A"}, {"X", "Y"}), ShapeError);
}
