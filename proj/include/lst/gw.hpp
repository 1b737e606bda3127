#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "lst/label_graph.hpp"
#include "lst/matrix.hpp"

namespace lst {

/// Coupling between two discrete measures.
struct TransportPlan {
  Matrix matrix;
  std::vector<double> row_marginal;
  std::vector<double> col_marginal;

  /// Largest absolute deviation of a row or column sum from its marginal.
  double marginal_error() const;
  /// Header row/column of labels, entries with 6 decimals.
  std::string to_csv(const std::vector<std::string>& row_labels, const std::vector<std::string>& col_labels) const;
};

struct SinkhornResult {
  TransportPlan plan;
  /// Dual potentials; the plan is exp((f_i + g_j - C_ij) / epsilon).
  std::vector<double> f;
  std::vector<double> g;
  std::size_t iterations = 0;
  bool converged = false;
};

struct SinkhornWarmStart {
  std::vector<double> f;
  std::vector<double> g;
};

/// Entropic OT by alternating log-domain scaling. Stops once the larger
/// marginal violation drops below tol.
SinkhornResult sinkhorn(const Matrix& cost, const std::vector<double>& u, const std::vector<double>& v,
                        double epsilon, std::size_t max_iter, double tol,
                        const SinkhornWarmStart* warm = nullptr);

struct GwOptions {
  /// Entropic regularization of the first outer iteration.
  double epsilon = 0.05;
  /// Each outer iteration multiplies epsilon by this factor until epsilon_min.
  double epsilon_decay = 0.5;
  double epsilon_min = 1e-4;
  std::size_t outer_iter = 20;
  std::size_t inner_iter = 200;
  double tol = 1e-6;
  /// Extra descents started from every anchor pair (a, b); the best objective wins.
  bool anchor_restarts = true;
  /// Starting epsilon of the anchor-started descents.
  double restart_epsilon = 0.01;
  /// For square problems, also try the swap-improved rounding of the best plan.
  bool swap_refinement = true;
};

struct GwResult {
  double value = 0.0;
  TransportPlan plan;
  std::size_t inner_iterations = 0;
  std::size_t outer_iterations = 0;
  bool converged = false;
  /// Set when an update would have raised the objective; the solver stopped at the previous plan.
  bool monotonicity_violated = false;
  /// Objective after the initial plan and after each accepted outer iteration.
  std::vector<double> history;
};

/// C_ij = sum_{i',j'} plan(i',j') |d_s(i,i') - d_t(j,j')|
Matrix structural_cost(const Matrix& d_s, const Matrix& d_t, const Matrix& plan);

/// sum_{i,j} plan(i,j) C_ij(plan)
double gw_objective(const Matrix& d_s, const Matrix& d_t, const Matrix& plan);

/// Gromov-Wasserstein matching of two distance matrices under uniform node mass.
/// The primary descent starts from the product plan and alternates cost
/// linearization, a Sinkhorn projection at a shrinking epsilon and an exact
/// line search, so the objective never increases.
GwResult gromov_wasserstein(const Matrix& d_s, const Matrix& d_t, const GwOptions& opts = {});

/// nullopt when either graph is degenerate.
std::optional<GwResult> gromov_wasserstein(const LabelGraph& source, const LabelGraph& target,
                                           const GwOptions& opts = {});

/// Gradient of the fixed-plan objective with respect to the target node rows,
/// where target distances are the l2 distances between those rows.
Matrix gw_loss_gradient(const LabelGraph& source, const Matrix& target_nodes, const GwResult& result);

}  // namespace lst
