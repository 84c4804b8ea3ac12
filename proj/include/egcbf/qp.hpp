#pragma once

// Min-norm safety-filter QP:
//
//   minimize    1/2 || u - q ||^2
//   subject to  A u >= b            (one row per ego CBF constraint)
//               u_i in U_i          (per-agent control set)
//
// solved by operator splitting (ADMM with over-relaxation, fixed rho) and an
// active-set polish on the final active set.

#include <vector>

#include "egcbf/dynamics.hpp"
#include "egcbf/types.hpp"

namespace egcbf {

struct QPProblem {
  VecX q;
  MatX A;  // may have zero rows
  VecX b;
  std::vector<ControlSet> sets;  // consecutive blocks of u

  int dim() const { return static_cast<int>(q.size()); }
  void validate() const;
  /// Project a stacked vector onto the product of the control sets.
  VecX project_sets(const VecX& u) const;
};

enum class QPStatus { Solved, MaxIter, Infeasible };

struct QPResult {
  VecX u;
  VecX lambda;  // multipliers of the A u >= b rows, >= 0
  QPStatus status = QPStatus::Solved;
  int iterations = 0;
  double primal_res = 0.0;
  double dual_res = 0.0;
  /// Worst constraint violation of u (for the least-violating fallback).
  double violation = 0.0;
};

struct QPSettings {
  double rho = 1.0;
  double over_relax = 1.6;
  int max_iter = 10000;
  double eps = 1e-10;  // residual tolerance
  bool polish = true;
};

QPResult solve_qp(const QPProblem& problem, const QPSettings& settings = {});

struct KKTReport {
  double stationarity = 0.0;  // || u - proj_U(q + A^T lambda) ||_inf
  double primal = 0.0;        // constraint + set violation
  double dual = 0.0;          // negative multipliers
  double comp_slack = 0.0;    // |lambda_i (A_i u - b_i)| max
  double max_residual() const;
};

KKTReport kkt_residuals(const QPProblem& problem, const QPResult& result);

}  // namespace egcbf
