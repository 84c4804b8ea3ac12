#include "egcbf/qp.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace egcbf {

void QPProblem::validate() const {
  int dims = 0;
  for (const auto& s : sets) {
    if (s.lo.size() != s.hi.size()) throw std::invalid_argument("qp: bad control set");
    dims += static_cast<int>(s.lo.size());
  }
  if (dims != q.size()) throw std::invalid_argument("qp: control sets do not cover u");
  if (A.rows() != b.size() || (A.rows() > 0 && A.cols() != q.size()))
    throw std::invalid_argument("qp: A/b dimensions inconsistent with u");
}

VecX QPProblem::project_sets(const VecX& u) const {
  VecX out(u.size());
  int at = 0;
  for (const auto& s : sets) {
    const int nu = static_cast<int>(s.lo.size());
    out.segment(at, nu) = s.project(u.segment(at, nu));
    at += nu;
  }
  return out;
}

namespace {

double violation_of(const QPProblem& p, const VecX& u) {
  double v = (u - p.project_sets(u)).lpNorm<Eigen::Infinity>();
  if (p.A.rows() > 0) v = std::max(v, (p.b - p.A * u).cwiseMax(0.0).maxCoeff());
  return v;
}

struct ActiveSet {
  std::vector<int> rows;      // active A rows
  std::vector<int> fixed_lo;  // u dims at lower bound
  std::vector<int> fixed_hi;
  std::vector<int> cyl;       // agent indices with the radial bound active
};

/// Equality-constrained refinement on the detected active set. Returns false
/// when the polished point is worse than the ADMM iterate.
bool polish(const QPProblem& p, QPResult& res) {
  const int n = p.dim();
  constexpr double act_tol = 1e-6;

  ActiveSet act;
  if (p.A.rows() > 0) {
    const VecX slack = p.A * res.u - p.b;
    for (int i = 0; i < p.A.rows(); ++i)
      if (slack(i) < act_tol || res.lambda(i) > act_tol) act.rows.push_back(i);
  }
  int at = 0;
  std::vector<int> agent_offset;
  for (size_t k = 0; k < p.sets.size(); ++k) {
    agent_offset.push_back(at);
    const auto& s = p.sets[k];
    const int nu = static_cast<int>(s.lo.size());
    const bool radial = s.xy_radius > 0.0 && nu >= 2;
    for (int j = radial ? 2 : 0; j < nu; ++j) {
      if (res.u(at + j) < s.lo(j) + act_tol) act.fixed_lo.push_back(at + j);
      else if (res.u(at + j) > s.hi(j) - act_tol) act.fixed_hi.push_back(at + j);
    }
    if (radial && res.u.segment(at, 2).norm() > s.xy_radius - act_tol)
      act.cyl.push_back(static_cast<int>(k));
    at += nu;
  }

  const int m = static_cast<int>(act.rows.size() + act.fixed_lo.size() +
                                 act.fixed_hi.size() + act.cyl.size());
  if (m == 0) {
    QPResult cand = res;
    cand.u = p.q;
    if (violation_of(p, cand.u) < 1e-9) {
      cand.lambda.setZero();
      res = cand;
      return true;
    }
    return false;
  }

  MatX G = MatX::Zero(m, n);
  VecX h(m);
  int r = 0;
  for (int i : act.rows) {
    G.row(r) = p.A.row(i);
    h(r++) = p.b(i);
  }
  for (int j : act.fixed_lo) {
    G(r, j) = 1.0;
    int blk = 0, off = 0;
    for (size_t k = 0; k < p.sets.size(); ++k) {
      const int nu = static_cast<int>(p.sets[k].lo.size());
      if (j < off + nu) { blk = static_cast<int>(k); break; }
      off += nu;
    }
    h(r++) = p.sets[blk].lo(j - off);
  }
  for (int j : act.fixed_hi) {
    G(r, j) = 1.0;
    int blk = 0, off = 0;
    for (size_t k = 0; k < p.sets.size(); ++k) {
      const int nu = static_cast<int>(p.sets[k].lo.size());
      if (j < off + nu) { blk = static_cast<int>(k); break; }
      off += nu;
    }
    h(r++) = p.sets[blk].hi(j - off);
  }
  for (int k : act.cyl) {
    const int off = agent_offset[k];
    Eigen::Vector2d dir = res.u.segment(off, 2);
    const double nd = dir.norm();
    if (nd < 1e-12) continue;
    dir /= nd;
    G(r, off) = dir(0);
    G(r, off + 1) = dir(1);
    h(r++) = p.sets[k].xy_radius;
  }
  if (r < m) {
    G.conservativeResize(r, n);
    h.conservativeResize(r);
  }

  // KKT system [I G^T; G 0] [u; nu] = [q; h].
  MatX kkt = MatX::Zero(n + r, n + r);
  kkt.topLeftCorner(n, n).setIdentity();
  kkt.topRightCorner(n, r) = G.transpose();
  kkt.bottomLeftCorner(r, n) = G;
  VecX rhs(n + r);
  rhs.head(n) = p.q;
  rhs.tail(r) = h;
  Eigen::FullPivLU<MatX> lu(kkt);
  if (!lu.isInvertible()) return false;
  const VecX sol = lu.solve(rhs);

  QPResult cand = res;
  cand.u = sol.head(n);
  cand.lambda.setZero(p.A.rows());
  for (size_t i = 0; i < act.rows.size(); ++i)
    cand.lambda(act.rows[i]) = -sol(n + static_cast<int>(i));
  if ((cand.lambda.array() < -1e-8).any()) return false;
  cand.lambda = cand.lambda.cwiseMax(0.0);
  if (violation_of(p, cand.u) > 1e-9) return false;
  const KKTReport before = kkt_residuals(p, res);
  const KKTReport after = kkt_residuals(p, cand);
  if (after.max_residual() > before.max_residual()) return false;
  res = cand;
  res.violation = violation_of(p, res.u);
  return true;
}

}  // namespace

QPResult solve_qp(const QPProblem& problem, const QPSettings& settings) {
  problem.validate();
  const int n = problem.dim();

  // Normalize rows for conditioning; drop vacuous near-zero rows and flag
  // impossible ones (zero row with positive rhs).
  std::vector<int> keep;
  std::vector<double> row_norm;
  bool impossible = false;
  for (int i = 0; i < problem.A.rows(); ++i) {
    const double na = problem.A.row(i).norm();
    if (na < 1e-12) {
      if (problem.b(i) > 1e-12) impossible = true;
      continue;
    }
    keep.push_back(i);
    row_norm.push_back(na);
  }
  QPProblem p;
  p.q = problem.q;
  p.sets = problem.sets;
  p.A.resize(static_cast<int>(keep.size()), n);
  p.b.resize(static_cast<int>(keep.size()));
  for (size_t k = 0; k < keep.size(); ++k) {
    p.A.row(static_cast<int>(k)) = problem.A.row(keep[k]) / row_norm[k];
    p.b(static_cast<int>(k)) = problem.b(keep[k]) / row_norm[k];
  }
  const int m = static_cast<int>(p.A.rows());

  QPResult res;
  res.lambda = VecX::Zero(m);

  auto finish = [&](QPResult inner) {
    QPResult out = inner;
    out.lambda = VecX::Zero(problem.A.rows());
    for (size_t k = 0; k < keep.size(); ++k)
      out.lambda(keep[k]) = inner.lambda(static_cast<int>(k)) / row_norm[k];
    out.violation = violation_of(problem, out.u);
    if (impossible) out.status = QPStatus::Infeasible;
    return out;
  };

  if (m == 0) {
    res.u = p.project_sets(p.q);
    res.status = QPStatus::Solved;
    return finish(res);
  }

  const double rho = settings.rho;
  const double alpha = settings.over_relax;
  MatX P = MatX::Identity(n, n) * (1.0 + rho) + rho * (p.A.transpose() * p.A);
  Eigen::LLT<MatX> llt(P);

  VecX u = p.project_sets(p.q);
  VecX z(m + n);
  z.head(m) = (p.A * u).cwiseMax(p.b);
  z.tail(n) = u;
  VecX w = VecX::Zero(m + n);

  VecX best_u = u;
  double best_violation = violation_of(p, u);
  double prev_window_violation = best_violation;

  auto apply_M = [&](const VecX& x) {
    VecX out(m + n);
    out.head(m) = p.A * x;
    out.tail(n) = x;
    return out;
  };

  int it = 0;
  for (; it < settings.max_iter; ++it) {
    const VecX rhs = p.q + rho * (p.A.transpose() * (z.head(m) - w.head(m)) +
                                  (z.tail(n) - w.tail(n)));
    u = llt.solve(rhs);
    const VecX Mu = apply_M(u);
    const VecX relaxed = alpha * Mu + (1.0 - alpha) * z;
    const VecX z_prev = z;
    VecX zin = relaxed + w;
    z.head(m) = zin.head(m).cwiseMax(p.b);
    z.tail(n) = p.project_sets(zin.tail(n));
    w += relaxed - z;

    const double r_prim = (Mu - z).lpNorm<Eigen::Infinity>();
    const double r_dual =
        rho * (p.A.transpose() * (z.head(m) - z_prev.head(m)) + (z.tail(n) - z_prev.tail(n)))
                  .lpNorm<Eigen::Infinity>();
    res.primal_res = r_prim;
    res.dual_res = r_dual;

    const double viol = violation_of(p, u);
    if (viol < best_violation) {
      best_violation = viol;
      best_u = u;
    }
    if (r_prim < settings.eps && r_dual < settings.eps) {
      ++it;
      break;
    }
    // Stalled primal residual with persistent violation: primal infeasible.
    if ((it + 1) % 2000 == 0) {
      if (best_violation > 1e-6 && prev_window_violation - best_violation < 1e-12) {
        res.u = p.project_sets(best_u);
        res.iterations = it + 1;
        res.status = QPStatus::Infeasible;
        return finish(res);
      }
      prev_window_violation = best_violation;
    }
  }

  res.iterations = it;
  const VecX y = rho * w;
  res.lambda = (-y.head(m)).cwiseMax(0.0);
  res.u = u;
  res.status = (res.primal_res < settings.eps && res.dual_res < settings.eps)
                   ? QPStatus::Solved
                   : QPStatus::MaxIter;
  if (res.status == QPStatus::MaxIter && best_violation > 1e-6) {
    res.u = p.project_sets(best_u);
    res.status = QPStatus::Infeasible;
    return finish(res);
  }

  if (settings.polish) polish(p, res);
  // Box/radial bounds hold exactly on exit.
  res.u = p.project_sets(res.u);
  return finish(res);
}

double KKTReport::max_residual() const {
  return std::max(std::max(stationarity, primal), std::max(dual, comp_slack));
}

KKTReport kkt_residuals(const QPProblem& p, const QPResult& res) {
  KKTReport report;
  VecX grad_pull = p.q;
  if (p.A.rows() > 0) grad_pull += p.A.transpose() * res.lambda;
  report.stationarity = (res.u - p.project_sets(grad_pull)).lpNorm<Eigen::Infinity>();
  report.primal = violation_of(p, res.u);
  if (p.A.rows() > 0) {
    report.dual = std::max(0.0, (-res.lambda).maxCoeff());
    const VecX slack = p.A * res.u - p.b;
    report.comp_slack = res.lambda.cwiseProduct(slack).cwiseAbs().maxCoeff();
  }
  return report;
}

}  // namespace egcbf
