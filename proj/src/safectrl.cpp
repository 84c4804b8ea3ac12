#include "egcbf/safectrl.hpp"

#include <cmath>

namespace egcbf {

namespace {

/// Horizontal heading reference for the quadrotor's desired attitude. The
/// candidates (target offset, velocity, current heading) all rotate with the
/// scene, which keeps the full law equivariant.
Vec3 heading_reference(const AgentState& x, const Vec3& target) {
  const auto horizontal = [](Vec3 v) {
    v.z() = 0.0;
    return v;
  };
  Vec3 ref = horizontal(target - x.p);
  if (ref.norm() > 1e-6) return ref.normalized();
  ref = horizontal(x.v);
  if (ref.norm() > 1e-6) return ref.normalized();
  ref = horizontal(x.R.col(0));
  if (ref.norm() > 1e-6) return ref.normalized();
  return Vec3::UnitX();  // fully degenerate attitude; arbitrary convention
}

}  // namespace

VecX nominal_control(const AgentState& x, const Vec3& target, const ModelParams& params,
                     const NominalGains& gains) {
  if (params.kind == ModelKind::DoubleIntegrator) {
    const Vec3 a = -gains.kp * (x.p - target) - gains.kd * x.v;
    return params.bounds.project(a);
  }

  const Vec3 a_des = -gains.kp * (x.p - target) - gains.kd * x.v;
  Vec3 f_des = params.m * (a_des - params.gvec);
  if (f_des.norm() < 1e-9) f_des = -params.m * params.gvec;

  const Vec3 b3 = f_des.normalized();
  const Vec3 b1_ref = heading_reference(x, target);
  Vec3 b2 = b3.cross(b1_ref);
  if (b2.norm() < 1e-9) b2 = b3.cross(Vec3::UnitY());
  b2.normalize();
  const Vec3 b1 = b2.cross(b3);
  Mat3 R_des;
  R_des.col(0) = b1;
  R_des.col(1) = b2;
  R_des.col(2) = b3;

  const Vec3 e_R = 0.5 * unskew(R_des.transpose() * x.R - x.R.transpose() * R_des);
  const Vec3 tau =
      -gains.kR * e_R - gains.kOmega * x.omega + x.omega.cross(params.J * x.omega);
  const double f3 = f_des.dot(x.R.col(2));

  VecX u(4);
  u << tau, f3;
  return params.bounds.project(u);
}

double handcrafted_cbf(const AgentState& xi, const AgentState& xj, double r,
                       const PairCbf& cbf) {
  const Vec3 dp = xi.p - xj.p;
  const Vec3 dv = xi.v - xj.v;
  const double d = std::max(dp.norm(), cbf.denom_floor);
  return dp.squaredNorm() - r * r + cbf.c * dp.dot(dv) / d;
}

PairRow handcrafted_cbf_row(const AgentState& xi, const AgentState& xj, double r,
                            const PairCbf& cbf) {
  const Vec3 dp = xi.p - xj.p;
  const Vec3 dv = xi.v - xj.v;
  const double d = std::max(dp.norm(), cbf.denom_floor);
  PairRow row;
  row.h = dp.squaredNorm() - r * r + cbf.c * dp.dot(dv) / d;
  row.ai = cbf.c * dp / d;
  row.aj = -row.ai;
  const double pv = dp.dot(dv);
  row.rest = 2.0 * pv + cbf.c * (dv.squaredNorm() / d - pv * pv / (d * d * d));
  return row;
}

PairRow handcrafted_obstacle_row(const AgentState& xi, const Obstacle& o, double margin,
                                 const PairCbf& cbf) {
  AgentState fake;
  fake.p = o.center;
  PairRow row = handcrafted_cbf_row(xi, fake, o.radius + margin, cbf);
  row.aj.setZero();  // the obstacle never accelerates
  return row;
}

CbfOracle make_net_cbf_oracle(const NetParams& cbf_net) {
  return [&cbf_net](const GraphSnapshot& graph, int ego) {
    const CbfGradients g = cbf_input_gradients(cbf_net, graph, ego);
    return EgoCbfData{g.h, g.by_node};
  };
}

namespace {

struct ConstraintRow {
  VecX coeffs;  // over stacked controls
  double rhs = 0.0;
  double h = 0.0;
};

ConstraintRow constraint_row(const EgoCbfData& data, const GraphSnapshot& graph,
                             const ModelParams& params, const ClassK& alpha) {
  const int n = graph.num_agents();
  const int nu = params.nu();
  ConstraintRow row;
  row.coeffs = VecX::Zero(n * nu);
  row.h = data.h;
  double drift_term = 0.0;
  for (const auto& [node_id, grad] : data.grads) {
    const GraphNode& node = graph.nodes[node_id];
    if (node.kind != NodeKind::Agent) continue;  // static nodes: zero dynamics
    const AgentState& xj = node.state;
    drift_term += grad.dot(drift(xj, params));
    const MatX Bv = control_matrix_v(xj, params);
    const MatX Bw = control_matrix_omega(params);
    row.coeffs.segment(node.agent * nu, nu) +=
        Bv.transpose() * grad.dv + Bw.transpose() * grad.domega;
  }
  // sum_j <grad_j h, f(x_j, u_j)> + alpha(h) >= 0  <=>  coeffs.u >= rhs
  row.rhs = -alpha(data.h) - drift_term;
  return row;
}

}  // namespace

VecX cbf_constraint_values(const CbfOracle& oracle, const GraphSnapshot& graph,
                           const std::vector<VecX>& controls, const ModelParams& params,
                           const ClassK& alpha) {
  const int n = graph.num_agents();
  if (static_cast<int>(controls.size()) != n)
    throw std::invalid_argument("cbf_constraint_values: control missing for some agent");
  for (int i = 0; i < n; ++i)
    if (controls[i].size() != params.nu())
      throw std::invalid_argument("cbf_constraint_values: control dim mismatch for agent " +
                                  std::to_string(i));
  VecX out(n);
  for (int ego = 0; ego < n; ++ego) {
    const EgoCbfData data = oracle(graph, ego);
    double hdot = 0.0;
    for (const auto& [node_id, grad] : data.grads) {
      const GraphNode& node = graph.nodes[node_id];
      if (node.kind != NodeKind::Agent) continue;
      hdot += grad.dot(derivative(node.state, controls[node.agent], params));
    }
    out(ego) = hdot + alpha(data.h);
  }
  return out;
}

QPProblem build_cbf_qp(const CbfOracle& oracle, const GraphSnapshot& graph,
                       const std::vector<VecX>& u_nom, const ModelParams& params,
                       const ClassK& alpha) {
  std::vector<CbfGradients> grads;
  grads.reserve(graph.num_agents());
  for (int ego = 0; ego < graph.num_agents(); ++ego) {
    const EgoCbfData d = oracle(graph, ego);
    grads.push_back(CbfGradients{d.h, d.grads});
  }
  return build_cbf_qp(grads, graph, u_nom, params, alpha);
}

QPProblem build_cbf_qp(const std::vector<CbfGradients>& grads, const GraphSnapshot& graph,
                       const std::vector<VecX>& u_nom, const ModelParams& params,
                       const ClassK& alpha) {
  const int n = graph.num_agents();
  const int nu = params.nu();
  if (static_cast<int>(u_nom.size()) != n)
    throw std::invalid_argument("build_cbf_qp: one nominal control per agent required");
  QPProblem qp;
  qp.q = VecX(n * nu);
  for (int i = 0; i < n; ++i) qp.q.segment(i * nu, nu) = u_nom[i];
  qp.A = MatX::Zero(n, n * nu);
  qp.b = VecX::Zero(n);
  for (int ego = 0; ego < n; ++ego) {
    const ConstraintRow row =
        constraint_row(EgoCbfData{grads[ego].h, grads[ego].by_node}, graph, params, alpha);
    qp.A.row(ego) = row.coeffs;
    qp.b(ego) = row.rhs;
  }
  qp.sets.assign(n, params.bounds);
  return qp;
}

namespace {

void record_diag(QPDiag* diag, const QPResult& res) {
  if (!diag) return;
  diag->iterations += res.iterations;
  diag->primal_res = std::max(diag->primal_res, res.primal_res);
  diag->dual_res = std::max(diag->dual_res, res.dual_res);
  diag->infeasible = diag->infeasible || res.status == QPStatus::Infeasible;
}

constexpr double kObstacleMargin = 0.05;

}  // namespace

std::vector<VecX> ccbf_controls(const std::vector<AgentState>& states,
                                const std::vector<Vec3>& targets,
                                const std::vector<Obstacle>& obstacles,
                                const ModelParams& params, const WorldConfig& cfg,
                                const PairCbf& cbf, const ClassK& alpha, QPDiag* diag) {
  if (params.kind != ModelKind::DoubleIntegrator)
    throw std::invalid_argument("ccbf_controls: hand-crafted CBFs are double-integrator only");
  const int n = static_cast<int>(states.size());
  const int nu = params.nu();
  QPProblem qp;
  qp.q = VecX(n * nu);
  for (int i = 0; i < n; ++i)
    qp.q.segment(i * nu, nu) = nominal_control(states[i], targets[i], params);
  std::vector<VecX> rows;
  std::vector<double> rhs;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const PairRow pr = handcrafted_cbf_row(states[i], states[j], cfg.safety_radius, cbf);
      VecX row = VecX::Zero(n * nu);
      row.segment<3>(i * nu) = pr.ai;
      row.segment<3>(j * nu) = pr.aj;
      rows.push_back(row);
      rhs.push_back(-alpha(pr.h) - pr.rest);
    }
    for (const auto& o : obstacles) {
      const PairRow pr = handcrafted_obstacle_row(states[i], o, kObstacleMargin, cbf);
      VecX row = VecX::Zero(n * nu);
      row.segment<3>(i * nu) = pr.ai;
      rows.push_back(row);
      rhs.push_back(-alpha(pr.h) - pr.rest);
    }
  }
  qp.A = MatX::Zero(static_cast<int>(rows.size()), n * nu);
  qp.b = VecX(static_cast<int>(rows.size()));
  for (size_t k = 0; k < rows.size(); ++k) {
    qp.A.row(static_cast<int>(k)) = rows[k];
    qp.b(static_cast<int>(k)) = rhs[k];
  }
  qp.sets.assign(n, params.bounds);
  QPSettings settings;
  settings.eps = 1e-8;
  settings.max_iter = 4000;
  const QPResult res = solve_qp(qp, settings);
  record_diag(diag, res);
  std::vector<VecX> out(n);
  for (int i = 0; i < n; ++i) out[i] = res.u.segment(i * nu, nu);
  return out;
}

std::vector<VecX> dcbf_controls(const std::vector<AgentState>& states,
                                const std::vector<Vec3>& targets,
                                const std::vector<Obstacle>& obstacles,
                                const std::vector<VecX>& prev_controls,
                                const ModelParams& params, const WorldConfig& cfg,
                                const PairCbf& cbf, const ClassK& alpha, QPDiag* diag) {
  if (params.kind != ModelKind::DoubleIntegrator)
    throw std::invalid_argument("dcbf_controls: hand-crafted CBFs are double-integrator only");
  const int n = static_cast<int>(states.size());
  const int nu = params.nu();
  std::vector<VecX> out(n);
  for (int i = 0; i < n; ++i) {
    QPProblem qp;
    qp.q = nominal_control(states[i], targets[i], params);
    std::vector<Vec3> rows;
    std::vector<double> rhs;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if ((states[i].p - states[j].p).norm() > cfg.comm_range) continue;
      const PairRow pr = handcrafted_cbf_row(states[i], states[j], cfg.safety_radius, cbf);
      const Vec3 uj = prev_controls.empty() ? Vec3::Zero() : Vec3(prev_controls[j].head<3>());
      rows.push_back(pr.ai);
      rhs.push_back(-alpha(pr.h) - pr.rest - pr.aj.dot(uj));
    }
    for (const auto& o : obstacles) {
      if ((states[i].p - o.center).norm() - o.radius > cfg.sensing_range) continue;
      const PairRow pr = handcrafted_obstacle_row(states[i], o, kObstacleMargin, cbf);
      rows.push_back(pr.ai);
      rhs.push_back(-alpha(pr.h) - pr.rest);
    }
    qp.A = MatX::Zero(static_cast<int>(rows.size()), nu);
    qp.b = VecX(static_cast<int>(rows.size()));
    for (size_t k = 0; k < rows.size(); ++k) {
      qp.A.row(static_cast<int>(k)).head<3>() = rows[k];
      qp.b(static_cast<int>(k)) = rhs[k];
    }
    qp.sets = {params.bounds};
    QPSettings settings;
    settings.eps = 1e-8;
    settings.max_iter = 4000;
    const QPResult res = solve_qp(qp, settings);
    record_diag(diag, res);
    out[i] = res.u;
  }
  return out;
}

}  // namespace egcbf
