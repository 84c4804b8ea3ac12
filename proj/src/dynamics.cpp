#include "egcbf/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "egcbf/liegroup.hpp"

namespace egcbf {

// With a radial bound the first two dims are governed by it exclusively (the
// set must be invariant under z-rotations); the interval bounds cover the rest.
VecX ControlSet::project(const VecX& u) const {
  VecX out = u;
  const int from = (xy_radius > 0.0 && u.size() >= 2) ? 2 : 0;
  for (int k = from; k < out.size(); ++k) out(k) = std::clamp(out(k), lo(k), hi(k));
  if (from == 2) {
    const double n = out.head<2>().norm();
    if (n > xy_radius) out.head<2>() *= xy_radius / n;
  }
  return out;
}

bool ControlSet::contains(const VecX& u, double tol) const {
  const int from = (xy_radius > 0.0 && u.size() >= 2) ? 2 : 0;
  for (int k = from; k < u.size(); ++k)
    if (u(k) < lo(k) - tol || u(k) > hi(k) + tol) return false;
  if (from == 2 && u.head<2>().norm() > xy_radius + tol) return false;
  return true;
}

ControlSet ControlSet::scaled(double factor) const {
  ControlSet s = *this;
  s.lo *= factor;
  s.hi *= factor;
  s.xy_radius *= factor;
  return s;
}

ModelParams ModelParams::quadrotor() {
  ModelParams p;
  p.kind = ModelKind::Quadrotor;
  const double tau_max = 0.1;
  const double f_max = 2.0 * p.m * 9.81;
  p.bounds.lo = VecX(4);
  p.bounds.hi = VecX(4);
  p.bounds.lo << -tau_max, -tau_max, -tau_max, 0.0;
  p.bounds.hi << tau_max, tau_max, tau_max, f_max;
  return p;
}

ModelParams ModelParams::double_integrator() {
  ModelParams p;
  p.kind = ModelKind::DoubleIntegrator;
  const double a_max = 4.0;
  p.bounds.lo = VecX::Constant(3, -a_max);
  p.bounds.hi = VecX::Constant(3, a_max);
  p.bounds.xy_radius = a_max;
  return p;
}

StateDeriv derivative(const AgentState& x, const VecX& u, const ModelParams& params) {
  StateDeriv d;
  d.dp = x.v;
  if (params.kind == ModelKind::DoubleIntegrator) {
    d.dv = u.head<3>();
    return d;
  }
  // Rdot = (R omega)^ R: body rate expressed in the world frame. Identical to
  // the body-frame form R omega^, which is how it is evaluated here.
  d.dR = x.R * skew(x.omega);
  d.dv = params.gvec + (u(3) / params.m) * (x.R.col(2));
  d.domega = params.J.inverse() * (u.head<3>() - x.omega.cross(params.J * x.omega));
  return d;
}

StateDeriv drift(const AgentState& x, const ModelParams& params) {
  return derivative(x, VecX::Zero(params.nu()), params);
}

MatX control_matrix_v(const AgentState& x, const ModelParams& params) {
  if (params.kind == ModelKind::DoubleIntegrator) return Mat3::Identity();
  MatX B = MatX::Zero(3, 4);
  B.col(3) = x.R.col(2) / params.m;
  return B;
}

MatX control_matrix_omega(const ModelParams& params) {
  if (params.kind == ModelKind::DoubleIntegrator) return MatX::Zero(3, 3);
  MatX B = MatX::Zero(3, 4);
  B.leftCols<3>() = params.J.inverse();
  return B;
}

namespace {

AgentState advance(const AgentState& x, const StateDeriv& d, double h) {
  AgentState y;
  y.p = x.p + h * d.dp;
  y.R = x.R + h * d.dR;
  y.v = x.v + h * d.dv;
  y.omega = x.omega + h * d.domega;
  return y;
}

StateDeriv combine(const StateDeriv& k1, const StateDeriv& k2, const StateDeriv& k3,
                   const StateDeriv& k4) {
  StateDeriv d;
  d.dp = (k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp) / 6.0;
  d.dR = (k1.dR + 2.0 * k2.dR + 2.0 * k3.dR + k4.dR) / 6.0;
  d.dv = (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv) / 6.0;
  d.domega = (k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega) / 6.0;
  return d;
}

}  // namespace

AgentState step(const AgentState& x, const VecX& u, const ModelParams& params) {
  if (params.dt <= 0.0) throw IntegrationError("step: dt must be positive");
  const double h = params.dt;
  const StateDeriv k1 = derivative(x, u, params);
  const StateDeriv k2 = derivative(advance(x, k1, h / 2.0), u, params);
  const StateDeriv k3 = derivative(advance(x, k2, h / 2.0), u, params);
  const StateDeriv k4 = derivative(advance(x, k3, h), u, params);
  AgentState y = advance(x, combine(k1, k2, k3, k4), h);
  if (params.kind == ModelKind::Quadrotor) y.R = project_to_so3(y.R);
  if (!y.all_finite()) throw IntegrationError("step: non-finite state after integration");
  return y;
}

double mechanical_energy(const AgentState& x, const ModelParams& params) {
  const double kinetic =
      0.5 * params.m * x.v.squaredNorm() + 0.5 * x.omega.dot(params.J * x.omega);
  return kinetic - params.m * params.gvec.dot(x.p);
}

}  // namespace egcbf
