#pragma once

// Control-affine robot models: a 6-DOF quadrotor and a 3-D double integrator,
// both advanced by a fixed-step RK4 integrator.

#include <stdexcept>
#include <string>

#include "egcbf/state.hpp"
#include "egcbf/types.hpp"

namespace egcbf {

/// Admissible control set. Componentwise intervals, optionally with a radial
/// bound on the first two components so the set is invariant under z-rotations
/// (used by the double integrator; the quadrotor's body-frame box needs none).
struct ControlSet {
  VecX lo, hi;
  double xy_radius = 0.0;

  VecX project(const VecX& u) const;
  bool contains(const VecX& u, double tol = 1e-9) const;
  ControlSet scaled(double factor) const;
};

struct ModelParams {
  ModelKind kind = ModelKind::Quadrotor;
  double m = 0.1;
  Mat3 J = (Vec3(1.5e-4, 1.5e-4, 3e-4)).asDiagonal();
  Vec3 gvec = Vec3(0.0, 0.0, -9.81);
  double dt = 0.03;
  ControlSet bounds;

  static ModelParams quadrotor();
  static ModelParams double_integrator();
  int nu() const { return control_dim(kind); }
};

/// Tangent of the state: (dp, dR, dv, domega).
struct StateDeriv {
  Vec3 dp = Vec3::Zero();
  Mat3 dR = Mat3::Zero();
  Vec3 dv = Vec3::Zero();
  Vec3 domega = Vec3::Zero();
};

struct IntegrationError : std::runtime_error {
  explicit IntegrationError(const std::string& what) : std::runtime_error(what) {}
};

/// Control-affine vector field f(x, u) = f0(x) + f1(x) u.
StateDeriv derivative(const AgentState& x, const VecX& u, const ModelParams& params);

/// Drift term f0(x) (the u = 0 field).
StateDeriv drift(const AgentState& x, const ModelParams& params);

/// Control influence on the linear acceleration: dv/dt += Bv(x) u.
MatX control_matrix_v(const AgentState& x, const ModelParams& params);

/// Control influence on the angular acceleration: domega/dt += Bw u.
MatX control_matrix_omega(const ModelParams& params);

/// One RK4 step of dt; the rotation is re-orthonormalized (polar projection)
/// afterwards. Throws IntegrationError on non-finite results.
AgentState step(const AgentState& x, const VecX& u, const ModelParams& params);

/// Kinetic + potential energy (for conservation tests with zero input).
double mechanical_energy(const AgentState& x, const ModelParams& params);

}  // namespace egcbf
