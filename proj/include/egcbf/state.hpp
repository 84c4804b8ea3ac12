#pragma once

#include <Eigen/Core>

#include "egcbf/types.hpp"

namespace egcbf {

enum class ModelKind { DoubleIntegrator, Quadrotor };

/// Dimension of the control vector: (ax, ay, az) or (tau_x, tau_y, tau_z, f3).
inline int control_dim(ModelKind kind) {
  return kind == ModelKind::DoubleIntegrator ? 3 : 4;
}

/// Per-robot state: pose (p, R) plus twist. v is the world-frame linear
/// velocity, omega the body-frame angular rate.
struct AgentState {
  Vec3 p = Vec3::Zero();
  Mat3 R = Mat3::Identity();
  Vec3 v = Vec3::Zero();
  Vec3 omega = Vec3::Zero();

  static AgentState at_rest(const Vec3& pos) {
    AgentState x;
    x.p = pos;
    return x;
  }

  bool all_finite() const {
    return p.allFinite() && R.allFinite() && v.allFinite() && omega.allFinite();
  }
};

}  // namespace egcbf
