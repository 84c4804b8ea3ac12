#pragma once

// The symmetry group of the swarm: rotations about the world z-axis combined
// with arbitrary 3-D translations (gravity breaks the rest of SE(3)).
// Elements act on rigid-body states, on controls and on node features.

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "egcbf/rng.hpp"
#include "egcbf/state.hpp"
#include "egcbf/types.hpp"

namespace egcbf {

/// Wrap an angle to [-pi, pi).
inline double wrap_angle(double theta) {
  return theta - 2.0 * kPi * std::floor((theta + kPi) / (2.0 * kPi));
}

inline Mat3 rotz(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Mat3 R;
  R << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  return R;
}

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

inline Vec3 unskew(const Mat3& m) {
  return Vec3(m(2, 1), m(0, 2), m(1, 0));
}

/// Yaw convention: angle of the body x-axis projected onto the world xy-plane.
/// atan2(0, 0) = 0 covers the gimbal-degenerate case, so this never fails.
inline double yaw_of(const Mat3& R) { return std::atan2(R(1, 0), R(0, 0)); }

/// Nearest rotation matrix in Frobenius norm (polar factor via SVD).
inline Mat3 project_to_so3(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

/// Uniform random rotation (normalized Gaussian quaternion).
inline Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

/// Group element (theta, lambda): rotation about world z by theta followed by
/// translation lambda. theta is stored wrapped to [-pi, pi).
struct GroupElement {
  double theta = 0.0;
  Vec3 lambda = Vec3::Zero();
};

inline GroupElement group_identity() { return {}; }

inline GroupElement make_group(double theta, const Vec3& lambda) {
  return {wrap_angle(theta), lambda};
}

inline GroupElement compose(const GroupElement& a, const GroupElement& b) {
  return {wrap_angle(a.theta + b.theta), rotz(a.theta) * b.lambda + a.lambda};
}

inline GroupElement inverse(const GroupElement& g) {
  return {wrap_angle(-g.theta), -(rotz(-g.theta) * g.lambda)};
}

/// 4x4 homogeneous matrix form.
inline Mat4 group_matrix(const GroupElement& g) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotz(g.theta);
  m.topRightCorner<3, 1>() = g.lambda;
  return m;
}

inline GroupElement random_group(Rng& rng, double translation_scale = 1.0) {
  const double theta = rng.uniform(-kPi, kPi);
  return make_group(theta, rng.uniform_vec3(-translation_scale, translation_scale));
}

/// Action on states: the pose is moved by g; the world-frame velocity rotates
/// with the pose while the body-frame angular rate is frame-attached and
/// stays put.
inline AgentState act_state(const GroupElement& g, const AgentState& x) {
  const Mat3 Z = rotz(g.theta);
  AgentState y;
  y.p = Z * x.p + g.lambda;
  y.R = Z * x.R;
  y.v = Z * x.v;
  y.omega = x.omega;
  return y;
}

/// Action on controls. Quadrotor torque and thrust are body-frame quantities
/// and do not transform; the double-integrator acceleration command is a
/// world-frame vector and rotates.
inline VecX act_control(const GroupElement& g, const VecX& u, ModelKind kind) {
  if (kind == ModelKind::Quadrotor) return u;
  VecX out = u;
  out.head<3>() = rotz(g.theta) * u.head<3>();
  return out;
}

/// The group element carried by a state: z-rotation by the yaw of R plus the
/// translation to p. act_state(inverse(frame_of(x)), x) has zero position and
/// zero yaw.
inline GroupElement frame_of(const AgentState& x) {
  return make_group(yaw_of(x.R), x.p);
}

}  // namespace egcbf
