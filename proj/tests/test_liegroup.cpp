#include <doctest.h>

#include "egcbf/checks.hpp"
#include "egcbf/liegroup.hpp"

using namespace egcbf;

TEST_CASE("angle wrapping covers the boundary") {
  CHECK(wrap_angle(kPi) == doctest::Approx(-kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(-kPi));
  CHECK(wrap_angle(3 * kPi) == doctest::Approx(-kPi));
  CHECK(wrap_angle(0.3) == doctest::Approx(0.3));
  CHECK(wrap_angle(2 * kPi + 0.3) == doctest::Approx(0.3));
}

TEST_CASE("compose with identity returns the element") {
  Rng rng(7);
  for (int k = 0; k < 50; ++k) {
    const GroupElement g = random_group(rng, 3.0);
    const GroupElement l = compose(group_identity(), g);
    const GroupElement r = compose(g, group_identity());
    CHECK(l.theta == doctest::Approx(g.theta).epsilon(1e-14));
    CHECK((l.lambda - g.lambda).norm() == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(r.theta == doctest::Approx(g.theta).epsilon(1e-14));
    CHECK((r.lambda - g.lambda).norm() == doctest::Approx(0.0).epsilon(1e-14));
  }
}

TEST_CASE("quarter turns compose to a wrapped half turn") {
  const GroupElement quarter = make_group(kPi / 2, Vec3::Zero());
  const GroupElement half = compose(quarter, quarter);
  CHECK(half.theta == doctest::Approx(-kPi));  // pi wraps to -pi
  CHECK(half.lambda.norm() == doctest::Approx(0.0));
}

TEST_CASE("compose matches the homogeneous matrix product") {
  Rng rng(11);
  for (int k = 0; k < 200; ++k) {
    const GroupElement a = random_group(rng, 2.0);
    const GroupElement b = random_group(rng, 2.0);
    const Mat4 oracle = group_matrix(a) * group_matrix(b);
    CHECK((group_matrix(compose(a, b)) - oracle).lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("group axiom suite passes") {
  for (const auto& r : check_group(101)) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("act_state geometry") {
  AgentState x;
  x.p = Vec3(1, 0, 0);

  SUBCASE("identity leaves the state alone") {
    const AgentState y = act_state(group_identity(), x);
    CHECK((y.p - x.p).norm() == doctest::Approx(0.0));
    CHECK((y.R - x.R).norm() == doctest::Approx(0.0));
  }
  SUBCASE("quarter turn moves +x to +y") {
    const AgentState y = act_state(make_group(kPi / 2, Vec3::Zero()), x);
    CHECK((y.p - Vec3(0, 1, 0)).norm() < 1e-12);
  }
  SUBCASE("inverse action undoes the action") {
    Rng rng(3);
    for (int k = 0; k < 100; ++k) {
      const GroupElement g = random_group(rng, 2.0);
      const AgentState s = act_state(inverse(g), act_state(g, x));
      CHECK((s.p - x.p).lpNorm<Eigen::Infinity>() < 1e-12);
      CHECK((s.R - x.R).lpNorm<Eigen::Infinity>() < 1e-12);
    }
  }
}

TEST_CASE("act_control transforms by model") {
  Rng rng(5);
  const GroupElement g = random_group(rng, 1.0);

  VecX quad(4);
  quad << 0.01, -0.02, 0.03, 0.9;
  CHECK((act_control(g, quad, ModelKind::Quadrotor) - quad).norm() == doctest::Approx(0.0));

  VecX accel(3);
  accel << 1, 0, 0;
  const VecX flipped = act_control(make_group(kPi, Vec3::Zero()), accel,
                                   ModelKind::DoubleIntegrator);
  CHECK(flipped(0) == doctest::Approx(-1.0));
  CHECK(flipped(1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK((act_control(group_identity(), accel, ModelKind::DoubleIntegrator) - accel).norm() ==
        doctest::Approx(0.0));
}

TEST_CASE("frame_of extracts yaw and position") {
  AgentState x;
  CHECK(frame_of(x).theta == doctest::Approx(0.0));
  CHECK(frame_of(x).lambda.norm() == doctest::Approx(0.0));

  x.p = Vec3(1, 2, 3);
  x.R = rotz(0.7);
  const GroupElement f = frame_of(x);
  CHECK(f.theta == doctest::Approx(0.7));
  CHECK((f.lambda - Vec3(1, 2, 3)).norm() == doctest::Approx(0.0));

  // canonicalized state sits at the origin with zero yaw
  const AgentState canon = act_state(inverse(f), x);
  CHECK(canon.p.norm() < 1e-12);
  CHECK(yaw_of(canon.R) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("rotation projection restores orthonormality") {
  Rng rng(17);
  for (int k = 0; k < 100; ++k) {
    Mat3 noisy = random_rotation(rng);
    noisy += 1e-3 * Mat3::Random();
    const Mat3 R = project_to_so3(noisy);
    CHECK((R.transpose() * R - Mat3::Identity()).norm() < 1e-10);
    CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-10));
  }
}
