#include <doctest.h>

#include "egcbf/checks.hpp"
#include "egcbf/qp.hpp"
#include "egcbf/rng.hpp"

using namespace egcbf;

namespace {

ControlSet box3(double lo, double hi) {
  ControlSet s;
  s.lo = VecX::Constant(3, lo);
  s.hi = VecX::Constant(3, hi);
  return s;
}

}  // namespace

TEST_CASE("unconstrained interior problem returns the nominal exactly") {
  QPProblem qp;
  qp.q = VecX(3);
  qp.q << 0.3, -0.2, 0.1;
  qp.sets = {box3(-1, 1)};
  qp.A = MatX(0, 3);
  qp.b = VecX(0);
  const QPResult res = solve_qp(qp);
  CHECK(res.status == QPStatus::Solved);
  CHECK((res.u - qp.q).norm() == 0.0);
}

TEST_CASE("feasible nominal under inactive constraints is returned") {
  QPProblem qp;
  qp.q = VecX(3);
  qp.q << 0.1, 0.2, -0.1;
  qp.sets = {box3(-1, 1)};
  qp.A = MatX(1, 3);
  qp.A << 1, 1, 1;
  qp.b = VecX(1);
  qp.b << -5.0;  // generously satisfied at q
  const QPResult res = solve_qp(qp);
  CHECK(res.status == QPStatus::Solved);
  CHECK((res.u - qp.q).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("box bounds hold exactly") {
  QPProblem qp;
  qp.q = VecX(3);
  qp.q << 5, -7, 0.3;
  qp.sets = {box3(-1, 1)};
  qp.A = MatX(0, 3);
  qp.b = VecX(0);
  const QPResult res = solve_qp(qp);
  CHECK(res.u(0) == 1.0);
  CHECK(res.u(1) == -1.0);
  CHECK(res.u(2) == doctest::Approx(0.3));
}

TEST_CASE("qp suite: KKT, analytic projection, grid search") {
  for (const auto& r : check_qp(7001, 100)) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("contradictory halfspaces report infeasibility with a fallback") {
  QPProblem qp;
  qp.q = VecX::Zero(3);
  qp.sets = {box3(-1, 1)};
  qp.A = MatX(2, 3);
  qp.A << 1, 0, 0, -1, 0, 0;
  qp.b = VecX(2);
  qp.b << 0.5, 0.5;  // x >= 0.5 and x <= -0.5
  QPSettings settings;
  settings.max_iter = 6000;
  const QPResult res = solve_qp(qp, settings);
  CHECK(res.status == QPStatus::Infeasible);
  CHECK(qp.sets[0].contains(res.u));  // least-violating iterate still in the box
}

TEST_CASE("a zero row with positive rhs is flagged infeasible") {
  QPProblem qp;
  qp.q = VecX::Zero(3);
  qp.sets = {box3(-1, 1)};
  qp.A = MatX::Zero(1, 3);
  qp.b = VecX(1);
  qp.b << 1.0;
  const QPResult res = solve_qp(qp);
  CHECK(res.status == QPStatus::Infeasible);
}

TEST_CASE("enlarging the control set never worsens the objective") {
  Rng rng(73);
  for (int k = 0; k < 30; ++k) {
    QPProblem qp;
    qp.q = VecX(3);
    qp.q << rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2);
    ControlSet s = box3(-0.5, 0.5);
    if (rng.uniform01() < 0.5) s.xy_radius = 0.4;
    qp.sets = {s};
    qp.A = MatX(1, 3);
    qp.A << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1);
    qp.b = VecX(1);
    qp.b << -0.2;
    const QPResult small = solve_qp(qp);
    QPProblem big = qp;
    big.sets = {s.scaled(2.0)};
    const QPResult large = solve_qp(big);
    if (small.status != QPStatus::Solved || large.status != QPStatus::Solved) continue;
    CHECK((large.u - qp.q).squaredNorm() <= (small.u - qp.q).squaredNorm() + 1e-9);
  }
}

TEST_CASE("cylinder sets are respected and multipliers stay consistent") {
  Rng rng(79);
  for (int k = 0; k < 30; ++k) {
    QPProblem qp;
    qp.q = VecX(3);
    qp.q << rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-1, 1);
    ControlSet s = box3(-3, 3);
    s.xy_radius = 2.0;
    qp.sets = {s};
    qp.A = MatX(1, 3);
    qp.A << rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0;
    qp.b = VecX(1);
    qp.b << rng.uniform(-1.0, 0.5);
    const QPResult res = solve_qp(qp);
    REQUIRE(res.status == QPStatus::Solved);
    CHECK(res.u.head<2>().norm() <= 2.0 + 1e-9);
    CHECK(kkt_residuals(qp, res).max_residual() < 1e-6);
  }
}
