#include <doctest.h>

#include <cstring>

#include "egcbf/checks.hpp"
#include "egcbf/diff.hpp"

using namespace egcbf;
using diff::Tape;
using diff::Tensor;
using diff::VarId;

TEST_CASE("softmax of a uniform row is uniform") {
  Tape t;
  const VarId x = t.leaf(Tensor::Zero(1, 3));
  const Tensor s = t.value(t.softmax_rows(x));
  for (int j = 0; j < 3; ++j) CHECK(s(0, j) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("masked softmax zeroes empty rows and renormalizes the rest") {
  Tape t;
  Tensor x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  Tensor mask(2, 3);
  mask << 1, 0, 1, 0, 0, 0;
  const Tensor s = t.value(t.softmax_rows(t.leaf(x), mask));
  CHECK(s(0, 1) == 0.0);
  CHECK(s(0, 0) + s(0, 2) == doctest::Approx(1.0));
  CHECK(s.row(1).norm() == 0.0);
}

TEST_CASE("gradient of sum of squares") {
  Tape t;
  Tensor x(2, 1);
  x << 1, 2;
  const VarId v = t.leaf(x);
  const VarId out = t.sum(t.mul(v, v));
  t.backward(out);
  CHECK(t.grad(v)(0, 0) == doctest::Approx(2.0));
  CHECK(t.grad(v)(1, 0) == doctest::Approx(4.0));
}

TEST_CASE("gradient of a linear functional is the weight") {
  Tape t;
  Tensor w(1, 4), x(4, 1);
  w << 1, -2, 3, -4;
  x << 0.5, 0.25, -1, 2;
  const VarId xv = t.leaf(x);
  const VarId out = t.matmul(t.constant(w), xv);
  t.backward(out);
  CHECK((t.grad(xv) - w.transpose()).norm() == 0.0);
}

TEST_CASE("gradient of a constant is zero") {
  Tape t;
  const VarId c = t.constant(Tensor::Ones(2, 2));
  const VarId x = t.leaf(Tensor::Ones(2, 2));
  t.backward(t.sum(t.mul(x, x)));
  CHECK(t.grad(c).norm() == 0.0);
}

TEST_CASE("vars from another tape are rejected") {
  Tape t1, t2;
  const VarId a = t1.leaf(Tensor::Ones(2, 2));
  (void)a;
  CHECK_THROWS_AS(t2.value(5), diff::TapeError);
}

TEST_CASE("shape mismatches name the op and shapes") {
  Tape t;
  const VarId a = t.leaf(Tensor::Ones(2, 3));
  const VarId b = t.leaf(Tensor::Ones(3, 2));
  CHECK_THROWS_WITH_AS(t.add(a, b), doctest::Contains("add"), diff::ShapeError);
  CHECK_THROWS_WITH_AS(t.matmul(a, a), doctest::Contains("matmul"), diff::ShapeError);
}

TEST_CASE("NaN poisoning is caught eagerly when enabled") {
  Tape t;
  t.check_finite = true;
  Tensor bad(1, 1);
  bad << 0.0;
  const VarId z = t.leaf(bad);
  const VarId one = t.constant(Tensor::Ones(1, 1));
  CHECK_THROWS_AS(t.div(one, z), diff::TapeError);
}

TEST_CASE("every registered op passes the finite-difference check") {
  for (const auto& r : gradcheck_ops(2024, 20)) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("softmax+sum backward matches the analytic Jacobian on 3x3") {
  Rng rng(9);
  Tensor x(3, 3), w(3, 3);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) {
      x(i, j) = rng.uniform(-1, 1);
      w(i, j) = rng.uniform(-1, 1);
    }
  Tape t;
  const VarId xv = t.leaf(x);
  const VarId s = t.softmax_rows(xv);
  t.backward(t.sum(t.mul(s, t.constant(w))));
  const Tensor g = t.grad(xv);

  // analytic: dL/dx_ij = s_ij (w_ij - sum_k w_ik s_ik) per row
  const Tensor sv = t.value(s);
  for (int i = 0; i < 3; ++i) {
    const double dot = sv.row(i).dot(w.row(i));
    for (int j = 0; j < 3; ++j)
      CHECK(g(i, j) == doctest::Approx(sv(i, j) * (w(i, j) - dot)).epsilon(1e-12));
  }
}

TEST_CASE("composite graph matches finite differences") {
  Rng rng(123);
  Tensor x(4, 3);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 4; ++i) x(i, j) = rng.uniform(-1, 1);
  Tensor w1(3, 5), w2(5, 2);
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 3; ++i) w1(i, j) = rng.uniform(-1, 1);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 5; ++i) w2(i, j) = rng.uniform(-1, 1);

  const auto forward = [&](const Tensor& xin) {
    Tape t;
    const VarId xv = t.leaf(xin);
    const VarId h = t.tanh(t.matmul(xv, t.constant(w1)));
    const VarId s = t.softmax_rows(t.matmul(h, t.constant(w2)));
    return std::pair<Tape, VarId>(std::move(t), s);
  };

  Tape t;
  const VarId xv = t.leaf(x);
  const VarId h = t.tanh(t.matmul(xv, t.constant(w1)));
  const VarId s = t.softmax_rows(t.matmul(h, t.constant(w2)));
  const VarId out = t.l2norm(s);
  t.backward(out);
  const Tensor autodiff = t.grad(xv);

  const Tensor fd = diff::finite_difference(
      [&](const Tensor& xin) {
        auto [tape, sv] = forward(xin);
        return tape.value(sv).norm();
      },
      x);
  CHECK((autodiff - fd).lpNorm<Eigen::Infinity>() /
            std::max(1.0, fd.lpNorm<Eigen::Infinity>()) <
        1e-4);
}

TEST_CASE("forward and backward are bitwise deterministic") {
  Rng rng(31337);
  Tensor x(5, 4);
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 5; ++i) x(i, j) = rng.uniform(-1, 1);

  const auto run = [&]() {
    Tape t;
    const VarId xv = t.leaf(x);
    const VarId y = t.tanh(t.matmul(xv, t.transpose(xv)));
    const VarId out = t.mean(t.softmax_rows(y));
    t.backward(out);
    return std::pair<double, Tensor>(t.scalar(out), t.grad(xv));
  };
  const auto [v1, g1] = run();
  const auto [v2, g2] = run();
  CHECK(std::memcmp(&v1, &v2, sizeof(double)) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), sizeof(double) * g1.size()) == 0);
}

TEST_CASE("repeated backward calls are identical") {
  Tape t;
  Tensor x(3, 1);
  x << 0.3, -0.7, 1.1;
  const VarId xv = t.leaf(x);
  const VarId out = t.l2norm(t.tanh(xv));
  t.backward(out);
  const Tensor g1 = t.grad(xv);
  t.backward(out);
  const Tensor g2 = t.grad(xv);
  CHECK(std::memcmp(g1.data(), g2.data(), sizeof(double) * g1.size()) == 0);
}
