#include <doctest.h>

#include "egcbf/checks.hpp"
#include "egcbf/safectrl.hpp"

using namespace egcbf;

TEST_CASE("nominal control at rest on target is near zero / hover") {
  SUBCASE("double integrator") {
    const ModelParams p = ModelParams::double_integrator();
    AgentState x;
    x.p = Vec3(1, 1, 1);
    const VecX u = nominal_control(x, x.p, p);
    CHECK(u.norm() < 1e-12);
  }
  SUBCASE("quadrotor hovers") {
    const ModelParams p = ModelParams::quadrotor();
    AgentState x;
    x.p = Vec3(1, 1, 1);
    const VecX u = nominal_control(x, x.p, p);
    CHECK(u.head<3>().norm() < 1e-9);
    CHECK(u(3) == doctest::Approx(9.81 * p.m).epsilon(1e-9));
  }
}

TEST_CASE("double integrator at rest accelerates toward the target") {
  const ModelParams p = ModelParams::double_integrator();
  Rng rng(7);
  for (int k = 0; k < 40; ++k) {
    AgentState x;
    x.p = rng.uniform_vec3(0, 2);
    const Vec3 target = rng.uniform_vec3(0, 2);
    if ((target - x.p).norm() < 1e-6) continue;
    const VecX u = nominal_control(x, target, p);
    CHECK(u.head<3>().dot(target - x.p) > 0.0);
  }
}

TEST_CASE("nominal controllers are equivariant") {
  Rng rng(11);
  for (const ModelParams& p :
       {ModelParams::double_integrator(), ModelParams::quadrotor()}) {
    for (int k = 0; k < 60; ++k) {
      AgentState x;
      x.p = rng.uniform_vec3(-1, 1);
      x.v = rng.normal_vec3(0.5);
      if (p.kind == ModelKind::Quadrotor) {
        do {
          x.R = random_rotation(rng);
        } while (std::hypot(x.R(0, 0), x.R(1, 0)) < 0.05);
        x.omega = rng.normal_vec3(0.5);
      }
      const Vec3 target = rng.uniform_vec3(-1, 1);
      const GroupElement g = random_group(rng, 2.0);
      const Vec3 target_g = rotz(g.theta) * target + g.lambda;
      const VecX lhs = nominal_control(act_state(g, x), target_g, p);
      const VecX rhs = act_control(g, nominal_control(x, target, p), p.kind);
      CHECK((lhs - rhs).lpNorm<Eigen::Infinity>() < 1e-9);
    }
  }
}

TEST_CASE("hand-crafted pair CBF values") {
  const double r = 0.1;
  AgentState a, b;
  SUBCASE("static agents at twice the radius are safe") {
    b.p = Vec3(2 * r, 0, 0);
    CHECK(handcrafted_cbf(a, b, r) > 0.0);
  }
  SUBCASE("static agents exactly at the radius sit on the boundary") {
    b.p = Vec3(r, 0, 0);
    CHECK(handcrafted_cbf(a, b, r) == doctest::Approx(0.0));
  }
  SUBCASE("near-coincident positions stay finite via the clamped denominator") {
    b.p = Vec3(1e-12, 0, 0);
    b.v = Vec3(1, 0, 0);
    CHECK(std::isfinite(handcrafted_cbf(a, b, r)));
  }
}

TEST_CASE("pair CBF time derivative matches finite differences along the flow") {
  const ModelParams p = ModelParams::double_integrator();
  Rng rng(13);
  const double r = 0.1;
  for (int k = 0; k < 40; ++k) {
    AgentState a, b;
    a.p = rng.uniform_vec3(-1, 1);
    b.p = a.p + rng.normal_vec3(0.5);
    if ((a.p - b.p).norm() < 0.2) continue;
    a.v = rng.normal_vec3(0.6);
    b.v = rng.normal_vec3(0.6);
    const VecX ua = VecX(rng.normal_vec3(1.0));
    const VecX ub = VecX(rng.normal_vec3(1.0));

    const PairRow row = handcrafted_cbf_row(a, b, r);
    const double analytic = row.ai.dot(ua.head<3>()) + row.aj.dot(ub.head<3>()) + row.rest;

    const double eps = 1e-6;
    ModelParams fine = p;
    fine.dt = eps;
    const double hp = handcrafted_cbf(step(a, ua, fine), step(b, ub, fine), r);
    const double hm = handcrafted_cbf(a, b, r);
    CHECK(analytic == doctest::Approx((hp - hm) / eps).epsilon(1e-4));
  }
}

TEST_CASE("pair CBF decreases on head-on approach") {
  const double r = 0.1;
  AgentState a, b;
  b.p = Vec3(1.0, 0, 0);
  a.v = Vec3(0.8, 0, 0);
  b.v = Vec3(-0.8, 0, 0);
  double prev = handcrafted_cbf(a, b, r);
  const ModelParams p = ModelParams::double_integrator();
  AgentState xa = a, xb = b;
  for (int t = 0; t < 10; ++t) {
    xa = step(xa, VecX::Zero(3), p);
    xb = step(xb, VecX::Zero(3), p);
    const double h = handcrafted_cbf(xa, xb, r);
    CHECK(h < prev);
    prev = h;
  }
}

TEST_CASE("constraint value with zero gradients reduces to alpha(h)") {
  const ModelParams p = ModelParams::double_integrator();
  WorldConfig cfg;
  cfg.num_agents = 2;
  cfg.num_obstacles = 0;
  cfg.seed = 3;
  const Episode ep = sample_episode(cfg);
  const GraphSnapshot graph = snapshot_episode(ep, cfg);
  const CbfOracle oracle = [](const GraphSnapshot&, int) {
    return EgoCbfData{0.42, {}};
  };
  const ClassK alpha{2.0};
  const std::vector<VecX> controls(2, VecX::Zero(3));
  const VecX values = cbf_constraint_values(oracle, graph, controls, p, alpha);
  for (int i = 0; i < 2; ++i) CHECK(values(i) == doctest::Approx(0.84));
}

TEST_CASE("constraint value matches the symbolic pair derivative head-on") {
  const ModelParams p = ModelParams::double_integrator();
  WorldConfig cfg;
  cfg.num_agents = 2;
  cfg.num_obstacles = 0;
  Episode ep;
  AgentState a, b;
  a.p = Vec3(0.5, 1, 1);
  b.p = Vec3(1.2, 1, 1);
  a.v = Vec3(0.5, 0, 0);
  b.v = Vec3(-0.5, 0, 0);
  ep.states = {a, b};
  ep.targets = {Vec3(1.8, 1, 1), Vec3(0.2, 1, 1)};
  const GraphSnapshot graph = snapshot_episode(ep, cfg);
  const ClassK alpha{1.0};
  const PairCbf cbf;
  const double r = cfg.safety_radius;

  // oracle: analytic gradients of the pair CBF for each ego
  const CbfOracle oracle = [&](const GraphSnapshot& g, int ego) {
    const int other = 1 - ego;
    const AgentState& xi = g.nodes[g.agent_node[ego]].state;
    const AgentState& xj = g.nodes[g.agent_node[other]].state;
    const Vec3 dp = xi.p - xj.p;
    const Vec3 dv = xi.v - xj.v;
    const double d = dp.norm();
    const double pv = dp.dot(dv);
    EgoCbfData data;
    data.h = dp.squaredNorm() - r * r + cbf.c * pv / d;
    StateGrad gi, gj;
    const Vec3 dh_ddp = 2.0 * dp + cbf.c * (dv / d - pv * dp / (d * d * d));
    const Vec3 dh_ddv = cbf.c * dp / d;
    gi.dp = dh_ddp;
    gi.dv = dh_ddv;
    gj.dp = -dh_ddp;
    gj.dv = -dh_ddv;
    data.grads[g.agent_node[ego]] = gi;
    data.grads[g.agent_node[other]] = gj;
    return data;
  };

  Rng rng(17);
  const std::vector<VecX> controls = {VecX(rng.normal_vec3()), VecX(rng.normal_vec3())};
  const VecX values = cbf_constraint_values(oracle, graph, controls, p, alpha);
  for (int ego = 0; ego < 2; ++ego) {
    const PairRow row = handcrafted_cbf_row(ep.states[ego], ep.states[1 - ego], r, cbf);
    const double expect = row.ai.dot(controls[ego].head<3>()) +
                          row.aj.dot(controls[1 - ego].head<3>()) + row.rest + alpha(row.h);
    CHECK(values(ego) == doctest::Approx(expect).epsilon(1e-8));
  }
}

TEST_CASE("constraint evaluation rejects missing controls") {
  WorldConfig cfg;
  cfg.num_agents = 2;
  cfg.num_obstacles = 0;
  cfg.seed = 5;
  const GraphSnapshot graph = snapshot_episode(sample_episode(cfg), cfg);
  const CbfOracle oracle = [](const GraphSnapshot&, int) { return EgoCbfData{}; };
  const std::vector<VecX> one_control(1, VecX::Zero(3));
  CHECK_THROWS_AS(cbf_constraint_values(oracle, graph, one_control,
                                        ModelParams::double_integrator(), ClassK{}),
                  std::invalid_argument);
}

TEST_CASE("constraint values are preserved under the group action") {
  for (const auto& r : check_lemma2(303, 30)) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("QP filter commutes with the group action") {
  Rng rng(19);
  WorldConfig base;
  NetConfig nc;
  nc.d_model = 32;
  nc.d_ff = 48;
  double worst = 0.0;
  for (int k = 0; k < 16; ++k) {
    const ModelParams params = (k % 2 == 0) ? ModelParams::quadrotor()
                                            : ModelParams::double_integrator();
    const Episode ep = random_scene(rng, params.kind, 3, 0, base);
    const NetParams cbf = NetParams::init_cbf(nc, rng.next_u64());
    const GroupElement g = random_group(rng, 1.5);
    const ClassK alpha{1.0};
    const auto oracle = make_net_cbf_oracle(cbf);

    const auto solve_scene = [&](const Episode& scene) {
      std::vector<VecX> u_nom;
      for (size_t i = 0; i < scene.states.size(); ++i)
        u_nom.push_back(nominal_control(scene.states[i], scene.targets[i], params));
      const GraphSnapshot graph = snapshot_episode(scene, base);
      const QPProblem qp = build_cbf_qp(oracle, graph, u_nom, params, alpha);
      return solve_qp(qp);
    };
    const QPResult plain = solve_scene(ep);
    const QPResult moved = solve_scene(transform_episode(ep, g));
    if (plain.status != QPStatus::Solved || moved.status != QPStatus::Solved) continue;
    const int nu = params.nu();
    for (int i = 0; i < 3; ++i) {
      const VecX expect = act_control(g, VecX(plain.u.segment(i * nu, nu)), params.kind);
      worst = std::max(worst,
                       (VecX(moved.u.segment(i * nu, nu)) - expect).lpNorm<Eigen::Infinity>());
    }
  }
  CHECK(worst < 1e-5);  // 10x the QP tolerance
}

TEST_CASE("forward invariance smoke test (reduced size)") {
  for (const auto& r : check_forward_invariance(42, 10, 300)) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}
