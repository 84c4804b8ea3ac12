#include <doctest.h>

#include <cstdio>
#include <cstring>

#include "egcbf/checks.hpp"
#include "egcbf/net.hpp"

using namespace egcbf;

namespace {

WorldConfig base_world() {
  WorldConfig cfg;
  cfg.side_length = 2.0;
  return cfg;
}

}  // namespace

TEST_CASE("ego's own canonical feature is centered with zero yaw") {
  Rng rng(3);
  const WorldConfig cfg = base_world();
  const Episode ep = random_scene(rng, ModelKind::Quadrotor, 3, 1, cfg);
  const GraphSnapshot g = snapshot_episode(ep, cfg);
  for (int ego = 0; ego < 3; ++ego) {
    const Subgraph sub = ego_subgraph(g, ego);
    const MatX f = canonical_features(g, sub);
    REQUIRE(f.cols() == kFeatureDim);
    const auto row = f.row(sub.ego_local);
    CHECK(row.segment<3>(3).norm() < 1e-10);        // position
    CHECK(std::abs(row(7)) < 1e-10);                // R(1,0): zero yaw
    CHECK(row(6) > 0.0);                            // R(0,0) = cos(pitchish) > 0
  }
}

TEST_CASE("canonical features are invariant under scene motion") {
  Rng rng(5);
  const WorldConfig cfg = base_world();
  for (int k = 0; k < 20; ++k) {
    const Episode ep = random_scene(rng, ModelKind::Quadrotor, 3, 2, cfg);
    const GroupElement g = random_group(rng, 2.0);
    const GraphSnapshot a = snapshot_episode(ep, cfg);
    const GraphSnapshot b = snapshot_episode(transform_episode(ep, g), cfg);
    for (int ego = 0; ego < 3; ++ego) {
      const MatX fa = canonical_features(a, ego_subgraph(a, ego));
      const MatX fb = canonical_features(b, ego_subgraph(b, ego));
      REQUIRE(fa.rows() == fb.rows());
      CHECK((fa - fb).lpNorm<Eigen::Infinity>() < 1e-10);
    }
  }
}

TEST_CASE("a single neighbor due north lands on the canonical x-axis") {
  // ego at yaw pi/2; neighbor 0.95 along +y (within comm range); in the ego
  // frame the offset is Rz(-pi/2) (0, 0.95, dz) = (0.95, 0, dz).
  const WorldConfig cfg = base_world();
  Episode ep;
  AgentState ego;
  ego.p = Vec3(1, 1, 1);
  ego.R = rotz(kPi / 2);
  AgentState other;
  other.p = ego.p + Vec3(0, 0.95, 0.25);
  ep.states = {ego, other};
  ep.targets = {Vec3(0.5, 0.5, 0.5), Vec3(1.5, 1.5, 1.5)};
  const GraphSnapshot g = snapshot_episode(ep, cfg);
  const Subgraph sub = ego_subgraph(g, 0);
  const MatX f = canonical_features(g, sub);
  int other_local = -1;
  for (size_t i = 0; i < sub.nodes.size(); ++i)
    if (g.nodes[sub.nodes[i]].kind == NodeKind::Agent && g.nodes[sub.nodes[i]].agent == 1)
      other_local = static_cast<int>(i);
  REQUIRE(other_local >= 0);
  const Vec3 rel = f.row(other_local).segment<3>(3);
  CHECK((rel - Vec3(0.95, 0, 0.25)).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("policy equivariance and cbf invariance for random parameters") {
  for (const auto& r : check_equivariance(904, 40)) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("equivariance is structural: corruption keeps it, skipping breaks it") {
  for (const auto& r : check_canonicalization_ablation(515)) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("graph-level action audit on a recorded snapshot") {
  Rng rng(41);
  const WorldConfig cfg = base_world();
  const Episode ep = random_scene(rng, ModelKind::Quadrotor, 4, 2, cfg);
  const GraphSnapshot g = snapshot_episode(ep, cfg);
  for (const auto& r : check_equivariance_graph(g, 7)) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("agent permutation leaves each agent's control unchanged") {
  Rng rng(43);
  const WorldConfig cfg = base_world();
  const Episode ep = random_scene(rng, ModelKind::DoubleIntegrator, 4, 0, cfg);
  const ModelParams model = ModelParams::double_integrator();
  NetConfig nc;
  nc.d_model = 32;
  nc.d_ff = 48;
  const NetParams policy = NetParams::init_policy(nc, model, 99);

  Episode relabeled = ep;
  const std::vector<int> perm = {3, 1, 0, 2};
  for (int i = 0; i < 4; ++i) {
    relabeled.states[i] = ep.states[perm[i]];
    relabeled.targets[i] = ep.targets[perm[i]];
  }
  const auto u = policy_controls(policy, snapshot_episode(ep, cfg));
  const auto v = policy_controls(policy, snapshot_episode(relabeled, cfg));
  for (int i = 0; i < 4; ++i)
    CHECK((v[i] - u[perm[i]]).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("zero parameters squash to the control-box center") {
  const WorldConfig cfg = base_world();
  Rng rng(47);
  const Episode ep = random_scene(rng, ModelKind::Quadrotor, 2, 0, cfg);
  const ModelParams model = ModelParams::quadrotor();
  NetConfig nc;
  NetParams policy = NetParams::init_policy(nc, model, 1);
  for (auto& [name, tensor] : policy.t) tensor.setZero();
  const GraphSnapshot g = snapshot_episode(ep, cfg);
  const VecX u = forward_policy(policy, g, 0);
  CHECK((u - 0.5 * (model.bounds.lo + model.bounds.hi)).lpNorm<Eigen::Infinity>() < 1e-12);

  NetParams cbf = NetParams::init_cbf(nc, 2);
  for (auto& [name, tensor] : cbf.t) tensor.setZero();
  CHECK(forward_cbf(cbf, g, 0) == 0.0);
}

TEST_CASE("agents beyond the communication radius do not affect the CBF") {
  const WorldConfig cfg = base_world();
  Episode ep;
  ep.states = {AgentState::at_rest(Vec3(0.5, 0.5, 0.5)),
               AgentState::at_rest(Vec3(0.9, 0.5, 0.5))};
  ep.targets = {Vec3(1.2, 1.2, 1.2), Vec3(0.2, 0.2, 0.2)};
  NetConfig nc;
  const NetParams cbf = NetParams::init_cbf(nc, 3);
  const double h0 = forward_cbf(cbf, snapshot_episode(ep, cfg), 0);

  Episode dup = ep;  // a far-away duplicate joins the swarm
  dup.states.push_back(AgentState::at_rest(Vec3(40, 40, 40)));
  dup.targets.push_back(Vec3(41, 41, 41));
  const double h1 = forward_cbf(cbf, snapshot_episode(dup, cfg), 0);
  CHECK(h0 == h1);
}

TEST_CASE("cbf value stays finite on a degenerate single-node subgraph") {
  const WorldConfig cfg = base_world();
  Episode ep;
  ep.states = {AgentState::at_rest(Vec3(1, 1, 1))};
  ep.targets = {Vec3(40, 40, 40)};  // target out of play, but still linked
  NetConfig nc;
  const NetParams cbf = NetParams::init_cbf(nc, 4);
  const GraphSnapshot g = snapshot_episode(ep, cfg);
  CHECK(std::isfinite(forward_cbf(cbf, g, 0)));
}

TEST_CASE("cbf input gradients: locality, finite differences, pushforward") {
  Rng rng(53);
  const WorldConfig cfg = base_world();
  Episode ep = random_scene(rng, ModelKind::Quadrotor, 3, 0, cfg);
  ep.states.push_back(AgentState::at_rest(Vec3(30, 30, 30)));  // outside everyone
  ep.targets.push_back(Vec3(31, 31, 31));
  const GraphSnapshot g = snapshot_episode(ep, cfg);
  NetConfig nc;
  nc.d_model = 32;
  nc.d_ff = 48;
  const NetParams cbf = NetParams::init_cbf(nc, 5);

  SUBCASE("nodes outside the ego subgraph have no gradient entry") {
    const CbfGradients grads = cbf_input_gradients(cbf, g, 0);
    CHECK(grads.by_node.count(g.agent_node[3]) == 0);
  }

  SUBCASE("pushforward: gradients of the moved scene are rotated gradients") {
    const GroupElement gel = random_group(rng, 1.0);
    const Mat3 Z = rotz(gel.theta);
    const GraphSnapshot moved = snapshot_episode(transform_episode(ep, gel), cfg);
    const CbfGradients a = cbf_input_gradients(cbf, g, 0);
    const CbfGradients b = cbf_input_gradients(cbf, moved, 0);
    for (const auto& [node, ga] : a.by_node) {
      REQUIRE(b.by_node.count(node) == 1);
      const StateGrad& gb = b.by_node.at(node);
      CHECK((gb.dp - Z * ga.dp).lpNorm<Eigen::Infinity>() < 1e-7);
      CHECK((gb.dv - Z * ga.dv).lpNorm<Eigen::Infinity>() < 1e-7);
      CHECK((gb.dR - Z * ga.dR).lpNorm<Eigen::Infinity>() < 1e-7);
      CHECK((gb.domega - ga.domega).lpNorm<Eigen::Infinity>() < 1e-7);
    }
  }
}

TEST_CASE("haar invariantizer suite") {
  for (const auto& r : check_haar(606)) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("checkpoint arrays round-trip bit-exactly") {
  Rng rng(59);
  NetConfig nc;
  nc.d_model = 16;
  nc.d_ff = 24;
  const ModelParams model = ModelParams::double_integrator();
  const NetParams policy = NetParams::init_policy(nc, model, rng.next_u64());

  std::map<std::string, MatX> arrays;
  pack_net("policy", policy, arrays);
  const std::string path = "/tmp/egcbf_ckpt_test.bin";
  save_arrays(path, arrays);
  const auto loaded = load_arrays(path);
  REQUIRE(loaded.size() == arrays.size());
  for (const auto& [name, m] : arrays) {
    REQUIRE(loaded.count(name) == 1);
    const MatX& l = loaded.at(name);
    REQUIRE(l.rows() == m.rows());
    REQUIRE(l.cols() == m.cols());
    CHECK(std::memcmp(l.data(), m.data(), sizeof(double) * m.size()) == 0);
  }
  const NetParams back = unpack_net("policy", loaded);
  CHECK(back.cfg.d_model == nc.d_model);
  CHECK(back.model == ModelKind::DoubleIntegrator);
  CHECK(back.out_dim == 3);
  CHECK(back.squash_xy_radius == policy.squash_xy_radius);
  std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string path = "/tmp/egcbf_ckpt_bad.bin";
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("not a checkpoint at all", f);
    std::fclose(f);
  }
  CHECK_THROWS(load_arrays(path));
  std::remove(path.c_str());
}

TEST_CASE("parameter count matches the architecture") {
  NetConfig nc;
  const NetParams cbf = NetParams::init_cbf(nc, 1);
  size_t expect = 21 * 64 + 64;                                   // embed
  expect += 2 * (3 * 64 * 64 + 64 * 128 + 128 + 128 * 64 + 64);    // layers
  expect += 64 * 64 + 64 + 64 * 1 + 1;                             // head
  CHECK(cbf.parameter_count() == expect);
}
