#include <doctest.h>

#include <algorithm>

#include "egcbf/graph.hpp"

using namespace egcbf;

namespace {

Episode two_agent_scene(double separation, const WorldConfig& cfg) {
  Episode ep;
  ep.states.push_back(AgentState::at_rest(Vec3(0.2, 0.2, 0.2)));
  ep.states.push_back(AgentState::at_rest(Vec3(0.2 + separation, 0.2, 0.2)));
  ep.targets = {Vec3(1, 1, 1), Vec3(1.5, 1.5, 1.5)};
  (void)cfg;
  return ep;
}

}  // namespace

TEST_CASE("single agent yields agent plus target") {
  WorldConfig cfg;
  cfg.num_agents = 1;
  cfg.num_obstacles = 0;
  const Episode ep = sample_episode(cfg);
  const GraphSnapshot g = snapshot_episode(ep, cfg);
  REQUIRE(g.nodes.size() == 2);
  CHECK(g.nodes[0].kind == NodeKind::Agent);
  CHECK(g.nodes[1].kind == NodeKind::Target);
  REQUIRE(g.edges.size() == 1);
  CHECK(g.edges[0].first == 0);
  CHECK(g.edges[0].second == 1);
}

TEST_CASE("agent-agent edges follow the communication radius") {
  WorldConfig cfg;
  SUBCASE("inside comm range: bidirectional edges") {
    const Episode ep = two_agent_scene(cfg.comm_range / 2, cfg);
    const GraphSnapshot g = snapshot_episode(ep, cfg);
    const auto has = [&](int r, int s) {
      return std::find(g.edges.begin(), g.edges.end(), std::make_pair(r, s)) != g.edges.end();
    };
    CHECK(has(0, 1));
    CHECK(has(1, 0));
  }
  SUBCASE("outside comm range: no agent-agent edge") {
    const Episode ep = two_agent_scene(1.5 * cfg.comm_range, cfg);
    const GraphSnapshot g = snapshot_episode(ep, cfg);
    for (const auto& [r, s] : g.edges) {
      const bool both_agents =
          g.nodes[r].kind == NodeKind::Agent && g.nodes[s].kind == NodeKind::Agent;
      CHECK_FALSE(both_agents);
    }
  }
}

TEST_CASE("feature layout is kind | p | R | v | omega") {
  GraphNode node;
  node.kind = NodeKind::Agent;
  node.state.p = Vec3(1, 2, 3);
  node.state.v = Vec3(4, 5, 6);
  node.state.omega = Vec3(7, 8, 9);
  const VecX f = node_feature(node);
  REQUIRE(f.size() == kFeatureDim);
  CHECK(f(0) == 1.0);  // one-hot agent
  CHECK(f(3) == 1.0);
  CHECK(f(6) == 1.0);   // R(0,0)
  CHECK(f(10) == 1.0);  // R(1,1) in column-major layout
  CHECK(f(15) == 4.0);
  CHECK(f(18) == 7.0);
}

TEST_CASE("ego subgraph slices the one-hop neighborhood") {
  WorldConfig cfg;
  cfg.num_agents = 8;
  cfg.num_obstacles = 0;
  cfg.side_length = 0.9;  // everyone within comm range: a clique
  cfg.seed = 21;
  const Episode ep = sample_episode(cfg);
  const GraphSnapshot g = snapshot_episode(ep, cfg);
  const Subgraph sub = ego_subgraph(g, 3);
  int agents = 0, targets = 0;
  for (const int id : sub.nodes) {
    agents += g.nodes[id].kind == NodeKind::Agent;
    targets += g.nodes[id].kind == NodeKind::Target;
  }
  CHECK(agents == 8);
  CHECK(targets == 1);
  CHECK(g.nodes[sub.nodes[sub.ego_local]].agent == 3);
  for (const auto& [r, s] : sub.edges) {
    CHECK(r >= 0);
    CHECK(r < static_cast<int>(sub.nodes.size()));
    CHECK(s >= 0);
    CHECK(s < static_cast<int>(sub.nodes.size()));
  }
}

TEST_CASE("isolated agent subgraph is ego plus target") {
  WorldConfig cfg;
  Episode ep = two_agent_scene(5.0 * cfg.comm_range, cfg);
  const GraphSnapshot g = snapshot_episode(ep, cfg);
  const Subgraph sub = ego_subgraph(g, 0);
  REQUIRE(sub.nodes.size() == 2);
  CHECK(g.nodes[sub.nodes[0]].kind == NodeKind::Agent);
  CHECK(g.nodes[sub.nodes[1]].kind == NodeKind::Target);
}

TEST_CASE("out-of-range agents do not change the ego subgraph") {
  WorldConfig cfg;
  Episode near = two_agent_scene(0.4, cfg);
  Episode with_far = near;
  with_far.states.push_back(AgentState::at_rest(Vec3(50, 50, 50)));
  with_far.targets.push_back(Vec3(51, 51, 51));

  const Subgraph a = ego_subgraph(snapshot_episode(near, cfg), 0);
  const Subgraph b = ego_subgraph(snapshot_episode(with_far, cfg), 0);
  REQUIRE(a.nodes.size() == b.nodes.size());
  CHECK(a.edges == b.edges);
}

TEST_CASE("unknown ego id throws") {
  WorldConfig cfg;
  cfg.num_agents = 2;
  cfg.num_obstacles = 0;
  const GraphSnapshot g = snapshot_episode(sample_episode(cfg), cfg);
  CHECK_THROWS_AS(ego_subgraph(g, 9), std::out_of_range);
}

TEST_CASE("graph topology is invariant under the group") {
  Rng rng(77);
  WorldConfig cfg;
  cfg.num_agents = 6;
  cfg.num_obstacles = 3;
  for (int k = 0; k < 10; ++k) {
    cfg.seed = rng.next_u64();
    const Episode ep = sample_episode(cfg);
    const GroupElement g = random_group(rng, 3.0);
    const GraphSnapshot a = snapshot_episode(ep, cfg);
    const GraphSnapshot b = snapshot_episode(transform_episode(ep, g), cfg);
    REQUIRE(a.nodes.size() == b.nodes.size());
    CHECK(a.edges == b.edges);
  }
}

TEST_CASE("every node canonicalizes to zero position and yaw in its own frame") {
  WorldConfig cfg;
  cfg.num_agents = 4;
  cfg.num_obstacles = 2;
  cfg.seed = 5;
  Episode ep = sample_episode(cfg);
  Rng rng(5);
  for (auto& x : ep.states) {
    x.R = random_rotation(rng);
    x.v = rng.normal_vec3();
  }
  const GraphSnapshot g = snapshot_episode(ep, cfg);
  for (const auto& node : g.nodes) {
    const AgentState canon = act_state(inverse(node.frame), node.state);
    CHECK(canon.p.norm() < 1e-10);
    CHECK(std::abs(yaw_of(canon.R)) < 1e-10);
  }
}

TEST_CASE("agent relabeling permutes nodes and nothing else") {
  WorldConfig cfg;
  cfg.num_agents = 5;
  cfg.num_obstacles = 0;
  cfg.seed = 31;
  const Episode ep = sample_episode(cfg);

  Episode relabeled = ep;
  const std::vector<int> perm = {2, 0, 4, 1, 3};  // new index i holds old agent perm[i]
  for (int i = 0; i < 5; ++i) {
    relabeled.states[i] = ep.states[perm[i]];
    relabeled.targets[i] = ep.targets[perm[i]];
  }
  const GraphSnapshot a = snapshot_episode(ep, cfg);
  const GraphSnapshot b = snapshot_episode(relabeled, cfg);
  REQUIRE(a.nodes.size() == b.nodes.size());
  for (int i = 0; i < 5; ++i) {
    const GraphNode& old_node = a.nodes[a.agent_node[perm[i]]];
    const GraphNode& new_node = b.nodes[b.agent_node[i]];
    CHECK((old_node.state.p - new_node.state.p).norm() == 0.0);
  }
  CHECK(a.edges.size() == b.edges.size());
}

TEST_CASE("graph json round trip") {
  WorldConfig cfg;
  cfg.num_agents = 3;
  cfg.num_obstacles = 2;
  cfg.seed = 8;
  const GraphSnapshot g = snapshot_episode(sample_episode(cfg), cfg);
  const GraphSnapshot back = graph_from_json(graph_to_json(g));
  REQUIRE(back.nodes.size() == g.nodes.size());
  CHECK(back.edges == g.edges);
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    CHECK(back.nodes[i].kind == g.nodes[i].kind);
    CHECK((back.nodes[i].state.p - g.nodes[i].state.p).norm() == 0.0);
  }
}
