#include "egcbf/graph.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

namespace egcbf {

GraphSnapshot build_graph(const std::vector<AgentState>& states,
                          const std::vector<Vec3>& targets,
                          const std::vector<LidarScan>& scans, const WorldConfig& cfg) {
  const int n = static_cast<int>(states.size());
  if (static_cast<int>(scans.size()) != n)
    throw std::invalid_argument("build_graph: one scan per agent required");
  if (static_cast<int>(targets.size()) != n)
    throw std::invalid_argument("build_graph: one target per agent required");

  GraphSnapshot g;
  g.agent_node.resize(n);
  for (int i = 0; i < n; ++i) {
    GraphNode node;
    node.kind = NodeKind::Agent;
    node.agent = i;
    node.frame = frame_of(states[i]);
    node.state = states[i];
    g.agent_node[i] = static_cast<int>(g.nodes.size());
    g.nodes.push_back(node);
  }
  std::vector<std::vector<int>> lidar_nodes(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < static_cast<int>(scans[i].rays.size()); ++k) {
      if (!scans[i].rays[k].hit) continue;  // misses never enter the graph
      GraphNode node;
      node.kind = NodeKind::Lidar;
      node.agent = i;
      node.ray = k;
      node.state = AgentState::at_rest(scans[i].rays[k].point);
      node.frame = make_group(0.0, node.state.p);
      lidar_nodes[i].push_back(static_cast<int>(g.nodes.size()));
      g.nodes.push_back(node);
    }
  }
  std::vector<int> target_nodes(n);
  for (int i = 0; i < n; ++i) {
    GraphNode node;
    node.kind = NodeKind::Target;
    node.agent = i;
    node.state = AgentState::at_rest(targets[i]);
    node.frame = make_group(0.0, targets[i]);
    target_nodes[i] = static_cast<int>(g.nodes.size());
    g.nodes.push_back(node);
  }

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if ((states[i].p - states[j].p).norm() <= cfg.comm_range)
        g.edges.emplace_back(g.agent_node[i], g.agent_node[j]);
    }
    for (int id : lidar_nodes[i]) g.edges.emplace_back(g.agent_node[i], id);
    g.edges.emplace_back(g.agent_node[i], target_nodes[i]);
  }
  std::sort(g.edges.begin(), g.edges.end());

  g.in_neighbors.resize(g.nodes.size());
  for (const auto& [recv, send] : g.edges) g.in_neighbors[recv].push_back(send);
  return g;
}

GraphSnapshot build_graph(const Episode& ep, const std::vector<LidarScan>& scans,
                          const WorldConfig& cfg) {
  return build_graph(ep.states, ep.targets, scans, cfg);
}

GraphSnapshot snapshot_episode(const Episode& ep, const WorldConfig& cfg) {
  std::vector<LidarScan> scans;
  scans.reserve(ep.states.size());
  for (const auto& x : ep.states) scans.push_back(cast_lidar(x, ep.obstacles, cfg));
  return build_graph(ep, scans, cfg);
}

Subgraph ego_subgraph(const GraphSnapshot& graph, int agent) {
  if (agent < 0 || agent >= graph.num_agents())
    throw std::out_of_range("ego_subgraph: unknown agent id " + std::to_string(agent));
  const int ego_node = graph.agent_node[agent];

  std::vector<int> keep = graph.in_neighbors[ego_node];
  keep.push_back(ego_node);
  std::sort(keep.begin(), keep.end());

  Subgraph sub;
  sub.ego = agent;
  sub.nodes = keep;
  std::vector<int> local(graph.nodes.size(), -1);
  for (int k = 0; k < static_cast<int>(keep.size()); ++k) local[keep[k]] = k;
  sub.ego_local = local[ego_node];
  for (const auto& [recv, send] : graph.edges)
    if (local[recv] >= 0 && local[send] >= 0) sub.edges.emplace_back(local[recv], local[send]);
  return sub;
}

VecX node_feature(const GraphNode& node) {
  VecX f = VecX::Zero(kFeatureDim);
  f(static_cast<int>(node.kind)) = 1.0;
  f.segment<3>(3) = node.state.p;
  Eigen::Map<VecX>(f.data() + 6, 9) = Eigen::Map<const VecX>(node.state.R.data(), 9);
  f.segment<3>(15) = node.state.v;
  f.segment<3>(18) = node.state.omega;
  return f;
}

GraphSnapshot transform_graph(const GraphSnapshot& graph, const GroupElement& g) {
  GraphSnapshot out = graph;
  const Mat3 Z = rotz(g.theta);
  for (auto& node : out.nodes) {
    if (node.kind == NodeKind::Agent) {
      node.state = act_state(g, node.state);
      node.frame = frame_of(node.state);
    } else {
      node.state.p = Z * node.state.p + g.lambda;
      node.frame = make_group(0.0, node.state.p);
    }
  }
  return out;
}

namespace {

nlohmann::json vec_to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec_from_json(const nlohmann::json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }

}  // namespace

std::string graph_to_json(const GraphSnapshot& graph) {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : graph.nodes) {
    nlohmann::json jn;
    jn["kind"] = static_cast<int>(n.kind);
    jn["agent"] = n.agent;
    jn["ray"] = n.ray;
    jn["frame"] = {{"theta", n.frame.theta}, {"lambda", vec_to_json(n.frame.lambda)}};
    std::vector<double> rot(n.state.R.data(), n.state.R.data() + 9);
    jn["state"] = {{"p", vec_to_json(n.state.p)},
                   {"R", rot},
                   {"v", vec_to_json(n.state.v)},
                   {"omega", vec_to_json(n.state.omega)}};
    j["nodes"].push_back(jn);
  }
  j["edges"] = nlohmann::json::array();
  for (const auto& [r, s] : graph.edges) j["edges"].push_back({r, s});
  j["agent_node"] = graph.agent_node;
  return j.dump();
}

GraphSnapshot graph_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  GraphSnapshot g;
  for (const auto& jn : j.at("nodes")) {
    GraphNode n;
    n.kind = static_cast<NodeKind>(jn.at("kind").get<int>());
    n.agent = jn.at("agent");
    n.ray = jn.at("ray");
    n.frame.theta = jn.at("frame").at("theta");
    n.frame.lambda = vec_from_json(jn.at("frame").at("lambda"));
    n.state.p = vec_from_json(jn.at("state").at("p"));
    const auto rot = jn.at("state").at("R").get<std::vector<double>>();
    n.state.R = Eigen::Map<const Mat3>(rot.data());
    n.state.v = vec_from_json(jn.at("state").at("v"));
    n.state.omega = vec_from_json(jn.at("state").at("omega"));
    g.nodes.push_back(n);
  }
  for (const auto& je : j.at("edges")) g.edges.emplace_back(je.at(0), je.at(1));
  g.agent_node = j.at("agent_node").get<std::vector<int>>();
  g.in_neighbors.resize(g.nodes.size());
  for (const auto& [recv, send] : g.edges) g.in_neighbors[recv].push_back(send);
  return g;
}

}  // namespace egcbf
