#pragma once

// Graph snapshot of the swarm: typed nodes carrying local frames and raw
// states, directed radius edges, and agent-centric 1-hop subgraphs.

#include <string>
#include <utility>
#include <vector>

#include "egcbf/liegroup.hpp"
#include "egcbf/world.hpp"

namespace egcbf {

enum class NodeKind { Agent, Lidar, Target };

/// Feature layout: kind one-hot (3) | p (3) | R column-major (9) | v (3) | omega (3).
inline constexpr int kFeatureDim = 21;

struct GraphNode {
  NodeKind kind = NodeKind::Agent;
  int agent = -1;  // owning agent (self for Agent nodes)
  int ray = -1;    // ray index for Lidar nodes
  GroupElement frame;
  AgentState state;  // lidar/target nodes: position plus the identity pad
};

struct GraphSnapshot {
  std::vector<GraphNode> nodes;
  std::vector<std::pair<int, int>> edges;  // (receiver, sender), sorted
  std::vector<int> agent_node;             // agent id -> node id
  std::vector<std::vector<int>> in_neighbors;

  int num_agents() const { return static_cast<int>(agent_node.size()); }
};

/// Assemble the snapshot. Node order is deterministic: agents, then lidar
/// hits by (agent, ray), then targets. Agent-agent edge (i <- j) is present
/// iff ||p_i - p_j|| <= comm_range; every agent receives from its own lidar
/// hits and its own target.
GraphSnapshot build_graph(const std::vector<AgentState>& states,
                          const std::vector<Vec3>& targets,
                          const std::vector<LidarScan>& scans, const WorldConfig& cfg);

GraphSnapshot build_graph(const Episode& ep, const std::vector<LidarScan>& scans,
                          const WorldConfig& cfg);

/// Scan every agent and build the snapshot in one go.
GraphSnapshot snapshot_episode(const Episode& ep, const WorldConfig& cfg);

struct Subgraph {
  int ego = -1;        // agent id
  int ego_local = -1;  // index of the ego node within `nodes`
  std::vector<int> nodes;                  // parent node ids, parent order
  std::vector<std::pair<int, int>> edges;  // local indices (receiver, sender)
};

/// 1-hop in-neighborhood slice of the ego agent: the ego, its neighbor
/// agents, its lidar hits, its target, plus all parent edges among them.
Subgraph ego_subgraph(const GraphSnapshot& graph, int agent);

/// Raw (world-frame) node feature vector of length kFeatureDim.
VecX node_feature(const GraphNode& node);

/// Apply a group element to every node's raw state and frame. Positions move
/// for all nodes; the identity pad of lidar/target nodes stays put. Edges are
/// untouched (the topology is group-invariant).
GraphSnapshot transform_graph(const GraphSnapshot& graph, const GroupElement& g);

std::string graph_to_json(const GraphSnapshot& graph);
GraphSnapshot graph_from_json(const std::string& text);

}  // namespace egcbf
