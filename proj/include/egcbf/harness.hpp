#pragma once

// Episode evaluation: policies, per-episode metrics and trajectory logging.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "egcbf/net.hpp"
#include "egcbf/safectrl.hpp"
#include "egcbf/world.hpp"

namespace egcbf {

struct EpisodeMetrics {
  double safety_rate = 0.0;
  double reach_rate = 0.0;
  double success_rate = 0.0;
  double cost = 0.0;    // collision events per agent
  double reward = 0.0;  // negative accumulated L2 gap to the nominal law
  // QP diagnostics, populated by the filter baselines
  int qp_infeasible = 0;
  int qp_iterations = 0;
  double qp_primal_res = 0.0;
  double qp_dual_res = 0.0;
};

/// A policy maps the full scene (plus fresh scans and the built graph) to one
/// control per agent. Implementations may keep per-episode state (the
/// decentralized baseline holds its neighbors' last commands); reset() is
/// called at episode start.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::vector<VecX> act(const Episode& ep, const std::vector<LidarScan>& scans,
                                const GraphSnapshot& graph) = 0;
  virtual void reset() {}
  virtual const std::string& name() const = 0;
};

std::unique_ptr<Policy> make_nominal_policy(const ModelParams& params);
std::unique_ptr<Policy> make_learned_policy(const NetParams& policy_net);
std::unique_ptr<Policy> make_ccbf_policy(const ModelParams& params, const WorldConfig& cfg,
                                         const PairCbf& cbf = {}, const ClassK& alpha = {});
std::unique_ptr<Policy> make_dcbf_policy(const ModelParams& params, const WorldConfig& cfg,
                                         const PairCbf& cbf = {}, const ClassK& alpha = {});

/// Line-delimited JSON trajectory sink. The first line carries the scene
/// header (obstacles, targets); one line per step follows.
class TrajectoryWriter {
 public:
  explicit TrajectoryWriter(const std::string& path);
  ~TrajectoryWriter();
  void header(const Episode& ep, uint64_t seed);
  void step(int t, const std::vector<AgentState>& states, const std::vector<VecX>& controls,
            const std::vector<bool>& safe);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Roll one episode. An agent counts safe iff it never violates the safety
/// predicate, reached iff its final position is within the reach radius, and
/// successful iff both. Integration failures propagate with the episode seed
/// attached.
EpisodeMetrics run_episode(Policy& policy, const WorldConfig& cfg, const ModelParams& params,
                           uint64_t seed, TrajectoryWriter* traj = nullptr);

/// Replay a trajectory log: recompute safety flags and metric identities.
struct ReplayReport {
  int steps = 0;
  int agents = 0;
  int safety_mismatches = 0;
  double safety_rate = 0.0;
};
ReplayReport replay_trajectory(const std::string& path, const WorldConfig& cfg);

}  // namespace egcbf
