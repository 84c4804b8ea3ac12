#pragma once

// Episode environments: bounded arena with spherical obstacles, target
// assignment, LiDAR sensing and the ground-truth safety specification.

#include <stdexcept>
#include <vector>

#include "egcbf/liegroup.hpp"
#include "egcbf/rng.hpp"
#include "egcbf/state.hpp"
#include "egcbf/types.hpp"

namespace egcbf {

struct WorldConfig {
  double side_length = 2.0;
  int num_agents = 8;
  int num_obstacles = 5;
  double obstacle_radius_min = 0.08;
  double obstacle_radius_max = 0.16;
  double safety_radius = 0.1;   // r
  double sensing_range = 0.5;   // R
  double comm_range = 1.0;      // R_hat, must exceed sensing_range
  int lidar_rays = 32;
  int episode_len = 256;
  double reach_radius = 0.1;
  uint64_t seed = 0;

  void validate() const;
};

struct Obstacle {
  Vec3 center = Vec3::Zero();
  double radius = 0.1;
};

struct Episode {
  std::vector<AgentState> states;
  std::vector<Vec3> targets;
  std::vector<Obstacle> obstacles;
  Rng rng{0};
  int step_count = 0;
};

struct InfeasibleWorldError : std::runtime_error {
  explicit InfeasibleWorldError(const std::string& what) : std::runtime_error(what) {}
};

/// Rejection-sample an episode: initial positions, targets and obstacles
/// uniform over [0, l]^3 with inter-agent / agent-obstacle clearance above the
/// safety radius. Deterministic given cfg.seed. Throws InfeasibleWorldError
/// after 10^4 failed attempts for any single placement.
Episode sample_episode(const WorldConfig& cfg);

struct LidarScan {
  struct Ray {
    bool hit = false;
    Vec3 point = Vec3::Zero();
    double dist = 0.0;
  };
  std::vector<Ray> rays;
};

/// Fixed Fibonacci-sphere lattice rotated into the given yaw frame.
std::vector<Vec3> lidar_directions(int w, double yaw);

/// Nearest sphere intersection per ray within the sensing range.
LidarScan cast_lidar(const AgentState& x, const std::vector<Obstacle>& obstacles,
                     const WorldConfig& cfg);

/// First intersection parameter of ray o + t d (d unit) with the sphere, or a
/// negative value on miss.
double ray_sphere(const Vec3& origin, const Vec3& dir, const Obstacle& sphere);

struct SafetyReport {
  std::vector<bool> agent_safe;
  bool all_safe = true;
};

/// Agent i is safe iff every other agent is strictly farther than the safety
/// radius and it is strictly outside every obstacle.
SafetyReport is_safe(const std::vector<AgentState>& states,
                     const std::vector<Obstacle>& obstacles, const WorldConfig& cfg);

/// Move every state, target and obstacle by g (used by the symmetry suites).
Episode transform_episode(const Episode& ep, const GroupElement& g);

}  // namespace egcbf
