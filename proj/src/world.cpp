#include "egcbf/world.hpp"

#include <cmath>
#include <iostream>

namespace egcbf {

void WorldConfig::validate() const {
  if (num_agents < 1) throw std::invalid_argument("world: num_agents must be >= 1");
  if (side_length <= 0.0) throw std::invalid_argument("world: side_length must be > 0");
  if (!(comm_range > sensing_range && sensing_range > safety_radius && safety_radius > 0.0))
    throw std::invalid_argument("world: need comm_range > sensing_range > safety_radius > 0");
  if (num_obstacles < 0 || lidar_rays < 1 || episode_len < 1)
    throw std::invalid_argument("world: bad obstacle/ray/episode counts");
  if (obstacle_radius_min > obstacle_radius_max || obstacle_radius_min <= 0.0)
    throw std::invalid_argument("world: bad obstacle radius range");
}

namespace {

constexpr int kMaxAttempts = 10000;

double obstacle_clearance(const Vec3& p, const std::vector<Obstacle>& obstacles) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& o : obstacles) best = std::min(best, (p - o.center).norm() - o.radius);
  return best;
}

Vec3 sample_clear_point(Rng& rng, const WorldConfig& cfg, const std::vector<Vec3>& taken,
                        const std::vector<Obstacle>& obstacles, const char* what) {
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    if (attempt == 1000)
      std::cerr << "world: dense arena, placement of " << what << " needed >1e3 attempts\n";
    const Vec3 p = rng.uniform_vec3(0.0, cfg.side_length);
    bool ok = obstacle_clearance(p, obstacles) > cfg.safety_radius;
    for (const auto& q : taken)
      if ((p - q).norm() <= cfg.safety_radius) ok = false;
    if (ok) return p;
  }
  throw InfeasibleWorldError(std::string("sample_episode: could not place ") + what +
                             " after 10^4 attempts (arena too dense)");
}

}  // namespace

Episode sample_episode(const WorldConfig& cfg) {
  cfg.validate();
  Episode ep;
  ep.rng = Rng(cfg.seed);
  ep.obstacles.reserve(cfg.num_obstacles);
  for (int k = 0; k < cfg.num_obstacles; ++k) {
    Obstacle o;
    o.center = ep.rng.uniform_vec3(0.0, cfg.side_length);
    o.radius = ep.rng.uniform(cfg.obstacle_radius_min, cfg.obstacle_radius_max);
    ep.obstacles.push_back(o);
  }
  std::vector<Vec3> starts;
  for (int i = 0; i < cfg.num_agents; ++i)
    starts.push_back(sample_clear_point(ep.rng, cfg, starts, ep.obstacles, "an agent"));
  std::vector<Vec3> targets;
  for (int i = 0; i < cfg.num_agents; ++i)
    targets.push_back(sample_clear_point(ep.rng, cfg, targets, ep.obstacles, "a target"));
  for (const Vec3& p : starts) ep.states.push_back(AgentState::at_rest(p));
  ep.targets = targets;
  return ep;
}

std::vector<Vec3> lidar_directions(int w, double yaw) {
  // Fibonacci sphere lattice; yaw-anchored so the ray set rotates with the
  // agent's canonical frame.
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  const Mat3 Z = rotz(yaw);
  std::vector<Vec3> dirs;
  dirs.reserve(w);
  for (int k = 0; k < w; ++k) {
    const double z = 1.0 - 2.0 * (k + 0.5) / static_cast<double>(w);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * k;
    dirs.push_back(Z * Vec3(r * std::cos(phi), r * std::sin(phi), z));
  }
  return dirs;
}

double ray_sphere(const Vec3& origin, const Vec3& dir, const Obstacle& sphere) {
  const Vec3 oc = origin - sphere.center;
  const double b = dir.dot(oc);
  const double c = oc.squaredNorm() - sphere.radius * sphere.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return -1.0;
  const double sq = std::sqrt(disc);
  const double t0 = -b - sq;
  if (t0 > 1e-12) return t0;
  const double t1 = -b + sq;
  if (t1 > 1e-12) return t1;  // origin inside the sphere
  return -1.0;
}

LidarScan cast_lidar(const AgentState& x, const std::vector<Obstacle>& obstacles,
                     const WorldConfig& cfg) {
  LidarScan scan;
  scan.rays.resize(cfg.lidar_rays);
  const auto dirs = lidar_directions(cfg.lidar_rays, yaw_of(x.R));
  for (int k = 0; k < cfg.lidar_rays; ++k) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& o : obstacles) {
      const double t = ray_sphere(x.p, dirs[k], o);
      if (t > 0.0 && t < best) best = t;
    }
    if (best <= cfg.sensing_range) {
      scan.rays[k].hit = true;
      scan.rays[k].dist = best;
      scan.rays[k].point = x.p + best * dirs[k];
    }
  }
  return scan;
}

SafetyReport is_safe(const std::vector<AgentState>& states,
                     const std::vector<Obstacle>& obstacles, const WorldConfig& cfg) {
  const int n = static_cast<int>(states.size());
  SafetyReport report;
  report.agent_safe.assign(n, true);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if (!((states[i].p - states[j].p).norm() > cfg.safety_radius)) {
        report.agent_safe[i] = false;
        break;
      }
    }
    if (report.agent_safe[i] && !obstacles.empty() &&
        !(obstacle_clearance(states[i].p, obstacles) > 0.0))
      report.agent_safe[i] = false;
    report.all_safe = report.all_safe && report.agent_safe[i];
  }
  return report;
}

Episode transform_episode(const Episode& ep, const GroupElement& g) {
  Episode out = ep;
  const Mat3 Z = rotz(g.theta);
  for (auto& x : out.states) x = act_state(g, x);
  for (auto& t : out.targets) t = Z * t + g.lambda;
  for (auto& o : out.obstacles) o.center = Z * o.center + g.lambda;
  return out;
}

}  // namespace egcbf
