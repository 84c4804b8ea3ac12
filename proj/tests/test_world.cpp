#include <doctest.h>

#include "egcbf/world.hpp"

using namespace egcbf;

TEST_CASE("single-agent episode stays in bounds") {
  WorldConfig cfg;
  cfg.num_agents = 1;
  cfg.num_obstacles = 0;
  const Episode ep = sample_episode(cfg);
  REQUIRE(ep.states.size() == 1);
  REQUIRE(ep.targets.size() == 1);
  for (int c = 0; c < 3; ++c) {
    CHECK(ep.states[0].p(c) >= 0.0);
    CHECK(ep.states[0].p(c) <= cfg.side_length);
    CHECK(ep.targets[0](c) >= 0.0);
    CHECK(ep.targets[0](c) <= cfg.side_length);
  }
}

TEST_CASE("sampling is deterministic in the seed") {
  WorldConfig cfg;
  cfg.seed = 99;
  const Episode a = sample_episode(cfg);
  const Episode b = sample_episode(cfg);
  REQUIRE(a.states.size() == b.states.size());
  for (size_t i = 0; i < a.states.size(); ++i)
    CHECK((a.states[i].p - b.states[i].p).norm() == 0.0);
  for (size_t i = 0; i < a.obstacles.size(); ++i) {
    CHECK((a.obstacles[i].center - b.obstacles[i].center).norm() == 0.0);
    CHECK(a.obstacles[i].radius == b.obstacles[i].radius);
  }
}

TEST_CASE("training-scale episode satisfies all clearance constraints") {
  WorldConfig cfg;
  cfg.num_agents = 8;
  cfg.side_length = 2.0;
  cfg.num_obstacles = 5;
  cfg.seed = 4;
  const Episode ep = sample_episode(cfg);
  for (int i = 0; i < 8; ++i) {
    for (int j = i + 1; j < 8; ++j)
      CHECK((ep.states[i].p - ep.states[j].p).norm() > cfg.safety_radius);
    for (const auto& o : ep.obstacles)
      CHECK((ep.states[i].p - o.center).norm() - o.radius > cfg.safety_radius);
    for (int j = i + 1; j < 8; ++j)
      CHECK((ep.targets[i] - ep.targets[j]).norm() > cfg.safety_radius);
  }
}

TEST_CASE("over-dense arena raises the infeasibility error") {
  WorldConfig cfg;
  cfg.side_length = 0.25;
  cfg.num_agents = 64;
  cfg.num_obstacles = 0;
  CHECK_THROWS_AS(sample_episode(cfg), InfeasibleWorldError);
}

TEST_CASE("config validation") {
  WorldConfig cfg;
  cfg.comm_range = 0.3;  // below sensing_range
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("lidar hits and misses") {
  WorldConfig cfg;
  cfg.lidar_rays = 32;
  AgentState x;
  x.p = Vec3(1, 1, 1);

  SUBCASE("no obstacles: every ray misses") {
    const LidarScan scan = cast_lidar(x, {}, cfg);
    for (const auto& ray : scan.rays) CHECK_FALSE(ray.hit);
  }

  SUBCASE("a sphere dead ahead on a ray is hit at distance minus radius") {
    const auto dirs = lidar_directions(cfg.lidar_rays, yaw_of(x.R));
    const double dist = 0.4, radius = 0.05;
    const Obstacle o{x.p + dist * dirs[7], radius};
    const LidarScan scan = cast_lidar(x, {o}, cfg);
    REQUIRE(scan.rays[7].hit);
    CHECK(scan.rays[7].dist == doctest::Approx(dist - radius).epsilon(1e-9));
    CHECK((scan.rays[7].point - (x.p + (dist - radius) * dirs[7])).norm() < 1e-9);
  }

  SUBCASE("a sphere beyond the sensing range is a miss") {
    const auto dirs = lidar_directions(cfg.lidar_rays, yaw_of(x.R));
    const Obstacle o{x.p + (cfg.sensing_range + 0.5) * dirs[3], 0.05};
    const LidarScan scan = cast_lidar(x, {o}, cfg);
    CHECK_FALSE(scan.rays[3].hit);
  }
}

TEST_CASE("lidar hit set is equivariant") {
  Rng rng(55);
  WorldConfig cfg;
  for (int k = 0; k < 20; ++k) {
    AgentState x;
    x.p = rng.uniform_vec3(0, 2);
    x.R = rotz(rng.uniform(-kPi, kPi));
    std::vector<Obstacle> obstacles;
    for (int j = 0; j < 3; ++j)
      obstacles.push_back({x.p + rng.normal_vec3(0.4), rng.uniform(0.05, 0.15)});
    const GroupElement g = random_group(rng, 2.0);
    const Mat3 Z = rotz(g.theta);

    std::vector<Obstacle> moved = obstacles;
    for (auto& o : moved) o.center = Z * o.center + g.lambda;
    const LidarScan scan = cast_lidar(x, obstacles, cfg);
    const LidarScan scan_g = cast_lidar(act_state(g, x), moved, cfg);
    for (int r = 0; r < cfg.lidar_rays; ++r) {
      REQUIRE(scan.rays[r].hit == scan_g.rays[r].hit);
      if (scan.rays[r].hit)
        CHECK((scan_g.rays[r].point - (Z * scan.rays[r].point + g.lambda)).norm() < 1e-9);
    }
  }
}

TEST_CASE("safety predicate uses strict clearance") {
  WorldConfig cfg;
  cfg.num_agents = 2;
  const double r = cfg.safety_radius;
  std::vector<AgentState> states(2);

  states[1].p = Vec3(2 * r, 0, 0);
  CHECK(is_safe(states, {}, cfg).all_safe);

  states[1].p = Vec3(r / 2, 0, 0);
  const SafetyReport close = is_safe(states, {}, cfg);
  CHECK_FALSE(close.agent_safe[0]);
  CHECK_FALSE(close.agent_safe[1]);

  states[1].p = Vec3(r, 0, 0);  // exactly at the radius: unsafe
  CHECK_FALSE(is_safe(states, {}, cfg).all_safe);

  states[1].p = Vec3(1, 1, 1);
  const Obstacle inside{states[0].p, 0.05};
  CHECK_FALSE(is_safe(states, {inside}, cfg).agent_safe[0]);
  CHECK(is_safe(states, {inside}, cfg).agent_safe[1]);
}

TEST_CASE("safety flags are invariant under the group") {
  Rng rng(61);
  WorldConfig cfg;
  cfg.num_agents = 6;
  cfg.num_obstacles = 3;
  for (int k = 0; k < 20; ++k) {
    cfg.seed = rng.next_u64();
    Episode ep = sample_episode(cfg);
    for (auto& x : ep.states) x.p += rng.normal_vec3(0.05);  // push some pairs close
    const GroupElement g = random_group(rng, 3.0);
    const Episode moved = transform_episode(ep, g);
    const SafetyReport a = is_safe(ep.states, ep.obstacles, cfg);
    const SafetyReport b = is_safe(moved.states, moved.obstacles, cfg);
    CHECK(a.all_safe == b.all_safe);
    for (size_t i = 0; i < a.agent_safe.size(); ++i)
      CHECK(a.agent_safe[i] == b.agent_safe[i]);
  }
}
