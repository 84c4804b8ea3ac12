#include "egcbf/harness.hpp"

#include <fstream>

#include <json.hpp>

namespace egcbf {

namespace {

class NominalPolicy final : public Policy {
 public:
  explicit NominalPolicy(const ModelParams& params) : params_(params), name_("nominal") {}
  std::vector<VecX> act(const Episode& ep, const std::vector<LidarScan>&,
                        const GraphSnapshot&) override {
    std::vector<VecX> out(ep.states.size());
    for (size_t i = 0; i < ep.states.size(); ++i)
      out[i] = nominal_control(ep.states[i], ep.targets[i], params_);
    return out;
  }
  const std::string& name() const override { return name_; }

 private:
  ModelParams params_;
  std::string name_;
};

class LearnedPolicy final : public Policy {
 public:
  explicit LearnedPolicy(const NetParams& net) : net_(net), name_("learned") {}
  std::vector<VecX> act(const Episode&, const std::vector<LidarScan>&,
                        const GraphSnapshot& graph) override {
    return policy_controls(net_, graph);
  }
  const std::string& name() const override { return name_; }

 private:
  NetParams net_;
  std::string name_;
};

class CCbfPolicy final : public Policy {
 public:
  CCbfPolicy(const ModelParams& params, const WorldConfig& cfg, const PairCbf& cbf,
             const ClassK& alpha)
      : params_(params), cfg_(cfg), cbf_(cbf), alpha_(alpha), name_("ccbf") {}
  std::vector<VecX> act(const Episode& ep, const std::vector<LidarScan>&,
                        const GraphSnapshot&) override {
    return ccbf_controls(ep.states, ep.targets, ep.obstacles, params_, cfg_, cbf_, alpha_,
                         &diag_);
  }
  void reset() override { diag_ = QPDiag{}; }
  const std::string& name() const override { return name_; }
  QPDiag diag_;  // accumulated over the episode

 private:
  ModelParams params_;
  WorldConfig cfg_;
  PairCbf cbf_;
  ClassK alpha_;
  std::string name_;
};

class DCbfPolicy final : public Policy {
 public:
  DCbfPolicy(const ModelParams& params, const WorldConfig& cfg, const PairCbf& cbf,
             const ClassK& alpha)
      : params_(params), cfg_(cfg), cbf_(cbf), alpha_(alpha), name_("dcbf") {}
  std::vector<VecX> act(const Episode& ep, const std::vector<LidarScan>&,
                        const GraphSnapshot&) override {
    auto out = dcbf_controls(ep.states, ep.targets, ep.obstacles, prev_, params_, cfg_, cbf_,
                             alpha_, &diag_);
    prev_ = out;
    return out;
  }
  void reset() override {
    prev_.clear();
    diag_ = QPDiag{};
  }
  const std::string& name() const override { return name_; }
  QPDiag diag_;

 private:
  ModelParams params_;
  WorldConfig cfg_;
  PairCbf cbf_;
  ClassK alpha_;
  std::vector<VecX> prev_;
  std::string name_;
};

}  // namespace

std::unique_ptr<Policy> make_nominal_policy(const ModelParams& params) {
  return std::make_unique<NominalPolicy>(params);
}
std::unique_ptr<Policy> make_learned_policy(const NetParams& net) {
  return std::make_unique<LearnedPolicy>(net);
}
std::unique_ptr<Policy> make_ccbf_policy(const ModelParams& params, const WorldConfig& cfg,
                                         const PairCbf& cbf, const ClassK& alpha) {
  return std::make_unique<CCbfPolicy>(params, cfg, cbf, alpha);
}
std::unique_ptr<Policy> make_dcbf_policy(const ModelParams& params, const WorldConfig& cfg,
                                         const PairCbf& cbf, const ClassK& alpha) {
  return std::make_unique<DCbfPolicy>(params, cfg, cbf, alpha);
}

struct TrajectoryWriter::Impl {
  std::ofstream os;
};

TrajectoryWriter::TrajectoryWriter(const std::string& path) : impl_(new Impl) {
  impl_->os.open(path);
  if (!impl_->os) throw std::runtime_error("trajectory: cannot write " + path);
}

TrajectoryWriter::~TrajectoryWriter() = default;

namespace {

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace

void TrajectoryWriter::header(const Episode& ep, uint64_t seed) {
  nlohmann::json j;
  j["seed"] = seed;
  j["targets"] = nlohmann::json::array();
  for (const auto& t : ep.targets) j["targets"].push_back(vec_json(t));
  j["obstacles"] = nlohmann::json::array();
  for (const auto& o : ep.obstacles)
    j["obstacles"].push_back({{"center", vec_json(o.center)}, {"radius", o.radius}});
  impl_->os << j.dump() << "\n";
}

void TrajectoryWriter::step(int t, const std::vector<AgentState>& states,
                            const std::vector<VecX>& controls,
                            const std::vector<bool>& safe) {
  nlohmann::json j;
  j["t"] = t;
  j["states"] = nlohmann::json::array();
  for (const auto& x : states) {
    std::vector<double> rot(x.R.data(), x.R.data() + 9);
    j["states"].push_back({{"p", vec_json(x.p)},
                           {"R", rot},
                           {"v", vec_json(x.v)},
                           {"omega", vec_json(x.omega)}});
  }
  j["controls"] = nlohmann::json::array();
  for (const auto& u : controls)
    j["controls"].push_back(std::vector<double>(u.data(), u.data() + u.size()));
  j["safe"] = safe;
  impl_->os << j.dump() << "\n";
}

EpisodeMetrics run_episode(Policy& policy, const WorldConfig& cfg, const ModelParams& params,
                           uint64_t seed, TrajectoryWriter* traj) {
  WorldConfig ep_cfg = cfg;
  ep_cfg.seed = seed;
  Episode ep = sample_episode(ep_cfg);
  policy.reset();
  const int n = cfg.num_agents;

  std::vector<bool> ever_unsafe(n, false), was_unsafe(n, false);
  int collision_events = 0;
  double reward = 0.0;
  if (traj) traj->header(ep, seed);

  for (int t = 0; t < cfg.episode_len; ++t) {
    std::vector<LidarScan> scans;
    scans.reserve(n);
    for (const auto& x : ep.states) scans.push_back(cast_lidar(x, ep.obstacles, cfg));
    const GraphSnapshot graph = build_graph(ep, scans, cfg);
    std::vector<VecX> controls = policy.act(ep, scans, graph);
    for (int i = 0; i < n; ++i) {
      controls[i] = params.bounds.project(controls[i]);
      reward -= (controls[i] - nominal_control(ep.states[i], ep.targets[i], params)).norm();
    }
    for (int i = 0; i < n; ++i) {
      try {
        ep.states[i] = step(ep.states[i], controls[i], params);
      } catch (const IntegrationError& e) {
        throw IntegrationError(std::string(e.what()) + " (agent " + std::to_string(i) +
                               ", episode seed " + std::to_string(seed) + ")");
      }
    }
    const SafetyReport report = is_safe(ep.states, ep.obstacles, cfg);
    for (int i = 0; i < n; ++i) {
      const bool unsafe = !report.agent_safe[i];
      if (unsafe && !was_unsafe[i]) ++collision_events;
      was_unsafe[i] = unsafe;
      ever_unsafe[i] = ever_unsafe[i] || unsafe;
    }
    if (traj) traj->step(t, ep.states, controls, report.agent_safe);
    ep.step_count = t + 1;
  }

  EpisodeMetrics m;
  int safe_count = 0, reach_count = 0, success_count = 0;
  for (int i = 0; i < n; ++i) {
    const bool safe = !ever_unsafe[i];
    const bool reached = (ep.states[i].p - ep.targets[i]).norm() < cfg.reach_radius;
    safe_count += safe;
    reach_count += reached;
    success_count += safe && reached;
  }
  m.safety_rate = static_cast<double>(safe_count) / n;
  m.reach_rate = static_cast<double>(reach_count) / n;
  m.success_rate = static_cast<double>(success_count) / n;
  m.cost = static_cast<double>(collision_events) / n;
  m.reward = reward;
  const QPDiag* diag = nullptr;
  if (auto* c = dynamic_cast<CCbfPolicy*>(&policy)) diag = &c->diag_;
  if (auto* d = dynamic_cast<DCbfPolicy*>(&policy)) diag = &d->diag_;
  if (diag) {
    m.qp_infeasible = diag->infeasible;
    m.qp_iterations = diag->iterations;
    m.qp_primal_res = diag->primal_res;
    m.qp_dual_res = diag->dual_res;
  }
  return m;
}

ReplayReport replay_trajectory(const std::string& path, const WorldConfig& cfg) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("replay: cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("replay: empty log " + path);
  const nlohmann::json header = nlohmann::json::parse(line);
  std::vector<Obstacle> obstacles;
  for (const auto& jo : header.at("obstacles")) {
    Obstacle o;
    const auto& c = jo.at("center");
    o.center = Vec3(c.at(0), c.at(1), c.at(2));
    o.radius = jo.at("radius");
    obstacles.push_back(o);
  }

  ReplayReport report;
  std::vector<bool> ever_unsafe;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    std::vector<AgentState> states;
    for (const auto& js : j.at("states")) {
      AgentState x;
      const auto& p = js.at("p");
      x.p = Vec3(p.at(0), p.at(1), p.at(2));
      const auto rot = js.at("R").get<std::vector<double>>();
      x.R = Eigen::Map<const Mat3>(rot.data());
      const auto& v = js.at("v");
      x.v = Vec3(v.at(0), v.at(1), v.at(2));
      states.push_back(x);
    }
    if (ever_unsafe.empty()) {
      report.agents = static_cast<int>(states.size());
      ever_unsafe.assign(states.size(), false);
    }
    const SafetyReport safety = is_safe(states, obstacles, cfg);
    const auto logged = j.at("safe").get<std::vector<bool>>();
    for (size_t i = 0; i < states.size(); ++i) {
      if (safety.agent_safe[i] != logged[i]) ++report.safety_mismatches;
      ever_unsafe[i] = ever_unsafe[i] || !safety.agent_safe[i];
    }
    ++report.steps;
  }
  int safe = 0;
  for (const bool u : ever_unsafe) safe += !u;
  report.safety_rate = ever_unsafe.empty() ? 0.0 : static_cast<double>(safe) / ever_unsafe.size();
  return report;
}

}  // namespace egcbf
