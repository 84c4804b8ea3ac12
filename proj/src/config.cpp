#include "egcbf/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#ifndef EGCBF_BUILD_ID
#define EGCBF_BUILD_ID "dev"
#endif

namespace egcbf {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

Config Config::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error("config: malformed section at line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: expected key=value at line " + std::to_string(lineno));
    cfg.sections_[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return cfg;
}

void Config::set(const std::string& section, const std::string& key,
                 const std::string& value) {
  sections_[section][key] = value;
}

void Config::override_entry(const std::string& spec) {
  const auto eq = spec.find('=');
  const auto dot = spec.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw std::runtime_error("config: override must look like section.key=value, got " + spec);
  set(trim(spec.substr(0, dot)), trim(spec.substr(dot + 1, eq - dot - 1)),
      trim(spec.substr(eq + 1)));
}

bool Config::has(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) > 0;
}

std::string Config::get_str(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
  const auto s = sections_.find(section);
  if (s == sections_.end()) return fallback;
  const auto k = s->second.find(key);
  return k == s->second.end() ? fallback : k->second;
}

double Config::get_num(const std::string& section, const std::string& key,
                       double fallback) const {
  if (!has(section, key)) return fallback;
  return std::stod(get_str(section, key, ""));
}

int Config::get_int(const std::string& section, const std::string& key, int fallback) const {
  if (!has(section, key)) return fallback;
  return std::stoi(get_str(section, key, ""));
}

bool Config::get_bool(const std::string& section, const std::string& key,
                      bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get_str(section, key, "");
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::runtime_error("config: bad boolean for " + section + "." + key + ": " + v);
}

std::vector<int> Config::get_int_list(const std::string& section, const std::string& key,
                                      const std::vector<int>& fallback) const {
  if (!has(section, key)) return fallback;
  std::vector<int> out;
  std::istringstream is(get_str(section, key, ""));
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [section, entries] : sections_)
    for (const auto& [key, value] : entries)
      out += section + "." + key + "=" + value + "\n";
  return out;
}

uint64_t fnv1a(const std::string& text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t Config::hash() const { return fnv1a(canonical()); }

WorldConfig Config::world() const {
  WorldConfig w;
  w.side_length = get_num("world", "side_length", w.side_length);
  w.num_agents = get_int("world", "num_agents", w.num_agents);
  w.num_obstacles = get_int("world", "num_obstacles", w.num_obstacles);
  w.obstacle_radius_min = get_num("world", "obstacle_radius_min", w.obstacle_radius_min);
  w.obstacle_radius_max = get_num("world", "obstacle_radius_max", w.obstacle_radius_max);
  w.safety_radius = get_num("world", "safety_radius", w.safety_radius);
  w.sensing_range = get_num("world", "sensing_range", w.sensing_range);
  w.comm_range = get_num("world", "comm_range", w.comm_range);
  w.lidar_rays = get_int("world", "lidar_rays", w.lidar_rays);
  w.episode_len = get_int("world", "episode_len", w.episode_len);
  w.reach_radius = get_num("world", "reach_radius", w.reach_radius);
  w.seed = static_cast<uint64_t>(get_num("world", "seed", 0));
  return w;
}

ModelParams Config::model() const {
  const std::string kind = get_str("model", "kind", "quadrotor");
  ModelParams p;
  if (kind == "double_integrator") {
    p = ModelParams::double_integrator();
    const double a_max = get_num("model", "accel_max", p.bounds.hi(0));
    p.bounds.lo.setConstant(-a_max);
    p.bounds.hi.setConstant(a_max);
    p.bounds.xy_radius = a_max;
  } else if (kind == "quadrotor") {
    p = ModelParams::quadrotor();
    p.m = get_num("model", "mass", p.m);
    const double tau_max = get_num("model", "torque_max", p.bounds.hi(0));
    const double f_max = get_num("model", "thrust_max", 2.0 * p.m * 9.81);
    p.bounds.lo.head<3>().setConstant(-tau_max);
    p.bounds.hi.head<3>().setConstant(tau_max);
    p.bounds.lo(3) = 0.0;
    p.bounds.hi(3) = f_max;
  } else {
    throw std::runtime_error("config: unknown model.kind " + kind);
  }
  p.dt = get_num("model", "dt", p.dt);
  return p;
}

NetConfig Config::net() const {
  NetConfig n;
  n.d_model = get_int("net", "d_model", n.d_model);
  n.d_ff = get_int("net", "d_ff", n.d_ff);
  n.layers = get_int("net", "layers", n.layers);
  n.head_hidden = get_int("net", "head_hidden", n.head_hidden);
  const std::string trunk = get_str("net", "trunk", "equivariant");
  if (trunk == "equivariant") n.equivariant = true;
  else if (trunk == "raw") n.equivariant = false;
  else throw std::runtime_error("config: net.trunk must be equivariant or raw, got " + trunk);
  return n;
}

TrainConfig Config::train_config() const {
  TrainConfig tc;
  tc.iterations = get_int("train", "iterations", tc.iterations);
  tc.episodes_per_round = get_int("train", "episodes_per_round", tc.episodes_per_round);
  tc.updates_per_round = get_int("train", "updates_per_round", tc.updates_per_round);
  tc.batch_egos = get_int("train", "batch_egos", tc.batch_egos);
  tc.label_horizon = get_int("train", "label_horizon", tc.label_horizon);
  tc.label_stride = get_int("train", "label_stride", tc.label_stride);
  tc.explore_nominal_prob = get_num("train", "explore_nominal_prob", tc.explore_nominal_prob);
  tc.explore_noise_prob = get_num("train", "explore_noise_prob", tc.explore_noise_prob);
  tc.lr_cbf = get_num("train", "lr_cbf", tc.lr_cbf);
  tc.lr_policy = get_num("train", "lr_policy", tc.lr_policy);
  tc.weights.eta_c = get_num("train", "eta_c", tc.weights.eta_c);
  tc.weights.eta_d = get_num("train", "eta_d", tc.weights.eta_d);
  tc.weights.gamma = get_num("train", "gamma", tc.weights.gamma);
  tc.weights.alpha.slope = get_num("train", "alpha_slope", tc.weights.alpha.slope);
  const std::string ref = get_str("train", "reference", "qp");
  if (ref == "qp") tc.reference_qp = true;
  else if (ref == "nominal") tc.reference_qp = false;
  else throw std::runtime_error("config: train.reference must be qp or nominal, got " + ref);
  tc.unlabeled_derivative = get_bool("train", "unlabeled_derivative", tc.unlabeled_derivative);
  const std::string dc = get_str("train", "deriv_controls", "policy");
  if (dc == "policy") tc.recorded_neighbor_controls = false;
  else if (dc == "recorded") tc.recorded_neighbor_controls = true;
  else throw std::runtime_error("config: train.deriv_controls must be policy or recorded");
  tc.secant_dt = get_num("train", "secant_dt", tc.secant_dt);
  tc.eval_every = get_int("train", "eval_every", tc.eval_every);
  tc.eval_episodes = get_int("train", "eval_episodes", tc.eval_episodes);
  tc.seed = static_cast<uint64_t>(get_num("train", "seed", 7));
  tc.out_dir = get_str("train", "out_dir", tc.out_dir);
  return tc;
}

void write_manifest(const std::string& path, const Config& cfg, uint64_t seed,
                    const std::string& command) {
  nlohmann::json j;
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(cfg.hash()));
  j["config_hash"] = std::string(hex);
  j["seed"] = seed;
  j["build_id"] = EGCBF_BUILD_ID;
  j["command"] = command;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("manifest: cannot write " + path);
  os << j.dump(2) << "\n";
}

}  // namespace egcbf
