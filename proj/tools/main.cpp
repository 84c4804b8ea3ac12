// Command-line front end: train, eval, sweep, check, replay.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "egcbf/checks.hpp"
#include "egcbf/config.hpp"
#include "egcbf/harness.hpp"
#include "egcbf/learn.hpp"
#include "egcbf/sweep.hpp"

namespace fs = std::filesystem;
using namespace egcbf;

namespace {

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config cfg = path.empty() ? Config{} : Config::load(path);
  for (const auto& o : overrides) cfg.override_entry(o);
  return cfg;
}

std::string join_args(int argc, char** argv) {
  std::string cmd;
  for (int i = 0; i < argc; ++i) {
    if (i) cmd += " ";
    cmd += argv[i];
  }
  return cmd;
}

int run_train(const Config& cfg, const std::string& out_dir, const std::string& command) {
  const WorldConfig world = cfg.world();
  const ModelParams model = cfg.model();
  const NetConfig net = cfg.net();
  TrainConfig tc = cfg.train_config();
  if (!out_dir.empty()) tc.out_dir = out_dir;
  fs::create_directories(tc.out_dir);
  write_manifest(tc.out_dir + "/manifest.json", cfg, tc.seed, command);
  const TrainResult result = train(world, model, net, tc);
  std::cout << "checkpoint: " << result.checkpoint_path << "\n"
            << "learning curve: " << result.curve_path << "\n";
  return 0;
}

int run_eval(const Config& cfg, const std::string& checkpoint, const std::string& policy_name,
             int episodes, uint64_t seed, const std::string& traj_path,
             const std::string& graph_dump, const std::string& command,
             const std::string& out_dir, const std::string& qp_diag_path) {
  const WorldConfig world = cfg.world();
  const ModelParams model = cfg.model();
  std::unique_ptr<Policy> policy;
  if (policy_name == "learned") {
    if (checkpoint.empty()) throw std::runtime_error("eval: --checkpoint required for learned");
    const TrainState ts = load_train_state(checkpoint);
    if (ts.policy.model != model.kind)
      throw std::runtime_error("eval: checkpoint was trained for a different model kind");
    policy = make_learned_policy(ts.policy);
  } else if (policy_name == "nominal") {
    policy = make_nominal_policy(model);
  } else if (policy_name == "ccbf") {
    policy = make_ccbf_policy(model, world);
  } else if (policy_name == "dcbf") {
    policy = make_dcbf_policy(model, world);
  } else {
    throw std::runtime_error("eval: unknown policy " + policy_name);
  }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_manifest(out_dir + "/manifest.json", cfg, seed, command);
  }
  if (!graph_dump.empty()) {
    WorldConfig c0 = world;
    c0.seed = seed;
    const Episode ep = sample_episode(c0);
    std::ofstream os(graph_dump);
    os << graph_to_json(snapshot_episode(ep, c0)) << "\n";
  }

  std::ofstream qp_diag;
  if (!qp_diag_path.empty()) {
    qp_diag.open(qp_diag_path);
    qp_diag << "episode,qp_iterations,qp_primal_res,qp_dual_res,qp_infeasible\n";
  }
  EpisodeMetrics total;
  for (int e = 0; e < episodes; ++e) {
    Rng mix(seed ^ (0x100000001b3ULL * static_cast<uint64_t>(e + 1)));
    std::unique_ptr<TrajectoryWriter> traj;
    if (!traj_path.empty() && e == 0) traj = std::make_unique<TrajectoryWriter>(traj_path);
    const EpisodeMetrics m = run_episode(*policy, world, model, mix.next_u64(), traj.get());
    total.safety_rate += m.safety_rate;
    total.reach_rate += m.reach_rate;
    total.success_rate += m.success_rate;
    total.cost += m.cost;
    total.reward += m.reward;
    total.qp_infeasible += m.qp_infeasible;
    if (qp_diag.is_open())
      qp_diag << e << "," << m.qp_iterations << "," << m.qp_primal_res << ","
              << m.qp_dual_res << "," << m.qp_infeasible << "\n";
  }
  const double inv = 1.0 / std::max(1, episodes);
  std::printf("policy=%s episodes=%d safety=%.4f reach=%.4f success=%.4f cost=%.4f "
              "reward=%.2f qp_infeasible=%d\n",
              policy->name().c_str(), episodes, total.safety_rate * inv,
              total.reach_rate * inv, total.success_rate * inv, total.cost * inv,
              total.reward * inv, total.qp_infeasible);
  return 0;
}

int run_check(const std::string& what, uint64_t seed, const std::string& graph_path,
              bool as_json) {
  std::vector<CheckResult> results;
  const auto add = [&](std::vector<CheckResult> r) {
    results.insert(results.end(), r.begin(), r.end());
  };
  if (what == "group" || what == "all") add(check_group(seed));
  if (what == "dynamics" || what == "all") add(check_dynamics(seed));
  if (what == "equivariance" || what == "all") {
    if (!graph_path.empty()) {
      std::ifstream is(graph_path);
      std::stringstream ss;
      ss << is.rdbuf();
      add(check_equivariance_graph(graph_from_json(ss.str()), seed));
    } else {
      add(check_equivariance(seed));
      add(check_canonicalization_ablation(seed + 1));
    }
  }
  if (what == "gradients" || what == "all") add(check_gradients(seed));
  if (what == "qp" || what == "all") add(check_qp(seed));
  if (what == "lemma2" || what == "all") add(check_lemma2(seed));
  if (what == "haar" || what == "all") add(check_haar(seed));
  if (what == "invariance") add(check_forward_invariance(seed));
  if (results.empty()) throw std::runtime_error("check: unknown suite " + what);
  if (as_json) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : results)
      j.push_back({{"name", r.name}, {"pass", r.pass}, {"detail", r.detail}});
    std::cout << j.dump(2) << "\n";
  } else {
    for (const auto& r : results)
      std::printf("%-34s %s  %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL",
                  r.detail.c_str());
  }
  return all_pass(results) ? 0 : 2;
}

int run_sweep_cmd(const Config& cfg, SweepSpec spec, const std::string& out_prefix,
                  bool svg, const std::string& command) {
  spec.base = cfg.world();
  spec.model = cfg.model();
  const auto rows = run_sweep(spec);
  const std::string csv = sweep_csv(rows);
  if (out_prefix.empty()) {
    std::cout << csv;
    return 0;
  }
  fs::create_directories(fs::path(out_prefix).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(out_prefix).parent_path());
  std::ofstream(out_prefix + ".csv") << csv;
  std::ofstream(out_prefix + ".json") << sweep_json(rows);
  if (svg) std::ofstream(out_prefix + ".svg") << sweep_svg(rows);
  write_manifest(out_prefix + ".manifest.json", cfg, spec.seed_base, command);
  std::cout << "wrote " << out_prefix << ".csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Symmetry-aware graph CBF swarm toolkit"};
  app.require_subcommand(1);
  const std::string command = join_args(argc, argv);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "configuration file");
  app.add_option("--set", overrides, "override: section.key=value")->take_all();

  auto* train_cmd = app.add_subcommand("train", "train the policy and CBF");
  std::string train_out;
  train_cmd->add_option("--out", train_out, "output directory");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a policy over episodes");
  std::string checkpoint, policy_name = "learned", traj_path, graph_dump, eval_out, qp_diag;
  int episodes = 20;
  uint64_t seed = 0;
  eval_cmd->add_option("--checkpoint", checkpoint, "trained checkpoint");
  eval_cmd->add_option("--policy", policy_name, "learned|nominal|ccbf|dcbf");
  eval_cmd->add_option("--episodes", episodes, "episode count");
  eval_cmd->add_option("--seed", seed, "seed base");
  eval_cmd->add_option("--traj", traj_path, "trajectory log (episode 0)");
  eval_cmd->add_option("--graph-dump", graph_dump, "dump the first snapshot as JSON");
  eval_cmd->add_option("--out", eval_out, "manifest directory");
  eval_cmd->add_option("--qp-diag", qp_diag, "per-episode QP diagnostics CSV");

  auto* sweep_cmd = app.add_subcommand("sweep", "zero-shot scalability sweep");
  SweepSpec spec;
  std::string sweep_out;
  bool svg = false;
  sweep_cmd->add_option("--checkpoint", spec.checkpoint, "trained checkpoint");
  sweep_cmd->add_option("--sizes", spec.sizes, "swarm sizes")->delimiter(',');
  sweep_cmd->add_option("--methods", spec.methods, "learned,nominal,ccbf,dcbf")->delimiter(',');
  sweep_cmd->add_option("--side-length", spec.side_length, "arena side length");
  sweep_cmd->add_option("--obstacles", spec.num_obstacles, "obstacle count");
  sweep_cmd->add_option("--episodes", spec.episodes, "episodes per cell");
  sweep_cmd->add_option("--seed", spec.seed_base, "seed base");
  sweep_cmd->add_option("--jobs", spec.jobs, "parallel episode workers");
  sweep_cmd->add_option("--out", sweep_out, "output prefix (csv/json/svg)");
  sweep_cmd->add_flag("--svg", svg, "also write an SVG safety plot");

  auto* check_cmd = app.add_subcommand("check", "run a property suite");
  std::string what = "all", graph_path;
  uint64_t check_seed = 12345;
  bool check_json = false;
  check_cmd->add_option("what", what,
                        "group|dynamics|equivariance|gradients|qp|lemma2|haar|invariance|all");
  check_cmd->add_option("--seed", check_seed, "suite seed");
  check_cmd->add_option("--graph", graph_path, "recorded snapshot JSON (equivariance)");
  check_cmd->add_flag("--json", check_json, "emit the report as JSON");

  auto* replay_cmd = app.add_subcommand("replay", "validate a trajectory log");
  std::string replay_path;
  replay_cmd->add_option("log", replay_path, "line-delimited JSON trajectory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const Config cfg = load_config(config_path, overrides);
    if (train_cmd->parsed()) return run_train(cfg, train_out, command);
    if (eval_cmd->parsed())
      return run_eval(cfg, checkpoint, policy_name, episodes, seed, traj_path, graph_dump,
                      command, eval_out, qp_diag);
    if (sweep_cmd->parsed()) return run_sweep_cmd(cfg, spec, sweep_out, svg, command);
    if (check_cmd->parsed()) return run_check(what, check_seed, graph_path, check_json);
    if (replay_cmd->parsed()) {
      const ReplayReport r = replay_trajectory(replay_path, cfg.world());
      std::printf("steps=%d agents=%d safety_rate=%.4f mismatches=%d\n", r.steps, r.agents,
                  r.safety_rate, r.safety_mismatches);
      return r.safety_mismatches == 0 ? 0 : 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
