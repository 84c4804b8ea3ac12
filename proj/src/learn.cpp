#include "egcbf/learn.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "egcbf/harness.hpp"

namespace egcbf {

int Dataset::count(Label label) const {
  int n = 0;
  for (const auto& rec : records)
    for (const Label l : rec.labels) n += (l == label);
  return n;
}

namespace {

std::vector<bool> safe_flags(const std::vector<AgentState>& states,
                             const std::vector<Obstacle>& obstacles, const WorldConfig& cfg) {
  return is_safe(states, obstacles, cfg).agent_safe;
}

enum class RollMode { Policy, Nominal, NoisyPolicy };

std::vector<VecX> rollout_controls(const TrainState& ts, RollMode mode, double noise,
                                   const Episode& ep, const WorldConfig& cfg,
                                   const ModelParams& model, Rng& rng) {
  std::vector<VecX> out;
  if (mode == RollMode::Nominal) {
    out.resize(ep.states.size());
    for (size_t i = 0; i < ep.states.size(); ++i)
      out[i] = nominal_control(ep.states[i], ep.targets[i], model);
  } else {
    out = policy_controls(ts.policy, snapshot_episode(ep, cfg));
  }
  if (mode == RollMode::NoisyPolicy) {
    const VecX half = 0.5 * (model.bounds.hi - model.bounds.lo);
    for (auto& u : out) {
      for (int k = 0; k < u.size(); ++k) u(k) += noise * half(k) * rng.uniform(-1.0, 1.0);
      u = model.bounds.project(u);
    }
  }
  return out;
}

}  // namespace

Dataset collect(const TrainState& ts, const WorldConfig& world, const ModelParams& model,
                const TrainConfig& tc, int episodes, Rng& rng) {
  Dataset data;
  const int T = tc.label_horizon;
  for (int e = 0; e < episodes; ++e) {
    RollMode mode = RollMode::Policy;
    double noise = 0.0;
    if (rng.uniform01() < tc.explore_nominal_prob) {
      mode = RollMode::Nominal;
    } else if (rng.uniform01() < tc.explore_noise_prob) {
      mode = RollMode::NoisyPolicy;
      noise = rng.uniform(0.25, 1.0);
    }
    WorldConfig cfg = world;
    cfg.seed = rng.next_u64();
    Episode ep = sample_episode(cfg);
    const int n = cfg.num_agents;

    // For pure policy episodes the trajectory doubles as the labeling unroll,
    // so roll label_horizon extra steps past the episode end.
    const bool reuse_unroll = mode == RollMode::Policy;
    const int total_steps = cfg.episode_len + (reuse_unroll ? T : 0);
    std::vector<std::vector<AgentState>> traj_states{ep.states};
    std::vector<std::vector<bool>> traj_safe{safe_flags(ep.states, ep.obstacles, cfg)};
    std::vector<std::vector<VecX>> traj_controls;
    try {
      for (int t = 0; t < total_steps; ++t) {
        std::vector<VecX> controls = rollout_controls(ts, mode, noise, ep, cfg, model, rng);
        for (int i = 0; i < n; ++i) {
          controls[i] = model.bounds.project(controls[i]);
          ep.states[i] = step(ep.states[i], controls[i], model);
        }
        traj_controls.push_back(std::move(controls));
        traj_states.push_back(ep.states);
        traj_safe.push_back(safe_flags(ep.states, ep.obstacles, cfg));
      }
    } catch (const IntegrationError& err) {
      std::cerr << "collect: episode aborted: " << err.what() << "\n";
      continue;
    }

    // Regular stride samples plus every violation step: collisions are brief
    // and rare, and the unsafe class starves without them.
    std::vector<int> sampled;
    for (int t = 0; t + 1 < static_cast<int>(traj_controls.size()) && t < cfg.episode_len;
         t += tc.label_stride)
      sampled.push_back(t);
    for (int t = 0; t + 1 < static_cast<int>(traj_controls.size()) && t < cfg.episode_len; ++t) {
      bool any_unsafe = false;
      for (const bool safe : traj_safe[t]) any_unsafe = any_unsafe || !safe;
      if (any_unsafe && t % tc.label_stride != 0) sampled.push_back(t);
    }
    std::sort(sampled.begin(), sampled.end());
    for (const int t : sampled) {
      SnapshotRecord rec;
      rec.states = traj_states[t];
      rec.targets = ep.targets;
      rec.obstacles = ep.obstacles;
      rec.controls = traj_controls[t];
      rec.labels.assign(n, Label::Unlabeled);

      std::vector<std::vector<bool>> window;
      if (reuse_unroll) {
        for (int k = 0; k <= T && t + k < static_cast<int>(traj_safe.size()); ++k)
          window.push_back(traj_safe[t + k]);
      } else {
        // Fresh unroll under the current policy from the visited state.
        Episode probe = ep;
        probe.states = traj_states[t];
        window.push_back(traj_safe[t]);
        try {
          for (int k = 0; k < T; ++k) {
            std::vector<VecX> controls =
                policy_controls(ts.policy, snapshot_episode(probe, cfg));
            for (int i = 0; i < n; ++i)
              probe.states[i] = step(probe.states[i], model.bounds.project(controls[i]), model);
            window.push_back(safe_flags(probe.states, probe.obstacles, cfg));
          }
        } catch (const IntegrationError&) {
          // keep the partial window; unlabeled beyond it
        }
      }
      for (int i = 0; i < n; ++i) {
        if (!window[0][i]) {
          rec.labels[i] = Label::Unsafe;
          continue;
        }
        bool all_safe = static_cast<int>(window.size()) == T + 1;
        for (const auto& flags : window) all_safe = all_safe && flags[i];
        rec.labels[i] = all_safe ? Label::Safe : Label::Unlabeled;
      }
      data.records.push_back(std::move(rec));
    }
  }
  return data;
}

std::vector<BatchItem> sample_batch(const Dataset& data, int budget, Rng& rng) {
  std::array<std::vector<std::pair<int, int>>, 3> pools;
  for (int r = 0; r < static_cast<int>(data.records.size()); ++r)
    for (int i = 0; i < static_cast<int>(data.records[r].labels.size()); ++i)
      pools[static_cast<int>(data.records[r].labels[i])].push_back({r, i});
  for (auto& pool : pools)
    for (int k = static_cast<int>(pool.size()) - 1; k > 0; --k)
      std::swap(pool[k], pool[rng.uniform_int(0, k)]);

  std::vector<std::pair<int, int>> chosen;
  std::array<size_t, 3> cursor{0, 0, 0};
  const int per_class = budget / 3;
  for (int c = 0; c < 3; ++c) {
    if (pools[c].empty()) continue;
    // Balance across labels: short pools are topped up with replacement (the
    // hinge terms degenerate under class imbalance), capped at 8x reuse.
    const int want = std::min(per_class, 8 * static_cast<int>(pools[c].size()));
    for (int k = 0; k < want; ++k) chosen.push_back(pools[c][k % pools[c].size()]);
    cursor[c] = std::min(pools[c].size(), static_cast<size_t>(want));
  }
  bool progress = true;  // fill any remaining budget from unused samples
  while (static_cast<int>(chosen.size()) < budget && progress) {
    progress = false;
    for (int c = 0; c < 3 && static_cast<int>(chosen.size()) < budget; ++c)
      if (cursor[c] < pools[c].size()) {
        chosen.push_back(pools[c][cursor[c]++]);
        progress = true;
      }
  }

  std::map<int, std::vector<int>> by_record;
  for (const auto& [r, i] : chosen) by_record[r].push_back(i);
  std::vector<BatchItem> batch;
  for (auto& [r, egos] : by_record) {
    std::sort(egos.begin(), egos.end());
    batch.push_back(BatchItem{&data.records[r], egos});
  }
  return batch;
}

double assemble_loss(const std::vector<EgoTerms>& terms, const LossWeights& w,
                     bool unlabeled_derivative) {
  const auto hinge = [](double x) { return std::max(0.0, x); };
  double total = 0.0;
  for (const auto& t : terms) {
    total += w.eta_c * t.imitation_gap;
    if (t.label != Label::Unlabeled || unlabeled_derivative)
      total += w.eta_d * hinge(w.gamma - t.constraint_value);
    if (t.label == Label::Safe) total += hinge(w.gamma - t.h);
    if (t.label == Label::Unsafe) total += hinge(w.gamma + t.h);
  }
  return total;
}

LossReport compute_loss(const NetParams& policy, const NetParams& cbf,
                        const std::vector<BatchItem>& batch, const WorldConfig& world,
                        const ModelParams& model, const TrainConfig& tc) {
  LossReport rep;
  const LossWeights& w = tc.weights;
  const double kappa = tc.secant_dt > 0.0 ? tc.secant_dt : model.dt;
  const int nu = model.nu();

  for (const BatchItem& item : batch) {
    const SnapshotRecord& rec = *item.rec;
    const int n = static_cast<int>(rec.states.size());
    std::vector<LidarScan> scans;
    scans.reserve(n);
    for (const auto& x : rec.states) scans.push_back(cast_lidar(x, rec.obstacles, world));
    const GraphSnapshot graph = build_graph(rec.states, rec.targets, scans, world);

    std::vector<VecX> u_nom(n);
    for (int i = 0; i < n; ++i)
      u_nom[i] = nominal_control(rec.states[i], rec.targets[i], model);
    std::vector<VecX> u_ref = u_nom;
    if (tc.reference_qp) {
      const auto grads = cbf_all_gradients(cbf, graph);
      const QPProblem qp = build_cbf_qp(grads, graph, u_nom, model, w.alpha);
      QPSettings qs;
      qs.eps = 1e-9;
      qs.max_iter = 2000;
      const QPResult res = solve_qp(qp, qs);
      if (res.status == QPStatus::Infeasible) ++rep.qp_infeasible;
      for (int i = 0; i < n; ++i) u_ref[i] = res.u.segment(i * nu, nu);
    }

    GraphProgram prog(graph, policy.cfg.equivariant);
    prog.bind_policy(policy);
    prog.bind_cbf(cbf);
    auto& T = prog.tape();
    std::vector<diff::VarId> uvars(n);
    for (int i = 0; i < n; ++i) uvars[i] = prog.policy(i);
    std::vector<GraphProgram::NodeVars> shared_pert;
    if (!tc.recorded_neighbor_controls)
      shared_pert = prog.perturbed_states(kappa, uvars, model);

    std::vector<diff::VarId> terms;
    for (const int ego : item.egos) {
      const Label label = rec.labels[ego];
      ++rep.n_egos;
      rep.n_safe += label == Label::Safe;
      rep.n_unsafe += label == Label::Unsafe;
      rep.n_unlabeled += label == Label::Unlabeled;

      const diff::VarId gap =
          T.l2norm(T.sub(uvars[ego], T.constant(MatX(u_ref[ego]))));
      const diff::VarId imitation = T.smul(gap, w.eta_c);
      rep.imitation += T.scalar(imitation);
      terms.push_back(imitation);

      if (label != Label::Unlabeled || tc.unlabeled_derivative) {
        const diff::VarId h = prog.cbf(ego);
        diff::VarId h_pert;
        if (tc.recorded_neighbor_controls) {
          std::vector<diff::VarId> controls(n);
          for (int j = 0; j < n; ++j)
            controls[j] =
                j == ego ? uvars[ego] : T.constant(MatX(rec.controls[j]));
          h_pert = prog.cbf_at(ego, prog.perturbed_states(kappa, controls, model));
        } else {
          h_pert = prog.cbf_at(ego, shared_pert);
        }
        const diff::VarId hdot = T.smul(T.sub(h_pert, h), 1.0 / kappa);
        const diff::VarId cv = T.add(hdot, T.smul(h, w.alpha.slope));
        const diff::VarId deriv =
            T.smul(T.relu(T.sub(T.scalar_const(w.gamma), cv)), w.eta_d);
        rep.derivative += T.scalar(deriv);
        terms.push_back(deriv);
      }
      if (label == Label::Safe) {
        const diff::VarId t =
            T.relu(T.sub(T.scalar_const(w.gamma), prog.cbf(ego)));
        rep.safe_hinge += T.scalar(t);
        terms.push_back(t);
      } else if (label == Label::Unsafe) {
        const diff::VarId t =
            T.relu(T.add(T.scalar_const(w.gamma), prog.cbf(ego)));
        rep.unsafe_hinge += T.scalar(t);
        terms.push_back(t);
      }
    }
    if (terms.empty()) continue;
    const diff::VarId total = T.sum(T.vstack(terms));
    T.backward(total);
    for (const auto& [name, var] : prog.policy_vars()) {
      auto it = rep.grad_policy.find(name);
      if (it == rep.grad_policy.end()) rep.grad_policy[name] = T.grad(var);
      else it->second += T.grad(var);
    }
    for (const auto& [name, var] : prog.cbf_vars()) {
      auto it = rep.grad_cbf.find(name);
      if (it == rep.grad_cbf.end()) rep.grad_cbf[name] = T.grad(var);
      else it->second += T.grad(var);
    }
  }
  rep.total = rep.imitation + rep.derivative + rep.safe_hinge + rep.unsafe_hinge;
  return rep;
}

void adam_update(NetParams& net, AdamState& st, const std::map<std::string, MatX>& grads,
                 double lr, double scale) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++st.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  for (const auto& [name, g_raw] : grads) {
    auto pit = net.t.find(name);
    if (pit == net.t.end()) continue;
    const MatX g = scale * g_raw;
    MatX& m = st.m.try_emplace(name, MatX::Zero(g.rows(), g.cols())).first->second;
    MatX& v = st.v.try_emplace(name, MatX::Zero(g.rows(), g.cols())).first->second;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    pit->second -=
        (lr * (m / bc1).array() / ((v / bc2).array().sqrt() + eps)).matrix();
  }
}

namespace {

uint64_t eval_seed(uint64_t base, int k) {
  Rng rng(base ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(k + 1)));
  return rng.next_u64();
}

}  // namespace

GradientDecay gradient_decay(const NetParams& cbf, const WorldConfig& world,
                             const ModelParams& model, uint64_t seed, int scenes) {
  (void)model;
  GradientDecay out;
  double outer_sum = 0.0, inner_sum = 0.0;
  int outer_n = 0, inner_n = 0;
  for (int s = 0; s < scenes; ++s) {
    WorldConfig cfg = world;
    cfg.seed = seed + static_cast<uint64_t>(s);
    Episode ep = sample_episode(cfg);
    Rng rng(cfg.seed ^ 0x5bd1e995u);
    for (auto& x : ep.states) x.v = rng.normal_vec3(0.3);
    const GraphSnapshot graph = snapshot_episode(ep, cfg);
    const auto grads = cbf_all_gradients(cbf, graph);
    for (int ego = 0; ego < graph.num_agents(); ++ego) {
      const Vec3 ego_p = ep.states[ego].p;
      for (const auto& [node, g] : grads[ego].by_node) {
        if (graph.nodes[node].kind != NodeKind::Agent || graph.nodes[node].agent == ego)
          continue;
        const double d = (graph.nodes[node].state.p - ego_p).norm();
        const double mag = std::sqrt(g.dp.squaredNorm() + g.dR.squaredNorm() +
                                     g.dv.squaredNorm() + g.domega.squaredNorm());
        if (d > 0.9 * cfg.comm_range && d <= cfg.comm_range) {
          outer_sum += mag;
          ++outer_n;
        } else if (d <= 0.5 * cfg.sensing_range) {
          inner_sum += mag;
          ++inner_n;
        }
      }
    }
  }
  if (outer_n > 0) out.outer = outer_sum / outer_n;
  if (inner_n > 0) out.inner = inner_sum / inner_n;
  return out;
}

TrainResult train(const WorldConfig& world, const ModelParams& model, const NetConfig& net,
                  const TrainConfig& tc) {
  namespace fs = std::filesystem;
  fs::create_directories(tc.out_dir);
  const std::string curve_path = tc.out_dir + "/curve.csv";
  const std::string ckpt_path = tc.out_dir + "/checkpoint.bin";

  TrainState ts;
  ts.policy = NetParams::init_policy(net, model, tc.seed);
  ts.cbf = NetParams::init_cbf(net, tc.seed + 1);
  std::cout << "train: policy params " << ts.policy.parameter_count() << ", cbf params "
            << ts.cbf.parameter_count() << ", trunk "
            << (net.equivariant ? "equivariant" : "raw") << "\n";

  Rng rng(tc.seed ^ 0xa02b'dbf7'bb3c'0a7ULL);
  std::ofstream csv(curve_path);
  csv << "iter,total,imitation,derivative,safe_hinge,unsafe_hinge,n_safe,n_unsafe,"
         "n_unlabeled,eval_safety,eval_reach,grad_outer,grad_inner,wall_s\n";
  csv.flush();

  const auto t0 = std::chrono::steady_clock::now();
  const auto wall = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  const auto evaluate = [&](const TrainState& state) {
    auto policy = make_learned_policy(state.policy);
    double safety = 0.0, reach = 0.0;
    for (int k = 0; k < tc.eval_episodes; ++k) {
      const EpisodeMetrics m =
          run_episode(*policy, world, model, eval_seed(tc.seed, k));
      safety += m.safety_rate;
      reach += m.reach_rate;
    }
    return std::pair<double, double>(safety / std::max(1, tc.eval_episodes),
                                     reach / std::max(1, tc.eval_episodes));
  };

  TrainState last_good = ts;
  double eval_safety = 0.0, eval_reach = 0.0;
  for (int iter = 1; iter <= tc.iterations; ++iter) {
    const Dataset data = collect(ts, world, model, tc, tc.episodes_per_round, rng);
    LossReport rep;
    bool aborted = false;
    for (int u = 0; u < tc.updates_per_round; ++u) {
      const auto batch = sample_batch(data, tc.batch_egos, rng);
      if (batch.empty()) break;
      rep = compute_loss(ts.policy, ts.cbf, batch, world, model, tc);
      if (!std::isfinite(rep.total)) {
        std::cerr << "train: non-finite loss at iteration " << iter
                  << "; keeping the last good checkpoint\n";
        ts = last_good;
        aborted = true;
        break;
      }
      const double scale = 1.0 / std::max(1, rep.n_egos);
      adam_update(ts.policy, ts.adam_policy, rep.grad_policy, tc.lr_policy, scale);
      adam_update(ts.cbf, ts.adam_cbf, rep.grad_cbf, tc.lr_cbf, scale);
    }
    if (aborted) break;
    last_good = ts;
    ts.iteration = iter;

    GradientDecay decay;
    if (iter % tc.eval_every == 0 || iter == tc.iterations) {
      std::tie(eval_safety, eval_reach) = evaluate(ts);
      decay = gradient_decay(ts.cbf, world, model, tc.seed + 991, 4);
      std::cout << "iter " << iter << " loss " << rep.total / std::max(1, rep.n_egos)
                << " eval_safety " << eval_safety << " eval_reach " << eval_reach << "\n";
    }
    const double per = 1.0 / std::max(1, rep.n_egos);
    csv << iter << "," << rep.total * per << "," << rep.imitation * per << ","
        << rep.derivative * per << "," << rep.safe_hinge * per << ","
        << rep.unsafe_hinge * per << "," << rep.n_safe << "," << rep.n_unsafe << ","
        << rep.n_unlabeled << "," << eval_safety << "," << eval_reach << "," << decay.outer
        << "," << decay.inner << "," << wall() << "\n";
    csv.flush();
  }

  ts.rng_state = rng.state();
  save_train_state(ckpt_path, ts);
  return TrainResult{std::move(ts), ckpt_path, curve_path};
}

void save_train_state(const std::string& path, const TrainState& ts) {
  std::map<std::string, MatX> arrays;
  pack_net("policy", ts.policy, arrays);
  pack_net("cbf", ts.cbf, arrays);
  for (const auto& [name, m] : ts.adam_policy.m) arrays["adam.policy.m." + name] = m;
  for (const auto& [name, m] : ts.adam_policy.v) arrays["adam.policy.v." + name] = m;
  for (const auto& [name, m] : ts.adam_cbf.m) arrays["adam.cbf.m." + name] = m;
  for (const auto& [name, m] : ts.adam_cbf.v) arrays["adam.cbf.v." + name] = m;
  MatX meta(1, 5);
  meta << static_cast<double>(ts.iteration), static_cast<double>(ts.adam_policy.step),
      static_cast<double>(ts.adam_cbf.step), static_cast<double>(ts.rng_state >> 32),
      static_cast<double>(ts.rng_state & 0xffffffffULL);
  arrays["train.meta"] = meta;
  save_arrays(path, arrays);
}

TrainState load_train_state(const std::string& path) {
  const auto arrays = load_arrays(path);
  TrainState ts;
  ts.policy = unpack_net("policy", arrays);
  ts.cbf = unpack_net("cbf", arrays);
  for (const auto& [name, m] : arrays) {
    if (name.rfind("adam.policy.m.", 0) == 0) ts.adam_policy.m[name.substr(14)] = m;
    else if (name.rfind("adam.policy.v.", 0) == 0) ts.adam_policy.v[name.substr(14)] = m;
    else if (name.rfind("adam.cbf.m.", 0) == 0) ts.adam_cbf.m[name.substr(11)] = m;
    else if (name.rfind("adam.cbf.v.", 0) == 0) ts.adam_cbf.v[name.substr(11)] = m;
  }
  const auto it = arrays.find("train.meta");
  if (it == arrays.end()) throw std::runtime_error("load_train_state: missing train.meta");
  const MatX& meta = it->second;
  ts.iteration = static_cast<int>(meta(0, 0));
  ts.adam_policy.step = static_cast<int64_t>(meta(0, 1));
  ts.adam_cbf.step = static_cast<int64_t>(meta(0, 2));
  ts.rng_state = (static_cast<uint64_t>(meta(0, 3)) << 32) | static_cast<uint64_t>(meta(0, 4));
  return ts;
}

}  // namespace egcbf
