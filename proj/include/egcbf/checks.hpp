#pragma once

// Property suites behind the `check` CLI subcommand and the acceptance tests:
// group axioms, dynamics equivariance, structural network equivariance,
// gradient correctness, QP optimality and constraint-preservation.

#include <string>
#include <vector>

#include "egcbf/graph.hpp"
#include "egcbf/world.hpp"

namespace egcbf {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

bool all_pass(const std::vector<CheckResult>& results);

/// Random scene generator shared by the suites: positions clear of each other,
/// randomized attitudes/twists appropriate to the model.
Episode random_scene(Rng& rng, ModelKind kind, int agents, int obstacles,
                     const WorldConfig& base);

std::vector<CheckResult> check_group(uint64_t seed);
std::vector<CheckResult> check_dynamics(uint64_t seed, int cases = 100);
std::vector<CheckResult> check_equivariance(uint64_t seed, int scenes = 100);
/// Corrupted weights keep equivariance (it is structural); a raw world-frame
/// trunk loses it.
std::vector<CheckResult> check_canonicalization_ablation(uint64_t seed);
/// Equivariance audit on a recorded snapshot (graph-level group action).
std::vector<CheckResult> check_equivariance_graph(const GraphSnapshot& graph, uint64_t seed);
std::vector<CheckResult> check_gradients(uint64_t seed);
std::vector<CheckResult> check_qp(uint64_t seed, int cases = 100);
std::vector<CheckResult> check_lemma2(uint64_t seed, int cases = 100);
std::vector<CheckResult> check_haar(uint64_t seed);
std::vector<CheckResult> check_forward_invariance(uint64_t seed, int starts = 100,
                                                  int steps = 1000);

/// Per-op finite-difference gradient checks; `probes` random draws per op.
/// Returns one result per op.
std::vector<CheckResult> gradcheck_ops(uint64_t seed, int probes = 20);

/// End-to-end loss gradient vs central finite differences on random
/// parameter entries of both networks.
CheckResult gradcheck_loss(uint64_t seed, int probes = 20);

}  // namespace egcbf
