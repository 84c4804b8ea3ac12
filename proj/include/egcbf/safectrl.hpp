#pragma once

// CBF machinery: extended class-K functions, equivariant nominal controllers,
// constraint evaluation, assembly of the centralized min-norm CBF-QP, and the
// hand-crafted pairwise CBF baselines for the double integrator.

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "egcbf/dynamics.hpp"
#include "egcbf/graph.hpp"
#include "egcbf/net.hpp"
#include "egcbf/qp.hpp"
#include "egcbf/world.hpp"

namespace egcbf {

/// Linear extended class-K function alpha(x) = slope * x, slope > 0.
struct ClassK {
  double slope = 1.0;
  double operator()(double x) const { return slope * x; }
};

struct NominalGains {
  double kp = 1.5;
  double kd = 2.4;
  // quadrotor attitude loop
  double kR = 0.04;
  double kOmega = 0.006;
};

/// Goal-reaching controller with no safety awareness. PD law for the double
/// integrator; a cascaded geometric law for the quadrotor whose yaw reference
/// follows the target direction so the whole map commutes with the group.
/// The command is clamped to the model's control set.
VecX nominal_control(const AgentState& x, const Vec3& target, const ModelParams& params,
                     const NominalGains& gains = {});

// --- hand-crafted pairwise CBF (double integrator states) -------------------
//
// h = ||dp||^2 - r^2 + c * (dp . dv) / ||dp||, dp = p_i - p_j. The velocity
// term makes hdot depend on the accelerations, giving relative degree one.

struct PairCbf {
  double c = 0.2;
  double denom_floor = 1e-9;  // clamp for near-coincident positions
};

double handcrafted_cbf(const AgentState& xi, const AgentState& xj, double r,
                       const PairCbf& cbf = {});

/// hdot decomposed as ai . u_i + aj . u_j + rest, plus the barrier value.
struct PairRow {
  Vec3 ai = Vec3::Zero();
  Vec3 aj = Vec3::Zero();
  double rest = 0.0;
  double h = 0.0;
};

PairRow handcrafted_cbf_row(const AgentState& xi, const AgentState& xj, double r,
                            const PairCbf& cbf = {});

/// Static-obstacle variant (the obstacle contributes no control column).
PairRow handcrafted_obstacle_row(const AgentState& xi, const Obstacle& o,
                                 double margin, const PairCbf& cbf = {});

// --- learned / generic CBF machinery ----------------------------------------

struct EgoCbfData {
  double h = 0.0;
  std::map<int, StateGrad> grads;  // graph node id -> gradient of h
};

using CbfOracle = std::function<EgoCbfData(const GraphSnapshot&, int ego)>;

CbfOracle make_net_cbf_oracle(const NetParams& cbf_net);

/// Per-ego value of the distributed CBF condition,
///   sum_j < grad_{x_j} h_i, f(x_j, u_j) > + alpha(h_i),
/// where the sum runs over the agent nodes of ego i's subgraph; lidar and
/// target nodes are static and contribute zero dynamics. Throws when a
/// required agent control is missing.
VecX cbf_constraint_values(const CbfOracle& oracle, const GraphSnapshot& graph,
                           const std::vector<VecX>& controls, const ModelParams& params,
                           const ClassK& alpha);

/// The centralized min-norm QP of the safety filter: objective pulls toward
/// u_nom, one inequality row per ego.
QPProblem build_cbf_qp(const CbfOracle& oracle, const GraphSnapshot& graph,
                       const std::vector<VecX>& u_nom, const ModelParams& params,
                       const ClassK& alpha);

/// Same rows from precomputed gradients (avoids re-running the net).
QPProblem build_cbf_qp(const std::vector<CbfGradients>& grads, const GraphSnapshot& graph,
                       const std::vector<VecX>& u_nom, const ModelParams& params,
                       const ClassK& alpha);

// --- hand-crafted baselines (double integrator) ------------------------------

struct QPDiag {
  int iterations = 0;
  double primal_res = 0.0;
  double dual_res = 0.0;
  bool infeasible = false;
};

/// Centralized baseline: all pairs, one joint QP over every agent's control.
std::vector<VecX> ccbf_controls(const std::vector<AgentState>& states,
                                const std::vector<Vec3>& targets,
                                const std::vector<Obstacle>& obstacles,
                                const ModelParams& params, const WorldConfig& cfg,
                                const PairCbf& cbf, const ClassK& alpha,
                                QPDiag* diag = nullptr);

/// Decentralized baseline: each ego solves its own QP over its control only,
/// neighbors' accelerations taken as zero-order-hold of their last command.
std::vector<VecX> dcbf_controls(const std::vector<AgentState>& states,
                                const std::vector<Vec3>& targets,
                                const std::vector<Obstacle>& obstacles,
                                const std::vector<VecX>& prev_controls,
                                const ModelParams& params, const WorldConfig& cfg,
                                const PairCbf& cbf, const ClassK& alpha,
                                QPDiag* diag = nullptr);

}  // namespace egcbf
