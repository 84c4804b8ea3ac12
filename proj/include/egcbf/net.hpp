#pragma once

// Canonicalization-wrapped graph transformer: a policy head that is
// equivariant under the swarm symmetry group by construction, an invariant
// CBF head, input-gradient extraction for the CBF constraint, and the
// Monte-Carlo Haar invariantizer.
//
// Every node's tensorial feature is re-expressed in the ego agent's frame
// before entering the trunk; the policy output is mapped back by the ego
// action (identity for the body-frame quadrotor controls, a z-rotation for
// the double-integrator acceleration).

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "egcbf/diff.hpp"
#include "egcbf/dynamics.hpp"
#include "egcbf/graph.hpp"

namespace egcbf {

struct NetConfig {
  int d_model = 64;
  int d_ff = 128;
  int layers = 2;
  int head_hidden = 64;
  bool equivariant = true;  // false: raw world-frame features (ablation)
};

struct NetParams {
  NetConfig cfg;
  ModelKind model = ModelKind::Quadrotor;  // meaningful for the policy head
  int out_dim = 1;
  VecX squash_center, squash_half;  // policy squash; empty for the CBF
  double squash_xy_radius = 0.0;
  std::map<std::string, MatX> t;  // trainable tensors by name

  static NetParams init_policy(const NetConfig& cfg, const ModelParams& model,
                               uint64_t seed);
  static NetParams init_cbf(const NetConfig& cfg, uint64_t seed);
  size_t parameter_count() const;
};

/// All forward computations over one snapshot share a tape here, so a whole
/// batch element (policies of every agent plus CBF terms) can be backprop'd
/// in one reverse pass.
class GraphProgram {
 public:
  struct NodeVars {
    diff::VarId pos = -1, rot = -1, vel = -1, omg = -1;
  };

  GraphProgram(const GraphSnapshot& graph, bool equivariant);

  void bind_policy(const NetParams& params);
  void bind_cbf(const NetParams& params);

  diff::Tape& tape() { return tape_; }
  const Subgraph& subgraph(int ego);

  /// World/body-frame control of the ego agent (nu x 1), cached per ego.
  diff::VarId policy(int ego);
  /// CBF value of the ego agent (1 x 1), cached per ego.
  diff::VarId cbf(int ego);
  /// CBF value with node states overridden (used by the secant derivative).
  diff::VarId cbf_at(int ego, const std::vector<NodeVars>& states);

  /// Node states advanced by kappa * f(x, u) with on-tape agent controls.
  std::vector<NodeVars> perturbed_states(double kappa,
                                         const std::vector<diff::VarId>& controls,
                                         const ModelParams& params);

  const NodeVars& leaves(int node) const { return base_[node]; }
  const std::map<std::string, diff::VarId>& policy_vars() const { return pvars_; }
  const std::map<std::string, diff::VarId>& cbf_vars() const { return cvars_; }

  /// Feature matrix of the ego's subgraph (canonical or raw per trunk mode).
  MatX feature_matrix(int ego);

 private:
  diff::VarId features(const Subgraph& sub, const std::vector<NodeVars>& states);
  diff::VarId trunk_readout(const Subgraph& sub, diff::VarId feats,
                            const std::map<std::string, diff::VarId>& vars,
                            const NetConfig& cfg);
  diff::VarId squash_policy(diff::VarId head_out, const Subgraph& sub,
                            const std::vector<NodeVars>& states);
  std::map<std::string, diff::VarId> bind(const NetParams& params);

  const GraphSnapshot& graph_;
  bool equivariant_;
  diff::Tape tape_;
  std::vector<NodeVars> base_;
  std::map<int, Subgraph> subs_;
  const NetParams* pnet_ = nullptr;
  const NetParams* cnet_ = nullptr;
  std::map<std::string, diff::VarId> pvars_, cvars_;
  std::map<int, diff::VarId> policy_cache_, cbf_cache_;
};

/// One-shot policy evaluation for a single ego.
VecX forward_policy(const NetParams& params, const GraphSnapshot& graph, int ego);

/// Policy controls of every agent, sharing one program.
std::vector<VecX> policy_controls(const NetParams& params, const GraphSnapshot& graph);

double forward_cbf(const NetParams& params, const GraphSnapshot& graph, int ego);

/// Gradient of a scalar w.r.t. one node's raw state coordinates.
struct StateGrad {
  Vec3 dp = Vec3::Zero();
  Mat3 dR = Mat3::Zero();
  Vec3 dv = Vec3::Zero();
  Vec3 domega = Vec3::Zero();

  double dot(const StateDeriv& d) const {
    return dp.dot(d.dp) + dR.cwiseProduct(d.dR).sum() + dv.dot(d.dv) +
           domega.dot(d.domega);
  }
};

struct CbfGradients {
  double h = 0.0;
  std::map<int, StateGrad> by_node;  // graph node id -> gradient; absent = zero
};

/// Gradients of h(ego subgraph) w.r.t. the raw states of every node in the
/// subgraph, chained through the canonicalization.
CbfGradients cbf_input_gradients(const NetParams& params, const GraphSnapshot& graph,
                                 int ego);

/// Same for every ego, sharing one program.
std::vector<CbfGradients> cbf_all_gradients(const NetParams& params,
                                            const GraphSnapshot& graph);

/// Canonical feature matrix of one subgraph (value level, for audits).
MatX canonical_features(const GraphSnapshot& graph, const Subgraph& sub);

using ScalarSceneFn = std::function<double(const GraphSnapshot&, int ego)>;

enum class HaarSampling { Stratified, Random };

/// Average a scalar function over the compact rotation factor of the group:
/// hhat(x) = (1/K) sum_k h(phi_{g_k}(x)) with g_k pure z-rotations.
/// Translations are handled exactly by the relative/canonical features of the
/// wrapped function, so only the circle is sampled.
ScalarSceneFn haar_invariantize(ScalarSceneFn h_raw, int K,
                                HaarSampling sampling = HaarSampling::Stratified,
                                uint64_t seed = 0);

// Checkpoint serialization: named flat arrays with a version header, fixed
// little-endian byte order.
void save_arrays(const std::string& path, const std::map<std::string, MatX>& arrays);
std::map<std::string, MatX> load_arrays(const std::string& path);

/// Flatten a network into named arrays under the given prefix (and back).
void pack_net(const std::string& prefix, const NetParams& params,
              std::map<std::string, MatX>& into);
NetParams unpack_net(const std::string& prefix, const std::map<std::string, MatX>& from);

}  // namespace egcbf
