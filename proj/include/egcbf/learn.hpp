#pragma once

// On-policy data collection with finite-horizon safe/unsafe labeling, the
// joint policy+CBF loss, and the Adam training loop.

#include <string>
#include <vector>

#include "egcbf/dynamics.hpp"
#include "egcbf/net.hpp"
#include "egcbf/safectrl.hpp"
#include "egcbf/world.hpp"

namespace egcbf {

enum class Label { Safe, Unsafe, Unlabeled };

/// One sampled timestep: the full scene, the controls in effect, and one
/// label per ego agent.
struct SnapshotRecord {
  std::vector<AgentState> states;
  std::vector<Vec3> targets;
  std::vector<Obstacle> obstacles;
  std::vector<VecX> controls;
  std::vector<Label> labels;
};

struct Dataset {
  std::vector<SnapshotRecord> records;
  int count(Label label) const;
};

struct LossWeights {
  double eta_c = 1.0;
  double eta_d = 0.2;
  double gamma = 0.02;
  ClassK alpha{1.0};
};

struct TrainConfig {
  int iterations = 300;
  int episodes_per_round = 2;
  int updates_per_round = 10;
  int batch_egos = 256;
  int label_horizon = 32;  // T
  int label_stride = 16;
  double explore_nominal_prob = 0.3;
  /// Probability that a policy episode adds bounded control noise during
  /// collection. Conflict states are vanishingly rare once the policy gets
  /// good, and the unsafe/corridor hinges starve without them.
  double explore_noise_prob = 0.0;
  double lr_cbf = 1e-4;
  double lr_policy = 1e-5;
  LossWeights weights;
  bool reference_qp = true;  // imitate the QP filter (else the nominal law)
  bool unlabeled_derivative = false;
  /// Derivative-term control provenance: false substitutes the current policy
  /// for every agent in the subgraph (neighbors share experience through the
  /// constraint); true keeps the recorded neighbor controls and substitutes
  /// the policy for the ego only.
  bool recorded_neighbor_controls = false;
  double secant_dt = -1.0;  // <= 0: use the model dt
  int eval_every = 5;
  int eval_episodes = 4;
  uint64_t seed = 7;
  std::string out_dir = "train_out";
};

struct AdamState {
  std::map<std::string, MatX> m, v;
  int64_t step = 0;
};

struct TrainState {
  NetParams policy;
  NetParams cbf;
  AdamState adam_policy, adam_cbf;
  uint64_t rng_state = 0;
  int iteration = 0;
};

/// Roll episodes under the current policy (mixed with nominal-controller
/// episodes for exploration), label sampled snapshots with the finite-horizon
/// rule and store the controls in effect.
Dataset collect(const TrainState& ts, const WorldConfig& world, const ModelParams& model,
                const TrainConfig& tc, int episodes, Rng& rng);

struct BatchItem {
  const SnapshotRecord* rec = nullptr;
  std::vector<int> egos;
};

/// Egos drawn balanced across labels (as far as the pools allow), grouped by
/// snapshot so each record's QP is solved once.
std::vector<BatchItem> sample_batch(const Dataset& data, int budget, Rng& rng);

struct LossReport {
  double total = 0.0;
  double imitation = 0.0;
  double derivative = 0.0;
  double safe_hinge = 0.0;
  double unsafe_hinge = 0.0;
  int n_egos = 0, n_safe = 0, n_unsafe = 0, n_unlabeled = 0;
  int qp_infeasible = 0;
  std::map<std::string, MatX> grad_policy, grad_cbf;
};

/// Joint loss over a batch with gradients for both parameter sets. The
/// imitation target (QP filter or nominal law) is a constant; gradients flow
/// through the policy terms and through the CBF secant derivative.
LossReport compute_loss(const NetParams& policy, const NetParams& cbf,
                        const std::vector<BatchItem>& batch, const WorldConfig& world,
                        const ModelParams& model, const TrainConfig& tc);

/// Value-level mirror of the per-ego loss assembly; the independent oracle
/// used by the unit tests.
struct EgoTerms {
  Label label = Label::Unlabeled;
  double imitation_gap = 0.0;
  double h = 0.0;
  double constraint_value = 0.0;  // hdot + alpha(h)
};
double assemble_loss(const std::vector<EgoTerms>& terms, const LossWeights& w,
                     bool unlabeled_derivative);

void adam_update(NetParams& net, AdamState& st, const std::map<std::string, MatX>& grads,
                 double lr, double scale);

struct TrainResult {
  TrainState state;
  std::string checkpoint_path;
  std::string curve_path;
};

/// Alternate collect/update rounds, emit the learning-curve CSV and the final
/// checkpoint. Aborts with the last finite checkpoint if the loss goes NaN.
TrainResult train(const WorldConfig& world, const ModelParams& model,
                  const NetConfig& net, const TrainConfig& tc);

void save_train_state(const std::string& path, const TrainState& ts);
TrainState load_train_state(const std::string& path);

/// Mean CBF input-gradient magnitude over nodes in the outer communication
/// ring vs the inner safety core (a diagnostic, logged during training).
struct GradientDecay {
  double outer = 0.0;
  double inner = 0.0;
};
GradientDecay gradient_decay(const NetParams& cbf, const WorldConfig& world,
                             const ModelParams& model, uint64_t seed, int scenes = 8);

}  // namespace egcbf
