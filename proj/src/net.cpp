#include "egcbf/net.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "egcbf/rng.hpp"

namespace egcbf {

namespace {

MatX xavier(int rows, int cols, Rng& rng) {
  const double lim = std::sqrt(6.0 / static_cast<double>(rows + cols));
  MatX m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = rng.uniform(-lim, lim);
  return m;
}

void init_trunk(NetParams& net, uint64_t seed) {
  Rng rng(seed);
  const NetConfig& cfg = net.cfg;
  net.t["embed.W"] = xavier(kFeatureDim, cfg.d_model, rng);
  net.t["embed.b"] = MatX::Zero(1, cfg.d_model);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    net.t[p + "Wq"] = xavier(cfg.d_model, cfg.d_model, rng);
    net.t[p + "Wk"] = xavier(cfg.d_model, cfg.d_model, rng);
    net.t[p + "Wv"] = xavier(cfg.d_model, cfg.d_model, rng);
    net.t[p + "ffn.W1"] = xavier(cfg.d_model, cfg.d_ff, rng);
    net.t[p + "ffn.b1"] = MatX::Zero(1, cfg.d_ff);
    net.t[p + "ffn.W2"] = xavier(cfg.d_ff, cfg.d_model, rng);
    net.t[p + "ffn.b2"] = MatX::Zero(1, cfg.d_model);
  }
  net.t["head.W1"] = xavier(cfg.d_model, cfg.head_hidden, rng);
  net.t["head.b1"] = MatX::Zero(1, cfg.head_hidden);
  net.t["head.W2"] = xavier(cfg.head_hidden, net.out_dim, rng);
  net.t["head.b2"] = MatX::Zero(1, net.out_dim);
}

}  // namespace

NetParams NetParams::init_policy(const NetConfig& cfg, const ModelParams& model,
                                 uint64_t seed) {
  NetParams net;
  net.cfg = cfg;
  net.model = model.kind;
  net.out_dim = model.nu();
  net.squash_center = 0.5 * (model.bounds.lo + model.bounds.hi);
  net.squash_half = 0.5 * (model.bounds.hi - model.bounds.lo);
  net.squash_xy_radius = model.bounds.xy_radius;
  if (model.kind == ModelKind::DoubleIntegrator && net.squash_xy_radius <= 0.0)
    throw std::invalid_argument(
        "init_policy: the double integrator needs a radial xy bound so the "
        "squashed output set is rotation-invariant");
  init_trunk(net, seed);
  return net;
}

NetParams NetParams::init_cbf(const NetConfig& cfg, uint64_t seed) {
  NetParams net;
  net.cfg = cfg;
  net.out_dim = 1;
  init_trunk(net, seed);
  return net;
}

size_t NetParams::parameter_count() const {
  size_t n = 0;
  for (const auto& [name, m] : t) n += static_cast<size_t>(m.size());
  return n;
}

GraphProgram::GraphProgram(const GraphSnapshot& graph, bool equivariant)
    : graph_(graph), equivariant_(equivariant) {
  base_.resize(graph.nodes.size());
  for (size_t i = 0; i < graph.nodes.size(); ++i) {
    const GraphNode& node = graph.nodes[i];
    base_[i].pos = tape_.leaf(node.state.p);
    if (node.kind == NodeKind::Agent) {
      base_[i].rot = tape_.leaf(node.state.R);
      base_[i].vel = tape_.leaf(node.state.v);
      base_[i].omg = tape_.leaf(node.state.omega);
    }
  }
}

std::map<std::string, diff::VarId> GraphProgram::bind(const NetParams& params) {
  std::map<std::string, diff::VarId> vars;
  for (const auto& [name, m] : params.t) vars[name] = tape_.leaf(m);
  return vars;
}

void GraphProgram::bind_policy(const NetParams& params) {
  pnet_ = &params;
  pvars_ = bind(params);
}

void GraphProgram::bind_cbf(const NetParams& params) {
  cnet_ = &params;
  cvars_ = bind(params);
}

const Subgraph& GraphProgram::subgraph(int ego) {
  auto it = subs_.find(ego);
  if (it == subs_.end()) it = subs_.emplace(ego, ego_subgraph(graph_, ego)).first;
  return it->second;
}

namespace {

struct EgoFrame {
  diff::VarId c = -1, s = -1, Rneg = -1, Rpos = -1;
};

EgoFrame ego_frame(diff::Tape& T, const GraphProgram::NodeVars& ego) {
  EgoFrame f;
  const diff::VarId r00 = T.block(ego.rot, 0, 0, 1, 1);
  const diff::VarId r10 = T.block(ego.rot, 1, 0, 1, 1);
  const diff::VarId norm = T.l2norm(T.vstack({r00, r10}));
  f.c = T.div(r00, norm);
  f.s = T.div(r10, norm);
  f.Rneg = T.rotz_cs(f.c, T.smul(f.s, -1.0));
  f.Rpos = T.rotz_cs(f.c, f.s);
  return f;
}

}  // namespace

diff::VarId GraphProgram::features(const Subgraph& sub, const std::vector<NodeVars>& st) {
  auto& T = tape_;
  const int ego_node = graph_.agent_node[sub.ego];
  EgoFrame frame;
  if (equivariant_) frame = ego_frame(T, st[ego_node]);

  MatX eye_flat(1, 9);
  Eigen::Map<Mat3>(eye_flat.data()) = Mat3::Identity();
  const diff::VarId pad_rot = T.constant(eye_flat);
  const diff::VarId pad_vec = T.constant(MatX::Zero(1, 3));

  std::vector<diff::VarId> rows;
  rows.reserve(sub.nodes.size());
  for (int id : sub.nodes) {
    const GraphNode& node = graph_.nodes[id];
    MatX onehot = MatX::Zero(1, 3);
    onehot(0, static_cast<int>(node.kind)) = 1.0;
    const diff::VarId kind = T.constant(onehot);

    diff::VarId prow;
    if (equivariant_) {
      const diff::VarId rel = T.sub(st[id].pos, st[ego_node].pos);
      prow = T.transpose(T.matmul(frame.Rneg, rel));
    } else {
      prow = T.transpose(st[id].pos);
    }

    diff::VarId rrow = pad_rot, vrow = pad_vec, wrow = pad_vec;
    if (node.kind == NodeKind::Agent) {
      const diff::VarId rot =
          equivariant_ ? T.matmul(frame.Rneg, st[id].rot) : st[id].rot;
      rrow = T.reshape(rot, 1, 9);
      const diff::VarId vel =
          equivariant_ ? T.matmul(frame.Rneg, st[id].vel) : st[id].vel;
      vrow = T.transpose(vel);
      wrow = T.transpose(st[id].omg);
    }
    rows.push_back(T.hstack({kind, prow, rrow, vrow, wrow}));
  }
  return T.vstack(rows);
}

diff::VarId GraphProgram::trunk_readout(const Subgraph& sub, diff::VarId feats,
                                        const std::map<std::string, diff::VarId>& vars,
                                        const NetConfig& cfg) {
  auto& T = tape_;
  const int n = static_cast<int>(sub.nodes.size());
  MatX mask = MatX::Zero(n, n);
  for (const auto& [recv, send] : sub.edges) mask(recv, send) = 1.0;

  diff::VarId H = T.add_rowvec(T.matmul(feats, vars.at("embed.W")), vars.at("embed.b"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const diff::VarId Q = T.matmul(H, vars.at(p + "Wq"));
    const diff::VarId K = T.matmul(H, vars.at(p + "Wk"));
    const diff::VarId V = T.matmul(H, vars.at(p + "Wv"));
    const diff::VarId logits = T.smul(T.matmul(Q, T.transpose(K)), scale);
    const diff::VarId S = T.softmax_rows(logits, mask);
    const diff::VarId Z = T.add(H, T.matmul(S, V));
    const diff::VarId hidden =
        T.tanh(T.add_rowvec(T.matmul(Z, vars.at(p + "ffn.W1")), vars.at(p + "ffn.b1")));
    H = T.add_rowvec(T.matmul(hidden, vars.at(p + "ffn.W2")), vars.at(p + "ffn.b2"));
  }
  const diff::VarId ego_row = T.block(H, sub.ego_local, 0, 1, cfg.d_model);
  const diff::VarId hh =
      T.tanh(T.add_rowvec(T.matmul(ego_row, vars.at("head.W1")), vars.at("head.b1")));
  return T.add_rowvec(T.matmul(hh, vars.at("head.W2")), vars.at("head.b2"));
}

diff::VarId GraphProgram::squash_policy(diff::VarId head_out, const Subgraph& sub,
                                        const std::vector<NodeVars>& states) {
  auto& T = tape_;
  const diff::VarId y = T.transpose(head_out);  // nu x 1
  if (pnet_->model == ModelKind::Quadrotor) {
    const diff::VarId half = T.constant(MatX(pnet_->squash_half));
    const diff::VarId center = T.constant(MatX(pnet_->squash_center));
    return T.add(T.mul(T.tanh(y), half), center);
  }
  // Double integrator: radial squash on xy keeps the output set invariant
  // under z-rotations, so de-canonicalization stays inside the bounds.
  const diff::VarId uxy = T.smul(T.radial_tanh(T.block(y, 0, 0, 2, 1)),
                                 pnet_->squash_xy_radius);
  const diff::VarId zz = T.block(y, 2, 0, 1, 1);
  const diff::VarId uz =
      T.add(T.smul(T.tanh(zz), pnet_->squash_half(2)), T.scalar_const(pnet_->squash_center(2)));
  const diff::VarId canon = T.vstack({uxy, uz});
  if (!equivariant_) return canon;
  const EgoFrame frame = ego_frame(T, states[graph_.agent_node[sub.ego]]);
  return T.matmul(frame.Rpos, canon);
}

diff::VarId GraphProgram::policy(int ego) {
  auto it = policy_cache_.find(ego);
  if (it != policy_cache_.end()) return it->second;
  if (!pnet_) throw diff::TapeError("GraphProgram: policy net not bound");
  const Subgraph& sub = subgraph(ego);
  const diff::VarId head = trunk_readout(sub, features(sub, base_), pvars_, pnet_->cfg);
  const diff::VarId out = squash_policy(head, sub, base_);
  policy_cache_[ego] = out;
  return out;
}

diff::VarId GraphProgram::cbf(int ego) {
  auto it = cbf_cache_.find(ego);
  if (it != cbf_cache_.end()) return it->second;
  if (!cnet_) throw diff::TapeError("GraphProgram: cbf net not bound");
  const Subgraph& sub = subgraph(ego);
  const diff::VarId out = trunk_readout(sub, features(sub, base_), cvars_, cnet_->cfg);
  cbf_cache_[ego] = out;
  return out;
}

diff::VarId GraphProgram::cbf_at(int ego, const std::vector<NodeVars>& states) {
  if (!cnet_) throw diff::TapeError("GraphProgram: cbf net not bound");
  const Subgraph& sub = subgraph(ego);
  return trunk_readout(sub, features(sub, states), cvars_, cnet_->cfg);
}

std::vector<GraphProgram::NodeVars> GraphProgram::perturbed_states(
    double kappa, const std::vector<diff::VarId>& controls, const ModelParams& params) {
  auto& T = tape_;
  if (static_cast<int>(controls.size()) != graph_.num_agents())
    throw std::invalid_argument("perturbed_states: one control per agent required");
  std::vector<NodeVars> out = base_;
  for (int i = 0; i < graph_.num_agents(); ++i) {
    const int id = graph_.agent_node[i];
    const NodeVars& x = base_[id];
    NodeVars& y = out[id];
    const diff::VarId u = controls[i];
    y.pos = T.add(x.pos, T.smul(x.vel, kappa));
    if (params.kind == ModelKind::DoubleIntegrator) {
      y.vel = T.add(x.vel, T.smul(u, kappa));
      continue;
    }
    const diff::VarId tau = T.block(u, 0, 0, 3, 1);
    const diff::VarId f3 = T.block(u, 3, 0, 1, 1);
    const diff::VarId dR = T.matmul(x.rot, T.hat3(x.omg));
    y.rot = T.add(x.rot, T.smul(dR, kappa));
    const diff::VarId e3 = T.constant(MatX(Vec3(0, 0, 1)));
    const diff::VarId dv =
        T.add(T.constant(MatX(params.gvec)), T.smul(T.matmul(T.matmul(x.rot, e3), f3), 1.0 / params.m));
    y.vel = T.add(x.vel, T.smul(dv, kappa));
    const diff::VarId Jc = T.constant(MatX(params.J));
    const diff::VarId Jinv = T.constant(MatX(params.J.inverse()));
    const diff::VarId gyro = T.cross3(x.omg, T.matmul(Jc, x.omg));
    const diff::VarId domega = T.matmul(Jinv, T.sub(tau, gyro));
    y.omg = T.add(x.omg, T.smul(domega, kappa));
  }
  return out;
}

VecX forward_policy(const NetParams& params, const GraphSnapshot& graph, int ego) {
  GraphProgram prog(graph, params.cfg.equivariant);
  prog.bind_policy(params);
  return prog.tape().value(prog.policy(ego));
}

std::vector<VecX> policy_controls(const NetParams& params, const GraphSnapshot& graph) {
  GraphProgram prog(graph, params.cfg.equivariant);
  prog.bind_policy(params);
  std::vector<VecX> out;
  out.reserve(graph.num_agents());
  for (int i = 0; i < graph.num_agents(); ++i) out.push_back(prog.tape().value(prog.policy(i)));
  return out;
}

double forward_cbf(const NetParams& params, const GraphSnapshot& graph, int ego) {
  GraphProgram prog(graph, params.cfg.equivariant);
  prog.bind_cbf(params);
  return prog.tape().scalar(prog.cbf(ego));
}

namespace {

CbfGradients collect_cbf_grads(GraphProgram& prog, const GraphSnapshot& graph, int ego) {
  auto& T = prog.tape();
  const diff::VarId h = prog.cbf(ego);
  T.backward(h);
  CbfGradients out;
  out.h = T.scalar(h);
  for (int id : prog.subgraph(ego).nodes) {
    const auto& leaves = prog.leaves(id);
    StateGrad g;
    g.dp = Vec3(T.grad(leaves.pos));
    if (graph.nodes[id].kind == NodeKind::Agent) {
      g.dR = Mat3(T.grad(leaves.rot));
      g.dv = Vec3(T.grad(leaves.vel));
      g.domega = Vec3(T.grad(leaves.omg));
    }
    out.by_node[id] = g;
  }
  return out;
}

}  // namespace

CbfGradients cbf_input_gradients(const NetParams& params, const GraphSnapshot& graph,
                                 int ego) {
  GraphProgram prog(graph, params.cfg.equivariant);
  prog.bind_cbf(params);
  return collect_cbf_grads(prog, graph, ego);
}

std::vector<CbfGradients> cbf_all_gradients(const NetParams& params,
                                            const GraphSnapshot& graph) {
  GraphProgram prog(graph, params.cfg.equivariant);
  prog.bind_cbf(params);
  std::vector<CbfGradients> out;
  out.reserve(graph.num_agents());
  for (int i = 0; i < graph.num_agents(); ++i)
    out.push_back(collect_cbf_grads(prog, graph, i));
  return out;
}

MatX GraphProgram::feature_matrix(int ego) {
  return tape_.value(features(subgraph(ego), base_));
}

MatX canonical_features(const GraphSnapshot& graph, const Subgraph& sub) {
  GraphProgram prog(graph, true);
  return prog.feature_matrix(sub.ego);
}

ScalarSceneFn haar_invariantize(ScalarSceneFn h_raw, int K, HaarSampling sampling,
                                uint64_t seed) {
  if (K < 1) throw std::invalid_argument("haar_invariantize: K must be >= 1");
  std::vector<double> thetas(K);
  if (sampling == HaarSampling::Stratified) {
    for (int k = 0; k < K; ++k) thetas[k] = -kPi + (k + 0.5) * 2.0 * kPi / K;
  } else {
    Rng rng(seed);
    for (int k = 0; k < K; ++k) thetas[k] = rng.uniform(-kPi, kPi);
  }
  return [h_raw = std::move(h_raw), thetas](const GraphSnapshot& graph, int ego) {
    double acc = 0.0;
    for (const double theta : thetas)
      acc += h_raw(transform_graph(graph, make_group(theta, Vec3::Zero())), ego);
    return acc / static_cast<double>(thetas.size());
  };
}

// --- checkpoint io ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'E', 'G', 'C', 'B', 'F', 'C', 'K', '1'};
constexpr uint32_t kEndianMarker = 0x01020304u;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace

void save_arrays(const std::string& path, const std::map<std::string, MatX>& arrays) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_arrays: cannot open " + path);
  os.write(kMagic, 8);
  write_u32(os, kEndianMarker);
  write_u32(os, static_cast<uint32_t>(arrays.size()));
  for (const auto& [name, m] : arrays) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, static_cast<uint64_t>(m.rows()));
    write_u64(os, static_cast<uint64_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  if (!os) throw std::runtime_error("save_arrays: write failed for " + path);
}

std::map<std::string, MatX> load_arrays(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_arrays: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("load_arrays: " + path + " is not a checkpoint (bad magic)");
  if (read_u32(is) != kEndianMarker)
    throw std::runtime_error("load_arrays: incompatible byte order in " + path);
  const uint32_t count = read_u32(is);
  std::map<std::string, MatX> arrays;
  for (uint32_t k = 0; k < count; ++k) {
    const uint32_t len = read_u32(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const uint64_t rows = read_u64(is), cols = read_u64(is);
    MatX m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!is) throw std::runtime_error("load_arrays: truncated checkpoint " + path);
    arrays[name] = std::move(m);
  }
  return arrays;
}

void pack_net(const std::string& prefix, const NetParams& params,
              std::map<std::string, MatX>& into) {
  MatX meta(1, 8);
  meta << params.cfg.d_model, params.cfg.d_ff, params.cfg.layers, params.cfg.head_hidden,
      params.cfg.equivariant ? 1.0 : 0.0, static_cast<double>(params.model),
      params.out_dim, params.squash_xy_radius;
  into[prefix + ".meta"] = meta;
  if (params.squash_center.size() > 0) {
    into[prefix + ".squash.center"] = MatX(params.squash_center);
    into[prefix + ".squash.half"] = MatX(params.squash_half);
  }
  for (const auto& [name, m] : params.t) into[prefix + ".t." + name] = m;
}

NetParams unpack_net(const std::string& prefix, const std::map<std::string, MatX>& from) {
  NetParams net;
  const auto meta_it = from.find(prefix + ".meta");
  if (meta_it == from.end())
    throw std::runtime_error("unpack_net: missing " + prefix + ".meta");
  const MatX& meta = meta_it->second;
  net.cfg.d_model = static_cast<int>(meta(0, 0));
  net.cfg.d_ff = static_cast<int>(meta(0, 1));
  net.cfg.layers = static_cast<int>(meta(0, 2));
  net.cfg.head_hidden = static_cast<int>(meta(0, 3));
  net.cfg.equivariant = meta(0, 4) != 0.0;
  net.model = static_cast<ModelKind>(static_cast<int>(meta(0, 5)));
  net.out_dim = static_cast<int>(meta(0, 6));
  net.squash_xy_radius = meta(0, 7);
  if (const auto it = from.find(prefix + ".squash.center"); it != from.end()) {
    net.squash_center = VecX(it->second);
    net.squash_half = VecX(from.at(prefix + ".squash.half"));
  }
  const std::string tp = prefix + ".t.";
  for (const auto& [name, m] : from)
    if (name.rfind(tp, 0) == 0) net.t[name.substr(tp.size())] = m;
  return net;
}

}  // namespace egcbf
