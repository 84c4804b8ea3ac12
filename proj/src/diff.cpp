#include "egcbf/diff.hpp"

#include <cmath>

#include <Eigen/Geometry>

namespace egcbf::diff {

namespace {

std::string shape_of(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_of(a) + " and " +
                   shape_of(b));
}

double tanh_over_x(double x) {
  if (std::abs(x) < 1e-6) return 1.0 - x * x / 3.0;
  return std::tanh(x) / x;
}

}  // namespace

VarId Tape::push(Node node, const char* opname) {
  if (check_finite && !node.val.allFinite())
    throw TapeError(std::string(opname) + ": non-finite value produced");
  nodes_.push_back(std::move(node));
  return static_cast<VarId>(nodes_.size() - 1);
}

void Tape::check(VarId v, const char* ctx) const {
  if (v < 0 || v >= static_cast<VarId>(nodes_.size()))
    throw TapeError(std::string(ctx) + ": var " + std::to_string(v) + " not on this tape");
}

VarId Tape::leaf(const Tensor& value) { return push({Op::Leaf, value}, "leaf"); }

VarId Tape::constant(const Tensor& value) { return push({Op::Const, value}, "constant"); }

VarId Tape::scalar_const(double value) {
  Tensor t(1, 1);
  t(0, 0) = value;
  return constant(t);
}

VarId Tape::add(VarId a, VarId b) {
  check(a, "add");
  check(b, "add");
  const Tensor &A = nodes_[a].val, &B = nodes_[b].val;
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_fail("add", A, B);
  Node n{Op::Add, A + B, a, b};
  return push(std::move(n), "add");
}

VarId Tape::add_rowvec(VarId a, VarId bias) {
  check(a, "add_rowvec");
  check(bias, "add_rowvec");
  const Tensor &A = nodes_[a].val, &B = nodes_[bias].val;
  if (B.rows() != 1 || B.cols() != A.cols()) shape_fail("add_rowvec", A, B);
  Node n{Op::AddRow, A.rowwise() + B.row(0), a, bias};
  return push(std::move(n), "add_rowvec");
}

VarId Tape::sub(VarId a, VarId b) {
  check(a, "sub");
  check(b, "sub");
  const Tensor &A = nodes_[a].val, &B = nodes_[b].val;
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_fail("sub", A, B);
  Node n{Op::Sub, A - B, a, b};
  return push(std::move(n), "sub");
}

VarId Tape::mul(VarId a, VarId b) {
  check(a, "mul");
  check(b, "mul");
  const Tensor &A = nodes_[a].val, &B = nodes_[b].val;
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_fail("mul", A, B);
  Node n{Op::Mul, A.cwiseProduct(B), a, b};
  return push(std::move(n), "mul");
}

VarId Tape::smul(VarId a, double s) {
  check(a, "smul");
  Node n{Op::SMul, s * nodes_[a].val, a};
  n.s = s;
  return push(std::move(n), "smul");
}

VarId Tape::matmul(VarId a, VarId b) {
  check(a, "matmul");
  check(b, "matmul");
  const Tensor &A = nodes_[a].val, &B = nodes_[b].val;
  if (A.cols() != B.rows()) shape_fail("matmul", A, B);
  Node n{Op::MatMul, A * B, a, b};
  return push(std::move(n), "matmul");
}

VarId Tape::transpose(VarId a) {
  check(a, "transpose");
  Node n{Op::Transpose, nodes_[a].val.transpose(), a};
  return push(std::move(n), "transpose");
}

VarId Tape::relu(VarId a) {
  check(a, "relu");
  Node n{Op::Relu, nodes_[a].val.cwiseMax(0.0), a};
  return push(std::move(n), "relu");
}

VarId Tape::tanh(VarId a) {
  check(a, "tanh");
  Node n{Op::Tanh, nodes_[a].val.array().tanh().matrix(), a};
  return push(std::move(n), "tanh");
}

VarId Tape::softmax_rows(VarId a) { return softmax_rows(a, Tensor()); }

VarId Tape::softmax_rows(VarId a, const Tensor& mask) {
  check(a, "softmax_rows");
  const Tensor& A = nodes_[a].val;
  if (mask.size() != 0 && (mask.rows() != A.rows() || mask.cols() != A.cols()))
    shape_fail("softmax_rows(mask)", A, mask);
  Tensor out(A.rows(), A.cols());
  for (int i = 0; i < A.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < A.cols(); ++j)
      if (mask.size() == 0 || mask(i, j) != 0.0) mx = std::max(mx, A(i, j));
    if (!std::isfinite(mx)) {  // empty support
      out.row(i).setZero();
      continue;
    }
    double denom = 0.0;
    for (int j = 0; j < A.cols(); ++j) {
      const bool on = mask.size() == 0 || mask(i, j) != 0.0;
      out(i, j) = on ? std::exp(A(i, j) - mx) : 0.0;
      denom += out(i, j);
    }
    out.row(i) /= denom;
  }
  Node n{Op::Softmax, std::move(out), a};
  n.aux = mask;
  return push(std::move(n), "softmax_rows");
}

VarId Tape::sum(VarId a) {
  check(a, "sum");
  Tensor t(1, 1);
  t(0, 0) = nodes_[a].val.sum();
  Node n{Op::Sum, std::move(t), a};
  return push(std::move(n), "sum");
}

VarId Tape::mean(VarId a) {
  check(a, "mean");
  Tensor t(1, 1);
  t(0, 0) = nodes_[a].val.mean();
  Node n{Op::Mean, std::move(t), a};
  return push(std::move(n), "mean");
}

VarId Tape::vstack(const std::vector<VarId>& parts) {
  if (parts.empty()) throw ShapeError("vstack: no parts");
  long rows = 0;
  const long cols = nodes_[parts[0]].val.cols();
  for (VarId p : parts) {
    check(p, "vstack");
    if (nodes_[p].val.cols() != cols) shape_fail("vstack", nodes_[parts[0]].val, nodes_[p].val);
    rows += nodes_[p].val.rows();
  }
  Tensor out(rows, cols);
  long r = 0;
  for (VarId p : parts) {
    out.middleRows(r, nodes_[p].val.rows()) = nodes_[p].val;
    r += nodes_[p].val.rows();
  }
  Node n{Op::VStack, std::move(out)};
  n.many = parts;
  return push(std::move(n), "vstack");
}

VarId Tape::hstack(const std::vector<VarId>& parts) {
  if (parts.empty()) throw ShapeError("hstack: no parts");
  long cols = 0;
  const long rows = nodes_[parts[0]].val.rows();
  for (VarId p : parts) {
    check(p, "hstack");
    if (nodes_[p].val.rows() != rows) shape_fail("hstack", nodes_[parts[0]].val, nodes_[p].val);
    cols += nodes_[p].val.cols();
  }
  Tensor out(rows, cols);
  long c = 0;
  for (VarId p : parts) {
    out.middleCols(c, nodes_[p].val.cols()) = nodes_[p].val;
    c += nodes_[p].val.cols();
  }
  Node n{Op::HStack, std::move(out)};
  n.many = parts;
  return push(std::move(n), "hstack");
}

VarId Tape::block(VarId a, int r0, int c0, int rows, int cols) {
  check(a, "block");
  const Tensor& A = nodes_[a].val;
  if (r0 < 0 || c0 < 0 || r0 + rows > A.rows() || c0 + cols > A.cols())
    throw ShapeError("block: slice [" + std::to_string(r0) + "," + std::to_string(c0) + "," +
                     std::to_string(rows) + "," + std::to_string(cols) + "] out of " +
                     shape_of(A));
  Node n{Op::Block, A.block(r0, c0, rows, cols), a};
  n.r0 = r0;
  n.c0 = c0;
  n.br = rows;
  n.bc = cols;
  return push(std::move(n), "block");
}

VarId Tape::reshape(VarId a, int rows, int cols) {
  check(a, "reshape");
  const Tensor& A = nodes_[a].val;
  if (rows * cols != A.size())
    throw ShapeError("reshape: cannot view " + shape_of(A) + " as " + std::to_string(rows) +
                     "x" + std::to_string(cols));
  Tensor out = Eigen::Map<const Tensor>(A.data(), rows, cols);
  Node n{Op::Reshape, std::move(out), a};
  return push(std::move(n), "reshape");
}

VarId Tape::l2norm(VarId a) {
  check(a, "l2norm");
  Tensor t(1, 1);
  t(0, 0) = nodes_[a].val.norm();
  Node n{Op::L2Norm, std::move(t), a};
  return push(std::move(n), "l2norm");
}

VarId Tape::div(VarId a, VarId b) {
  check(a, "div");
  check(b, "div");
  const Tensor &A = nodes_[a].val, &B = nodes_[b].val;
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_fail("div", A, B);
  Node n{Op::Div, A.cwiseQuotient(B), a, b};
  return push(std::move(n), "div");
}

VarId Tape::cross3(VarId a, VarId b) {
  check(a, "cross3");
  check(b, "cross3");
  const Tensor &A = nodes_[a].val, &B = nodes_[b].val;
  if (A.rows() != 3 || A.cols() != 1 || B.rows() != 3 || B.cols() != 1)
    shape_fail("cross3", A, B);
  const Vec3 c = Vec3(A.col(0)).cross(Vec3(B.col(0)));
  Node n{Op::Cross3, c, a, b};
  return push(std::move(n), "cross3");
}

VarId Tape::hat3(VarId a) {
  check(a, "hat3");
  const Tensor& A = nodes_[a].val;
  if (A.rows() != 3 || A.cols() != 1)
    throw ShapeError("hat3: expected 3x1, got " + shape_of(A));
  Tensor out(3, 3);
  out << 0.0, -A(2, 0), A(1, 0), A(2, 0), 0.0, -A(0, 0), -A(1, 0), A(0, 0), 0.0;
  Node n{Op::Hat3, std::move(out), a};
  return push(std::move(n), "hat3");
}

VarId Tape::rotz_cs(VarId c, VarId s) {
  check(c, "rotz_cs");
  check(s, "rotz_cs");
  const Tensor &C = nodes_[c].val, &S = nodes_[s].val;
  if (C.size() != 1 || S.size() != 1) shape_fail("rotz_cs", C, S);
  Tensor out(3, 3);
  out << C(0, 0), -S(0, 0), 0.0, S(0, 0), C(0, 0), 0.0, 0.0, 0.0, 1.0;
  Node n{Op::RotZ, std::move(out), c, s};
  return push(std::move(n), "rotz_cs");
}

VarId Tape::radial_tanh(VarId a) {
  check(a, "radial_tanh");
  const Tensor& A = nodes_[a].val;
  if (A.cols() != 1) throw ShapeError("radial_tanh: expected a column vector, got " + shape_of(A));
  const double n = A.norm();
  Node node{Op::RadialTanh, tanh_over_x(n) * A, a};
  return push(std::move(node), "radial_tanh");
}

const Tensor& Tape::value(VarId v) const {
  check(v, "value");
  return nodes_[v].val;
}

double Tape::scalar(VarId v) const {
  check(v, "scalar");
  if (nodes_[v].val.size() != 1)
    throw ShapeError("scalar: var is " + shape_of(nodes_[v].val) + ", not 1x1");
  return nodes_[v].val(0, 0);
}

Tensor& Tape::gref(VarId v) {
  if (!touched_[v]) {
    grads_[v].setZero(nodes_[v].val.rows(), nodes_[v].val.cols());
    touched_[v] = 1;
  }
  return grads_[v];
}

void Tape::backward(VarId out) {
  check(out, "backward");
  if (nodes_[out].val.size() != 1)
    throw ShapeError("backward: output is " + shape_of(nodes_[out].val) + ", not scalar");
  grads_.assign(nodes_.size(), Tensor());
  touched_.assign(nodes_.size(), 0);
  gref(out)(0, 0) = 1.0;

  for (VarId v = out; v >= 0; --v) {
    if (!touched_[v]) continue;
    const Node& n = nodes_[v];
    const Tensor& g = grads_[v];
    switch (n.op) {
      case Op::Leaf:
      case Op::Const:
        break;
      case Op::Add:
        gref(n.a) += g;
        gref(n.b) += g;
        break;
      case Op::AddRow:
        gref(n.a) += g;
        gref(n.b) += g.colwise().sum();
        break;
      case Op::Sub:
        gref(n.a) += g;
        gref(n.b) -= g;
        break;
      case Op::Mul:
        gref(n.a) += g.cwiseProduct(nodes_[n.b].val);
        gref(n.b) += g.cwiseProduct(nodes_[n.a].val);
        break;
      case Op::SMul:
        gref(n.a) += n.s * g;
        break;
      case Op::MatMul:
        gref(n.a) += g * nodes_[n.b].val.transpose();
        gref(n.b) += nodes_[n.a].val.transpose() * g;
        break;
      case Op::Transpose:
        gref(n.a) += g.transpose();
        break;
      case Op::Relu:
        gref(n.a) += g.cwiseProduct(
            (nodes_[n.a].val.array() > 0.0).cast<double>().matrix());
        break;
      case Op::Tanh:
        gref(n.a) += g.cwiseProduct((1.0 - n.val.array().square()).matrix());
        break;
      case Op::Softmax: {
        Tensor& ga = gref(n.a);
        for (int i = 0; i < n.val.rows(); ++i) {
          const double dot = g.row(i).dot(n.val.row(i));
          ga.row(i) += n.val.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
        }
        break;
      }
      case Op::Sum:
        gref(n.a).array() += g(0, 0);
        break;
      case Op::Mean:
        gref(n.a).array() += g(0, 0) / static_cast<double>(nodes_[n.a].val.size());
        break;
      case Op::VStack: {
        long r = 0;
        for (VarId p : n.many) {
          gref(p) += g.middleRows(r, nodes_[p].val.rows());
          r += nodes_[p].val.rows();
        }
        break;
      }
      case Op::HStack: {
        long c = 0;
        for (VarId p : n.many) {
          gref(p) += g.middleCols(c, nodes_[p].val.cols());
          c += nodes_[p].val.cols();
        }
        break;
      }
      case Op::Block:
        gref(n.a).block(n.r0, n.c0, n.br, n.bc) += g;
        break;
      case Op::Reshape: {
        const Tensor& A = nodes_[n.a].val;
        gref(n.a) += Eigen::Map<const Tensor>(g.data(), A.rows(), A.cols());
        break;
      }
      case Op::L2Norm: {
        const double nv = n.val(0, 0);
        if (nv > 1e-12) gref(n.a) += (g(0, 0) / nv) * nodes_[n.a].val;
        break;
      }
      case Op::Div:
        gref(n.a) += g.cwiseQuotient(nodes_[n.b].val);
        gref(n.b) -=
            g.cwiseProduct(n.val).cwiseQuotient(nodes_[n.b].val);
        break;
      case Op::Cross3: {
        const Vec3 a = Vec3(nodes_[n.a].val.col(0));
        const Vec3 b = Vec3(nodes_[n.b].val.col(0));
        const Vec3 gv = Vec3(g.col(0));
        gref(n.a) += Tensor(b.cross(gv));
        gref(n.b) += Tensor(gv.cross(a));
        break;
      }
      case Op::Hat3: {
        Tensor ga(3, 1);
        ga << g(2, 1) - g(1, 2), g(0, 2) - g(2, 0), g(1, 0) - g(0, 1);
        gref(n.a) += ga;
        break;
      }
      case Op::RotZ: {
        gref(n.a)(0, 0) += g(0, 0) + g(1, 1);
        gref(n.b)(0, 0) += g(1, 0) - g(0, 1);
        break;
      }
      case Op::RadialTanh: {
        const Tensor& A = nodes_[n.a].val;
        const double r = A.norm();
        const double f = tanh_over_x(r);
        // d/dr [tanh(r)/r] / r, with the r -> 0 limit -2/3.
        double fp_over_r;
        if (r < 1e-6) {
          fp_over_r = -2.0 / 3.0 + 8.0 * r * r / 15.0;
        } else {
          const double th = std::tanh(r);
          fp_over_r = ((1.0 - th * th) * r - th) / (r * r * r);
        }
        gref(n.a) += f * g + fp_over_r * (A.col(0).dot(g.col(0))) * A;
        break;
      }
    }
  }
}

const Tensor& Tape::grad(VarId v) const {
  check(v, "grad");
  if (grads_.empty()) throw TapeError("grad: backward() has not been run");
  if (v >= static_cast<VarId>(touched_.size()) || !touched_[v]) {
    static thread_local Tensor zero;
    zero.setZero(nodes_[v].val.rows(), nodes_[v].val.cols());
    return zero;
  }
  return grads_[v];
}

}  // namespace egcbf::diff
