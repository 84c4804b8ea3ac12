#pragma once

// Minimal reverse-mode autodiff over dense 64-bit tensors. Define-by-run tape
// with gradients w.r.t. both parameters and inputs; the CBF derivative term
// needs the latter. Single-threaded per tape; tapes over shared read-only
// parameters may run concurrently.

#include <stdexcept>
#include <string>
#include <vector>

#include "egcbf/types.hpp"

namespace egcbf::diff {

using Tensor = Eigen::MatrixXd;
using VarId = int;

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

struct TapeError : std::runtime_error {
  explicit TapeError(const std::string& what) : std::runtime_error(what) {}
};

class Tape {
 public:
  /// Differentiable input (parameter or state leaf).
  VarId leaf(const Tensor& value);
  /// Non-differentiable value; grad() on it is a zero tensor.
  VarId constant(const Tensor& value);
  VarId scalar_const(double value);

  // Elementwise / structural ops.
  VarId add(VarId a, VarId b);
  VarId add_rowvec(VarId a, VarId bias);  // bias is 1 x cols, added to each row
  VarId sub(VarId a, VarId b);
  VarId mul(VarId a, VarId b);  // elementwise
  VarId smul(VarId a, double s);
  VarId matmul(VarId a, VarId b);
  VarId transpose(VarId a);
  VarId relu(VarId a);
  VarId tanh(VarId a);
  /// Row-wise softmax. With a {0,1} mask, the softmax runs over the masked
  /// support of each row; all-zero rows give all-zero output.
  VarId softmax_rows(VarId a);
  VarId softmax_rows(VarId a, const Tensor& mask);
  VarId sum(VarId a);
  VarId mean(VarId a);
  VarId vstack(const std::vector<VarId>& parts);
  VarId hstack(const std::vector<VarId>& parts);
  VarId block(VarId a, int r0, int c0, int rows, int cols);
  VarId reshape(VarId a, int rows, int cols);  // column-major reinterpret
  /// Frobenius norm; the gradient is safely zero at the origin.
  VarId l2norm(VarId a);
  VarId div(VarId a, VarId b);  // elementwise
  VarId cross3(VarId a, VarId b);
  VarId hat3(VarId a);  // 3-vector -> skew matrix
  /// 3x3 z-rotation [[c,-s,0],[s,c,0],[0,0,1]] from two scalar vars.
  VarId rotz_cs(VarId c, VarId s);
  /// Radially squashed vector v * tanh(|v|)/|v| (smooth, norm < 1).
  VarId radial_tanh(VarId a);

  const Tensor& value(VarId v) const;
  double scalar(VarId v) const;

  /// Reverse pass from a 1x1 output. Gradients are recomputed from scratch on
  /// every call, so repeated calls are deterministic and identical.
  void backward(VarId out);
  /// Gradient of the last backward() w.r.t. any var on the tape.
  const Tensor& grad(VarId v) const;

  int size() const { return static_cast<int>(nodes_.size()); }
  /// Eager NaN poisoning: verify every op result is finite.
  bool check_finite = false;

 private:
  enum class Op {
    Leaf, Const, Add, AddRow, Sub, Mul, SMul, MatMul, Transpose, Relu, Tanh,
    Softmax, Sum, Mean, VStack, HStack, Block, Reshape, L2Norm, Div, Cross3,
    Hat3, RotZ, RadialTanh,
  };

  struct Node {
    Op op;
    Tensor val;
    VarId a = -1, b = -1;
    std::vector<VarId> many;
    double s = 0.0;
    int r0 = 0, c0 = 0, br = 0, bc = 0;
    Tensor aux;  // softmax mask
  };

  VarId push(Node node, const char* opname);
  void check(VarId v, const char* ctx) const;
  Tensor& gref(VarId v);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> touched_;
};

/// Central finite-difference gradient of a scalar-valued function of one
/// tensor; the oracle for every registered op and for end-to-end networks.
template <typename F>
Tensor finite_difference(F&& f, const Tensor& x0, double h = 1e-5) {
  Tensor g(x0.rows(), x0.cols());
  Tensor x = x0;
  for (int j = 0; j < x.cols(); ++j) {
    for (int i = 0; i < x.rows(); ++i) {
      const double keep = x(i, j);
      x(i, j) = keep + h;
      const double fp = f(x);
      x(i, j) = keep - h;
      const double fm = f(x);
      x(i, j) = keep;
      g(i, j) = (fp - fm) / (2.0 * h);
    }
  }
  return g;
}

}  // namespace egcbf::diff
