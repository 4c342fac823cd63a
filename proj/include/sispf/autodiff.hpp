#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "sispf/errors.hpp"
#include "sispf/linalg.hpp"

namespace sispf {

// Reverse-mode automatic differentiation over small dense matrices. Nodes are
// appended to a Tape in evaluation order (so parents always precede children),
// values are computed eagerly, and backward() runs one reverse sweep from a
// scalar root. Vectors are (n,1) matrices; scalars are (1,1).

enum class Op {
  kConstant,
  kParameter,
  kAdd,
  kSubtract,
  kElementwiseMultiply,
  kMatMul,
  kConcatRows,
  kTranspose,
  kTanh,
  kExp,
  kLog,
  kSquare,
  kAbs,
  kNegate,
  kSum,
  kScalarMultiply,
  kLogSumExp,
  kLowerTriangularMatVec,
  kLowerTriangularSolve,
  kSumLogDiagonal,
  kCholesky,
};

struct NodeId {
  int index = -1;
  bool valid() const { return index >= 0; }
};

struct Node {
  Op op;
  Matrix value;
  std::vector<int> parents;
  // kScalarMultiply: the coefficient. kCholesky: jitter_used / trace(input)
  // when the jitter was trace-relative, so backward can account for it.
  double scalar = 0.0;
};

class Tape {
 public:
  // Leaves. Constants never receive gradient; parameters do.
  NodeId constant(Matrix value);
  NodeId parameter(Matrix value);
  NodeId scalar_constant(double value);

  // Elementwise and structural ops.
  NodeId add(NodeId a, NodeId b);
  NodeId subtract(NodeId a, NodeId b);
  NodeId elementwise_multiply(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  NodeId matvec(NodeId a, NodeId x) { return matmul(a, x); }
  NodeId concat_rows(const std::vector<NodeId>& parts);
  NodeId transpose(NodeId a);
  NodeId tanh(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId square(NodeId a);
  NodeId abs(NodeId a);
  NodeId negate(NodeId a);
  NodeId sum(NodeId a);
  NodeId scalar_multiply(NodeId a, double s);
  NodeId logsumexp_over_entries(NodeId a);

  // Triangular ops used by the Gaussian machinery.
  NodeId lower_triangular_matvec(NodeId lower, NodeId v);
  NodeId lower_triangular_solve(NodeId lower, NodeId b);
  NodeId sum_log_diagonal(NodeId lower);

  // Lower Cholesky factor of a symmetric PSD node, with the linalg jitter
  // policy on the forward pass and the smoothed reverse rule on backward.
  NodeId cholesky(NodeId m, double base_jitter);

  // Same, but the jitter scales with the input: base = rel * trace(m) / n.
  // The trace dependence is part of the function being differentiated, so
  // backward adds the exact correction for A(m) = m + (jitter/tr) * tr(m) * I.
  NodeId cholesky_relative(NodeId m, double rel);

  const Matrix& value(NodeId id) const { return nodes_[id.index].value; }
  const Node& node(NodeId id) const { return nodes_[id.index]; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar root. Populates adjoints for every ancestor
  // of the root; anything unreachable keeps a zero adjoint. Sweeping twice
  // without reset_gradients() throws TapeAlreadySwept.
  void backward(NodeId root);
  void reset_gradients();
  const Matrix& gradient(NodeId id) const;

 private:
  NodeId push(Op op, Matrix value, std::vector<int> parents, double scalar = 0.0);
  void check_same_shape(NodeId a, NodeId b, const char* what) const;

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
  bool swept_ = false;
};

// log N(x; mean, L L^T) built from primitives, with gradient flowing through
// x, mean, and (when it is not a constant) the factor L.
NodeId mvn_log_density_node(Tape& tape, NodeId x, NodeId mean, NodeId chol_lower);

// Compares reverse-mode gradients of a scalar graph against central finite
// differences, entry by entry. `build` receives parameter nodes created from
// `params` in order and returns the scalar root. Entries where both gradients
// are below skip_below are ignored. Returns the max relative error seen.
double gradcheck(const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& build,
                 const std::vector<Matrix>& params, double step, double skip_below = 1e-8);

}  // namespace sispf
