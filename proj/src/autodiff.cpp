#include "sispf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace sispf {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_scalar(const Matrix& m) { return m.rows() == 1 && m.cols() == 1; }

}  // namespace

NodeId Tape::push(Op op, Matrix value, std::vector<int> parents, double scalar) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.scalar = scalar;
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<int>(nodes_.size()) - 1};
}

void Tape::check_same_shape(NodeId a, NodeId b, const char* what) const {
  const Matrix& va = nodes_[a.index].value;
  const Matrix& vb = nodes_[b.index].value;
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) {
    throw ShapeMismatch(std::string(what) + ": operand shapes differ");
  }
}

NodeId Tape::constant(Matrix value) { return push(Op::kConstant, std::move(value), {}); }

NodeId Tape::parameter(Matrix value) { return push(Op::kParameter, std::move(value), {}); }

NodeId Tape::scalar_constant(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

NodeId Tape::add(NodeId a, NodeId b) {
  check_same_shape(a, b, "add");
  return push(Op::kAdd, sispf::add(value(a), value(b)), {a.index, b.index});
}

NodeId Tape::subtract(NodeId a, NodeId b) {
  check_same_shape(a, b, "subtract");
  return push(Op::kSubtract, sispf::subtract(value(a), value(b)), {a.index, b.index});
}

NodeId Tape::elementwise_multiply(NodeId a, NodeId b) {
  check_same_shape(a, b, "elementwise_multiply");
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  Matrix out(va.rows(), va.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = va.data()[i] * vb.data()[i];
  return push(Op::kElementwiseMultiply, std::move(out), {a.index, b.index});
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  if (value(a).cols() != value(b).rows()) {
    throw ShapeMismatch("matmul: inner dimensions differ");
  }
  return push(Op::kMatMul, multiply(value(a), value(b)), {a.index, b.index});
}

NodeId Tape::concat_rows(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no operands");
  const std::size_t cols = value(parts.front()).cols();
  std::size_t rows = 0;
  for (NodeId p : parts) {
    if (value(p).cols() != cols) throw ShapeMismatch("concat_rows: column counts differ");
    rows += value(p).rows();
  }
  Matrix out(rows, cols);
  std::vector<int> parents;
  parents.reserve(parts.size());
  std::size_t at = 0;
  for (NodeId p : parts) {
    const Matrix& v = value(p);
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < cols; ++j) out(at + i, j) = v(i, j);
    at += v.rows();
    parents.push_back(p.index);
  }
  return push(Op::kConcatRows, std::move(out), std::move(parents));
}

NodeId Tape::transpose(NodeId a) {
  return push(Op::kTranspose, sispf::transpose(value(a)), {a.index});
}

NodeId Tape::tanh(NodeId a) {
  const Matrix& v = value(a);
  Matrix out(v.rows(), v.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::tanh(v.data()[i]);
  return push(Op::kTanh, std::move(out), {a.index});
}

NodeId Tape::exp(NodeId a) {
  const Matrix& v = value(a);
  Matrix out(v.rows(), v.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::exp(v.data()[i]);
  return push(Op::kExp, std::move(out), {a.index});
}

NodeId Tape::log(NodeId a) {
  const Matrix& v = value(a);
  Matrix out(v.rows(), v.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::log(v.data()[i]);
  return push(Op::kLog, std::move(out), {a.index});
}

NodeId Tape::square(NodeId a) {
  const Matrix& v = value(a);
  Matrix out(v.rows(), v.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = v.data()[i] * v.data()[i];
  return push(Op::kSquare, std::move(out), {a.index});
}

NodeId Tape::abs(NodeId a) {
  const Matrix& v = value(a);
  Matrix out(v.rows(), v.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::abs(v.data()[i]);
  return push(Op::kAbs, std::move(out), {a.index});
}

NodeId Tape::negate(NodeId a) {
  return push(Op::kNegate, scale(value(a), -1.0), {a.index});
}

NodeId Tape::sum(NodeId a) {
  const Matrix& v = value(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += v.data()[i];
  Matrix out(1, 1);
  out(0, 0) = acc;
  return push(Op::kSum, std::move(out), {a.index});
}

NodeId Tape::scalar_multiply(NodeId a, double s) {
  return push(Op::kScalarMultiply, scale(value(a), s), {a.index}, s);
}

NodeId Tape::logsumexp_over_entries(NodeId a) {
  const Matrix& v = value(a);
  if (v.size() == 0) throw ShapeMismatch("logsumexp: empty operand");
  double m = v.data()[0];
  for (std::size_t i = 1; i < v.size(); ++i) m = std::max(m, v.data()[i]);
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += std::exp(v.data()[i] - m);
  Matrix out(1, 1);
  out(0, 0) = std::log(acc) + m;
  return push(Op::kLogSumExp, std::move(out), {a.index});
}

NodeId Tape::lower_triangular_matvec(NodeId lower, NodeId v) {
  const Matrix& l = value(lower);
  const Matrix& x = value(v);
  if (l.rows() != l.cols() || x.cols() != 1 || x.rows() != l.rows()) {
    throw ShapeMismatch("lower_triangular_matvec: shape mismatch");
  }
  const std::size_t n = l.rows();
  Matrix out(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    const double* row = l.row(i);
    for (std::size_t j = 0; j <= i; ++j) acc += row[j] * x(j, 0);
    out(i, 0) = acc;
  }
  return push(Op::kLowerTriangularMatVec, std::move(out), {lower.index, v.index});
}

NodeId Tape::lower_triangular_solve(NodeId lower, NodeId b) {
  const Matrix& l = value(lower);
  const Matrix& rhs = value(b);
  if (l.rows() != l.cols() || rhs.cols() != 1 || rhs.rows() != l.rows()) {
    throw ShapeMismatch("lower_triangular_solve: shape mismatch");
  }
  const Vector u = forward_substitute(l, rhs.as_vector());
  return push(Op::kLowerTriangularSolve, Matrix::column(u), {lower.index, b.index});
}

NodeId Tape::sum_log_diagonal(NodeId lower) {
  const Matrix& l = value(lower);
  if (l.rows() != l.cols()) throw ShapeMismatch("sum_log_diagonal: matrix not square");
  double acc = 0.0;
  for (std::size_t i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
  Matrix out(1, 1);
  out(0, 0) = acc;
  return push(Op::kSumLogDiagonal, std::move(out), {lower.index});
}

NodeId Tape::cholesky(NodeId m, double base_jitter) {
  CholeskyFactor factor = sispf::cholesky(value(m), base_jitter);
  return push(Op::kCholesky, std::move(factor.lower), {m.index});
}

NodeId Tape::cholesky_relative(NodeId m, double rel) {
  const Matrix& a = value(m);
  // Same expression order as the non-tape sampling path so both produce
  // bit-identical factors for the same covariance.
  const double tr = sispf::trace(a);
  const double base_jitter = rel * tr / static_cast<double>(a.rows());
  CholeskyFactor factor = sispf::cholesky(a, base_jitter);
  const double coeff = tr > 0.0 ? factor.jitter_used / tr : 0.0;
  return push(Op::kCholesky, std::move(factor.lower), {m.index}, coeff);
}

namespace {

// Solve L^T X = B columnwise (X = L^{-T} B).
Matrix solve_upper_from_lower(const Matrix& lower, const Matrix& b) {
  const std::size_t n = lower.rows();
  Matrix x(n, b.cols());
  Vector col(n);
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) col[i] = b(i, c);
    const Vector sol = back_substitute_transposed(lower, col);
    for (std::size_t i = 0; i < n; ++i) x(i, c) = sol[i];
  }
  return x;
}

void accumulate(Matrix& into, const Matrix& delta) {
  for (std::size_t i = 0; i < into.size(); ++i) into.data()[i] += delta.data()[i];
}

}  // namespace

void Tape::backward(NodeId root) {
  if (swept_) throw TapeAlreadySwept("backward: tape already swept; call reset_gradients first");
  const Matrix& root_value = value(root);
  if (!is_scalar(root_value)) throw RootNotScalar("backward: root is not scalar-shaped");

  grads_.clear();
  grads_.reserve(nodes_.size());
  for (const Node& n : nodes_) grads_.emplace_back(n.value.rows(), n.value.cols());

  std::vector<char> reachable(nodes_.size(), 0);
  reachable[root.index] = 1;
  for (int i = root.index; i >= 0; --i) {
    if (!reachable[i]) continue;
    for (int p : nodes_[i].parents) reachable[p] = 1;
  }

  grads_[root.index](0, 0) = 1.0;

  for (int i = root.index; i >= 0; --i) {
    if (!reachable[i]) continue;
    const Node& n = nodes_[i];
    const Matrix& g = grads_[i];
    switch (n.op) {
      case Op::kConstant:
      case Op::kParameter:
        break;
      case Op::kAdd: {
        accumulate(grads_[n.parents[0]], g);
        accumulate(grads_[n.parents[1]], g);
        break;
      }
      case Op::kSubtract: {
        accumulate(grads_[n.parents[0]], g);
        Matrix& gb = grads_[n.parents[1]];
        for (std::size_t k = 0; k < gb.size(); ++k) gb.data()[k] -= g.data()[k];
        break;
      }
      case Op::kElementwiseMultiply: {
        const Matrix& va = nodes_[n.parents[0]].value;
        const Matrix& vb = nodes_[n.parents[1]].value;
        Matrix& ga = grads_[n.parents[0]];
        Matrix& gb = grads_[n.parents[1]];
        for (std::size_t k = 0; k < g.size(); ++k) {
          ga.data()[k] += g.data()[k] * vb.data()[k];
          gb.data()[k] += g.data()[k] * va.data()[k];
        }
        break;
      }
      case Op::kMatMul: {
        const Matrix& a = nodes_[n.parents[0]].value;
        const Matrix& b = nodes_[n.parents[1]].value;
        Matrix& ga = grads_[n.parents[0]];
        Matrix& gb = grads_[n.parents[1]];
        if (b.cols() == 1) {
          // A·x case (the MLP affine path): rank-one update for A_adj and an
          // axpy per row for x_adj, both without forming transposes.
          for (std::size_t r = 0; r < a.rows(); ++r) {
            const double gr = g(r, 0);
            const double* a_row = a.row(r);
            double* ga_row = ga.row(r);
            for (std::size_t c = 0; c < a.cols(); ++c) {
              ga_row[c] += gr * b(c, 0);
              gb(c, 0) += a_row[c] * gr;
            }
          }
        } else {
          accumulate(ga, multiply(g, sispf::transpose(b)));
          accumulate(gb, multiply(sispf::transpose(a), g));
        }
        break;
      }
      case Op::kConcatRows: {
        std::size_t at = 0;
        for (int p : n.parents) {
          Matrix& gp = grads_[p];
          for (std::size_t r = 0; r < gp.rows(); ++r)
            for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += g(at + r, c);
          at += gp.rows();
        }
        break;
      }
      case Op::kTranspose: {
        accumulate(grads_[n.parents[0]], sispf::transpose(g));
        break;
      }
      case Op::kTanh: {
        Matrix& gp = grads_[n.parents[0]];
        for (std::size_t k = 0; k < g.size(); ++k) {
          const double y = n.value.data()[k];
          gp.data()[k] += g.data()[k] * (1.0 - y * y);
        }
        break;
      }
      case Op::kExp: {
        Matrix& gp = grads_[n.parents[0]];
        for (std::size_t k = 0; k < g.size(); ++k) gp.data()[k] += g.data()[k] * n.value.data()[k];
        break;
      }
      case Op::kLog: {
        const Matrix& x = nodes_[n.parents[0]].value;
        Matrix& gp = grads_[n.parents[0]];
        for (std::size_t k = 0; k < g.size(); ++k) gp.data()[k] += g.data()[k] / x.data()[k];
        break;
      }
      case Op::kSquare: {
        const Matrix& x = nodes_[n.parents[0]].value;
        Matrix& gp = grads_[n.parents[0]];
        for (std::size_t k = 0; k < g.size(); ++k)
          gp.data()[k] += g.data()[k] * 2.0 * x.data()[k];
        break;
      }
      case Op::kAbs: {
        const Matrix& x = nodes_[n.parents[0]].value;
        Matrix& gp = grads_[n.parents[0]];
        for (std::size_t k = 0; k < g.size(); ++k) {
          const double s = x.data()[k] > 0.0 ? 1.0 : (x.data()[k] < 0.0 ? -1.0 : 0.0);
          gp.data()[k] += g.data()[k] * s;
        }
        break;
      }
      case Op::kNegate: {
        Matrix& gp = grads_[n.parents[0]];
        for (std::size_t k = 0; k < g.size(); ++k) gp.data()[k] -= g.data()[k];
        break;
      }
      case Op::kSum: {
        const double gs = g(0, 0);
        Matrix& gp = grads_[n.parents[0]];
        for (std::size_t k = 0; k < gp.size(); ++k) gp.data()[k] += gs;
        break;
      }
      case Op::kScalarMultiply: {
        Matrix& gp = grads_[n.parents[0]];
        for (std::size_t k = 0; k < g.size(); ++k) gp.data()[k] += g.data()[k] * n.scalar;
        break;
      }
      case Op::kLogSumExp: {
        // Softmax-weighted broadcast of the scalar adjoint.
        const double gs = g(0, 0);
        const Matrix& x = nodes_[n.parents[0]].value;
        const double lse = n.value(0, 0);
        Matrix& gp = grads_[n.parents[0]];
        for (std::size_t k = 0; k < x.size(); ++k)
          gp.data()[k] += gs * std::exp(x.data()[k] - lse);
        break;
      }
      case Op::kLowerTriangularMatVec: {
        const Matrix& l = nodes_[n.parents[0]].value;
        const Matrix& x = nodes_[n.parents[1]].value;
        Matrix& gl = grads_[n.parents[0]];
        Matrix& gx = grads_[n.parents[1]];
        const std::size_t dim = l.rows();
        for (std::size_t r = 0; r < dim; ++r) {
          const double gr = g(r, 0);
          for (std::size_t c = 0; c <= r; ++c) {
            gl(r, c) += gr * x(c, 0);
            gx(c, 0) += gr * l(r, c);
          }
        }
        break;
      }
      case Op::kLowerTriangularSolve: {
        // u = L^{-1} b:  b_adj += L^{-T} u_adj,  L_adj -= (L^{-T} u_adj) u^T.
        const Matrix& l = nodes_[n.parents[0]].value;
        const Matrix& u = n.value;
        const Vector w = back_substitute_transposed(l, g.as_vector());
        Matrix& gl = grads_[n.parents[0]];
        Matrix& gb = grads_[n.parents[1]];
        const std::size_t dim = l.rows();
        for (std::size_t r = 0; r < dim; ++r) {
          gb(r, 0) += w[r];
          for (std::size_t c = 0; c <= r; ++c) gl(r, c) -= w[r] * u(c, 0);
        }
        break;
      }
      case Op::kSumLogDiagonal: {
        const double gs = g(0, 0);
        const Matrix& l = nodes_[n.parents[0]].value;
        Matrix& gl = grads_[n.parents[0]];
        for (std::size_t r = 0; r < l.rows(); ++r) gl(r, r) += gs / l(r, r);
        break;
      }
      case Op::kCholesky: {
        // P = Phi(L^T L_adj) with Phi keeping the lower triangle and halving
        // the diagonal; input adjoint is sym(L^{-T} P L^{-1}) / 2.
        const Matrix& l = n.value;
        const std::size_t dim = l.rows();
        Matrix p = multiply(sispf::transpose(l), g);
        for (std::size_t r = 0; r < dim; ++r) {
          p(r, r) *= 0.5;
          for (std::size_t c = r + 1; c < dim; ++c) p(r, c) = 0.0;
        }
        const Matrix lt_p = solve_upper_from_lower(l, p);                        // L^{-T} P
        const Matrix full = sispf::transpose(solve_upper_from_lower(l, sispf::transpose(lt_p)));
        Matrix sigma_adj(dim, dim);
        for (std::size_t r = 0; r < dim; ++r)
          for (std::size_t c = 0; c < dim; ++c)
            sigma_adj(r, c) = 0.5 * (full(r, c) + full(c, r));
        if (n.scalar != 0.0) {
          // The factored matrix was A = Sigma + (c * tr Sigma) I, so the
          // input adjoint picks up c * tr(A_adj) on the diagonal.
          const double tr_adj = sispf::trace(sigma_adj);
          for (std::size_t r = 0; r < dim; ++r) sigma_adj(r, r) += n.scalar * tr_adj;
        }
        accumulate(grads_[n.parents[0]], sigma_adj);
        break;
      }
    }
  }
  swept_ = true;
}

void Tape::reset_gradients() {
  grads_.clear();
  swept_ = false;
}

const Matrix& Tape::gradient(NodeId id) const {
  if (grads_.size() != nodes_.size()) {
    throw std::logic_error("gradient: no backward sweep has run");
  }
  return grads_[id.index];
}

NodeId mvn_log_density_node(Tape& tape, NodeId x, NodeId mean, NodeId chol_lower) {
  const std::size_t n = tape.value(x).rows();
  NodeId residual = tape.subtract(x, mean);
  NodeId u = tape.lower_triangular_solve(chol_lower, residual);
  NodeId quad = tape.sum(tape.square(u));
  NodeId log_det = tape.sum_log_diagonal(chol_lower);
  NodeId constant = tape.scalar_constant(0.5 * static_cast<double>(n) * std::log(kTwoPi));
  return tape.negate(
      tape.add(tape.add(tape.scalar_multiply(quad, 0.5), log_det), constant));
}

double gradcheck(const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& build,
                 const std::vector<Matrix>& params, double step, double skip_below) {
  Tape tape;
  std::vector<NodeId> nodes;
  nodes.reserve(params.size());
  for (const Matrix& p : params) nodes.push_back(tape.parameter(p));
  NodeId root = build(tape, nodes);
  tape.backward(root);

  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (NodeId id : nodes) analytic.push_back(tape.gradient(id));

  auto evaluate = [&](const std::vector<Matrix>& shifted) {
    Tape t;
    std::vector<NodeId> ids;
    ids.reserve(shifted.size());
    for (const Matrix& p : shifted) ids.push_back(t.parameter(p));
    return t.value(build(t, ids))(0, 0);
  };

  double max_rel = 0.0;
  std::vector<Matrix> work = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t k = 0; k < params[p].size(); ++k) {
      const double original = work[p].data()[k];
      work[p].data()[k] = original + step;
      const double f_plus = evaluate(work);
      work[p].data()[k] = original - step;
      const double f_minus = evaluate(work);
      work[p].data()[k] = original;
      const double fd = (f_plus - f_minus) / (2.0 * step);
      const double ad = analytic[p].data()[k];
      const double scale = std::max(std::abs(ad), std::abs(fd));
      if (scale < skip_below) continue;
      max_rel = std::max(max_rel, std::abs(ad - fd) / scale);
    }
  }
  return max_rel;
}

}  // namespace sispf
