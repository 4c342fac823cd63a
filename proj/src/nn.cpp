#include "sispf/nn.hpp"

#include <cmath>
#include <string>

namespace sispf {

Mlp init_params(const std::vector<std::size_t>& dims, RandomStream& rng) {
  if (dims.size() < 2) throw ShapeMismatch("init_params: need at least input and output dims");
  Mlp net;
  net.layer_dims = dims;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l];
    const std::size_t fan_out = dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_out, fan_in);
    for (std::size_t i = 0; i < w.size(); ++i)
      w.data()[i] = bound * (2.0 * rng.uniform() - 1.0);
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(fan_out, 1);
  }
  return net;
}

Vector mlp_apply(const Mlp& net, const Vector& input) {
  if (input.dim() != net.input_dim()) throw ShapeMismatch("mlp_apply: input dim mismatch");
  Vector z = input;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    Vector next = matvec(net.weights[l], z);
    for (std::size_t i = 0; i < next.dim(); ++i) next[i] += net.biases[l](i, 0);
    if (l + 1 < net.layer_count()) {
      for (std::size_t i = 0; i < next.dim(); ++i) next[i] = std::tanh(next[i]);
    }
    z = std::move(next);
  }
  return z;
}

MlpNodes bind_mlp(Tape& tape, const Mlp& net) {
  MlpNodes nodes;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    nodes.weights.push_back(tape.parameter(net.weights[l]));
    nodes.biases.push_back(tape.parameter(net.biases[l]));
  }
  return nodes;
}

NodeId mlp_forward(Tape& tape, const MlpNodes& net, NodeId input) {
  NodeId z = input;
  const std::size_t layers = net.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    z = tape.add(tape.matmul(net.weights[l], z), net.biases[l]);
    if (l + 1 < layers) z = tape.tanh(z);
  }
  return z;
}

LearnedProposal make_learned_proposal(std::size_t state_dim, std::size_t meas_dim,
                                      std::size_t horizon,
                                      const std::vector<std::size_t>& mean_hidden,
                                      const std::vector<std::size_t>& cov_hidden,
                                      const StreamKey& key) {
  LearnedProposal p;
  p.state_dim = state_dim;
  p.meas_dim = meas_dim;
  p.horizon = horizon;

  auto full_dims = [&](const std::vector<std::size_t>& hidden) {
    std::vector<std::size_t> dims;
    dims.push_back(state_dim + meas_dim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(state_dim);
    return dims;
  };

  const std::vector<std::size_t> mean_dims = full_dims(mean_hidden);
  for (std::size_t t = 0; t < horizon; ++t) {
    GaussianStream stream = key.child(t).stream();
    p.mean_nets.push_back(init_params(mean_dims, stream));
  }
  GaussianStream cov_stream = key.child(horizon).stream();
  p.cov_net = init_params(full_dims(cov_hidden), cov_stream);
  p.mix = scale(Matrix::identity(state_dim), 0.1);
  return p;
}

std::vector<Matrix*> trainable_parameters(LearnedProposal& p) {
  std::vector<Matrix*> params;
  auto push_net = [&](Mlp& net) {
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      params.push_back(&net.weights[l]);
      params.push_back(&net.biases[l]);
    }
  };
  for (Mlp& net : p.mean_nets) push_net(net);
  push_net(p.cov_net);
  params.push_back(&p.mix);
  return params;
}

std::vector<const Matrix*> trainable_parameters(const LearnedProposal& p) {
  std::vector<Matrix*> mutable_view = trainable_parameters(const_cast<LearnedProposal&>(p));
  return std::vector<const Matrix*>(mutable_view.begin(), mutable_view.end());
}

ProposalGraph bind_proposal(Tape& tape, const LearnedProposal& p) {
  ProposalGraph graph;
  for (const Mlp& net : p.mean_nets) graph.mean_nets.push_back(bind_mlp(tape, net));
  graph.cov_net = bind_mlp(tape, p.cov_net);
  graph.mix = tape.parameter(p.mix);
  graph.mix_transpose = tape.transpose(graph.mix);
  return graph;
}

ProposalGraph proposal_graph_from_nodes(Tape& tape, const LearnedProposal& shape,
                                        const std::vector<NodeId>& nodes) {
  const std::size_t expected = trainable_parameters(shape).size();
  if (nodes.size() != expected) {
    throw ShapeMismatch("proposal_graph_from_nodes: wrong node count");
  }
  ProposalGraph graph;
  std::size_t at = 0;
  auto take_net = [&](const Mlp& net) {
    MlpNodes bound;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      bound.weights.push_back(nodes[at++]);
      bound.biases.push_back(nodes[at++]);
    }
    return bound;
  };
  for (const Mlp& net : shape.mean_nets) graph.mean_nets.push_back(take_net(net));
  graph.cov_net = take_net(shape.cov_net);
  graph.mix = nodes[at++];
  graph.mix_transpose = tape.transpose(graph.mix);
  return graph;
}

std::vector<NodeId> proposal_parameter_nodes(const ProposalGraph& graph) {
  std::vector<NodeId> nodes;
  auto push_net = [&](const MlpNodes& net) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      nodes.push_back(net.weights[l]);
      nodes.push_back(net.biases[l]);
    }
  };
  for (const MlpNodes& net : graph.mean_nets) push_net(net);
  push_net(graph.cov_net);
  nodes.push_back(graph.mix);
  return nodes;
}

namespace {

// [D]_ij = exp(-(z_i - z_j)^2) from the column z: replicate z across columns,
// subtract the transpose, square, negate, exponentiate.
NodeId kernel_matrix(Tape& tape, NodeId z, std::size_t n) {
  NodeId ones_row = tape.constant(Matrix(1, n, 1.0));
  NodeId z_cols = tape.matmul(z, ones_row);  // (i,j) -> z_i
  NodeId diff = tape.subtract(z_cols, tape.transpose(z_cols));
  return tape.exp(tape.negate(tape.square(diff)));
}

Matrix kernel_matrix(const Vector& z) {
  const std::size_t n = z.dim();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double diff = z[i] - z[j];
      d(i, j) = std::exp(-(diff * diff));
    }
  return d;
}

}  // namespace

std::pair<NodeId, NodeId> proposal_moments(Tape& tape, const ProposalGraph& graph,
                                           std::size_t horizon, std::size_t t,
                                           NodeId x_prev, NodeId y) {
  if (t >= horizon) {
    throw TimeIndexOutOfRange("proposal_moments: t = " + std::to_string(t) +
                              " outside horizon " + std::to_string(horizon));
  }
  NodeId input = tape.concat_rows({x_prev, y});
  NodeId mean = mlp_forward(tape, graph.mean_nets[t], input);
  NodeId z = mlp_forward(tape, graph.cov_net, input);
  NodeId d = kernel_matrix(tape, z, tape.value(z).rows());
  NodeId cov = tape.matmul(tape.matmul(graph.mix, d), graph.mix_transpose);
  cov = tape.scalar_multiply(tape.add(cov, tape.transpose(cov)), 0.5);
  return {mean, cov};
}

void proposal_moments(const LearnedProposal& p, std::size_t t, const Vector& x_prev,
                      const Vector& y, Vector* mean, Matrix* cov) {
  if (t >= p.horizon) {
    throw TimeIndexOutOfRange("proposal_moments: t = " + std::to_string(t) +
                              " outside horizon " + std::to_string(p.horizon));
  }
  if (x_prev.dim() != p.state_dim || y.dim() != p.meas_dim) {
    throw ShapeMismatch("proposal_moments: input dims mismatch");
  }
  Vector input(p.state_dim + p.meas_dim);
  for (std::size_t i = 0; i < p.state_dim; ++i) input[i] = x_prev[i];
  for (std::size_t i = 0; i < p.meas_dim; ++i) input[p.state_dim + i] = y[i];

  *mean = mlp_apply(p.mean_nets[t], input);
  const Vector z = mlp_apply(p.cov_net, input);
  const Matrix d = kernel_matrix(z);
  Matrix s = multiply(multiply(p.mix, d), transpose(p.mix));
  s = scale(add(s, transpose(s)), 0.5);
  *cov = std::move(s);
}

AdamState make_adam_state(const std::vector<const Matrix*>& params, double learning_rate,
                          double beta1, double beta2) {
  AdamState state;
  state.learning_rate = learning_rate;
  state.beta1 = beta1;
  state.beta2 = beta2;
  for (const Matrix* p : params) {
    state.first_moments.emplace_back(p->rows(), p->cols());
    state.second_moments.emplace_back(p->rows(), p->cols());
  }
  return state;
}

void adam_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
               AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moments.size()) {
    throw ShapeMismatch("adam_step: parameter/gradient/state counts differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i]->all_finite()) {
      throw NonFiniteGradient("adam_step: non-finite gradient in parameter " +
                              std::to_string(i));
    }
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = *grads[i];
    Matrix& m = state.first_moments[i];
    Matrix& v = state.second_moments[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw ShapeMismatch("adam_step: gradient shape mismatch");
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g.data()[k];
      m.data()[k] = state.beta1 * m.data()[k] + (1.0 - state.beta1) * gk;
      v.data()[k] = state.beta2 * v.data()[k] + (1.0 - state.beta2) * gk * gk;
      const double m_hat = m.data()[k] / correction1;
      const double v_hat = v.data()[k] / correction2;
      p.data()[k] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace sispf
