#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "sispf/autodiff.hpp"
#include "sispf/linalg.hpp"
#include "sispf/rng.hpp"

namespace sispf {

// Fully connected network: affine + tanh for every hidden layer, affine only
// at the output. Biases are stored as single-column matrices so that every
// trainable parameter lives in one uniform container type.
struct Mlp {
  std::vector<std::size_t> layer_dims;  // N^(0) .. N^(L)
  std::vector<Matrix> weights;          // L entries, dims[l+1] x dims[l]
  std::vector<Matrix> biases;           // L entries, (dims[l+1], 1)

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  std::size_t layer_count() const { return weights.size(); }
};

// Glorot-uniform weights (±sqrt(6/(fan_in+fan_out))), zero biases.
Mlp init_params(const std::vector<std::size_t>& dims, RandomStream& rng);

// Plain (no-tape) evaluation; used on the test-time filtering path.
Vector mlp_apply(const Mlp& net, const Vector& input);

// Parameter nodes of one network bound onto a tape.
struct MlpNodes {
  std::vector<NodeId> weights;
  std::vector<NodeId> biases;
};

MlpNodes bind_mlp(Tape& tape, const Mlp& net);
NodeId mlp_forward(Tape& tape, const MlpNodes& net, NodeId input);

// The proposal of Eqs. 7-10: one mean network per time step, a shared
// covariance network producing the kernel inputs z, and the mixing matrix C
// with Sigma = C D(z) C^T, [D]_ij = exp(-(z_i - z_j)^2).
struct LearnedProposal {
  std::size_t state_dim = 0;  // N
  std::size_t meas_dim = 0;   // M
  std::size_t horizon = 0;    // T
  std::vector<Mlp> mean_nets;
  Mlp cov_net;
  Matrix mix;  // N x N
};

// All nets take input dim N+M and emit dim N; the mean nets route through
// `mean_hidden`, the covariance net through `cov_hidden`; mix starts at
// 0.1*I. Each net consumes its own substream of `key`.
LearnedProposal make_learned_proposal(std::size_t state_dim, std::size_t meas_dim,
                                      std::size_t horizon,
                                      const std::vector<std::size_t>& mean_hidden,
                                      const std::vector<std::size_t>& cov_hidden,
                                      const StreamKey& key);

// Trainable parameters in one canonical order: mean nets by time step
// (weight, bias per layer), then the covariance net, then mix. Binding,
// optimization, and serialization all rely on this order.
std::vector<Matrix*> trainable_parameters(LearnedProposal& p);
std::vector<const Matrix*> trainable_parameters(const LearnedProposal& p);

struct ProposalGraph {
  std::vector<MlpNodes> mean_nets;
  MlpNodes cov_net;
  NodeId mix;
  NodeId mix_transpose;
};

// Creates parameter nodes for every trainable matrix (canonical order).
ProposalGraph bind_proposal(Tape& tape, const LearnedProposal& p);

// Assembles a ProposalGraph from externally created nodes in the canonical
// order; gradcheck drives the loss graph through this.
ProposalGraph proposal_graph_from_nodes(Tape& tape, const LearnedProposal& shape,
                                        const std::vector<NodeId>& nodes);

// The graph's parameter nodes, flattened back into the canonical order.
std::vector<NodeId> proposal_parameter_nodes(const ProposalGraph& graph);

// (mean, covariance) of the proposal at step t, graph form. The covariance is
// symmetrized as 0.5*(S + S^T) before it is returned.
std::pair<NodeId, NodeId> proposal_moments(Tape& tape, const ProposalGraph& graph,
                                           std::size_t horizon, std::size_t t,
                                           NodeId x_prev, NodeId y);

// Plain form of the same computation (identical kernels, so values agree with
// the graph form to the last bit).
void proposal_moments(const LearnedProposal& p, std::size_t t, const Vector& x_prev,
                      const Vector& y, Vector* mean, Matrix* cov);

struct AdamState {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step_count = 0;
  std::vector<Matrix> first_moments;
  std::vector<Matrix> second_moments;
};

AdamState make_adam_state(const std::vector<const Matrix*>& params, double learning_rate,
                          double beta1, double beta2);

// Standard bias-corrected ADAM descent step. Throws NonFiniteGradient before
// touching any state if a gradient entry is not finite.
void adam_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
               AdamState& state);

}  // namespace sispf
