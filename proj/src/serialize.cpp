#include "sispf/serialize.hpp"

#include <fstream>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "sispf/errors.hpp"

namespace sispf {

namespace {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw std::runtime_error("params file: expected a matrix as an array of rows");
  }
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].size();
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (j[r].size() != cols) throw std::runtime_error("params file: ragged matrix rows");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

json column_to_json(const Matrix& b) {
  json out = json::array();
  for (std::size_t r = 0; r < b.rows(); ++r) out.push_back(b(r, 0));
  return out;
}

Matrix column_from_json(const json& j) {
  if (!j.is_array() || j.empty()) {
    throw std::runtime_error("params file: expected a bias vector");
  }
  Matrix b(j.size(), 1);
  for (std::size_t r = 0; r < j.size(); ++r) b(r, 0) = j[r].get<double>();
  return b;
}

json layers_to_json(const Mlp& net) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    layers.push_back({{"A", matrix_to_json(net.weights[l])}, {"b", column_to_json(net.biases[l])}});
  }
  return layers;
}

Mlp layers_from_json(const json& layers) {
  Mlp net;
  for (const json& layer : layers) {
    net.weights.push_back(matrix_from_json(layer.at("A")));
    net.biases.push_back(column_from_json(layer.at("b")));
  }
  if (net.weights.empty()) throw std::runtime_error("params file: network with no layers");
  net.layer_dims.push_back(net.weights.front().cols());
  for (const Matrix& w : net.weights) net.layer_dims.push_back(w.rows());
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    if (net.biases[l].rows() != net.weights[l].rows() ||
        (l + 1 < net.layer_count() && net.weights[l + 1].cols() != net.weights[l].rows())) {
      throw DimensionMismatch("params file: inconsistent layer shapes");
    }
  }
  return net;
}

}  // namespace

void save_proposal(const std::string& path, const LearnedProposal& proposal,
                   const ProposalMetadata& metadata) {
  json j;
  j["state_dim"] = proposal.state_dim;
  j["meas_dim"] = proposal.meas_dim;
  j["horizon"] = proposal.horizon;

  json mean_nets = json::array();
  for (std::size_t t = 0; t < proposal.mean_nets.size(); ++t) {
    mean_nets.push_back({{"t", t}, {"layers", layers_to_json(proposal.mean_nets[t])}});
  }
  j["mean_nets"] = std::move(mean_nets);
  j["cov_net"] = {{"layers", layers_to_json(proposal.cov_net)}};
  j["mix"] = matrix_to_json(proposal.mix);
  j["seed"] = metadata.scenario_seed;
  j["training_config"] = {{"scenario", metadata.scenario},
                          {"snr_db", metadata.snr_db},
                          {"num_runs", metadata.training.num_runs},
                          {"particle_count", metadata.training.particle_count},
                          {"horizon", metadata.training.horizon},
                          {"learning_rate", metadata.training.learning_rate},
                          {"beta1", metadata.training.beta1},
                          {"beta2", metadata.training.beta2},
                          {"seed", metadata.training.seed},
                          {"fixed_trajectory", metadata.training.fixed_trajectory},
                          {"grad_clip_norm", metadata.training.grad_clip_norm}};

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

LoadedProposal load_proposal(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open params file: " + path);
  json j;
  in >> j;

  LoadedProposal loaded;
  LearnedProposal& p = loaded.proposal;
  p.state_dim = j.at("state_dim").get<std::size_t>();
  p.meas_dim = j.at("meas_dim").get<std::size_t>();
  p.horizon = j.at("horizon").get<std::size_t>();

  p.mean_nets.resize(p.horizon);
  std::vector<bool> seen(p.horizon, false);
  for (const json& entry : j.at("mean_nets")) {
    const std::size_t t = entry.at("t").get<std::size_t>();
    if (t >= p.horizon || seen[t]) {
      throw std::runtime_error("params file: bad mean-net time index");
    }
    seen[t] = true;
    p.mean_nets[t] = layers_from_json(entry.at("layers"));
  }
  for (std::size_t t = 0; t < p.horizon; ++t) {
    if (!seen[t]) throw std::runtime_error("params file: missing mean net for a time step");
  }
  p.cov_net = layers_from_json(j.at("cov_net").at("layers"));
  p.mix = matrix_from_json(j.at("mix"));

  const std::size_t in_dim = p.state_dim + p.meas_dim;
  for (const Mlp& net : p.mean_nets) {
    if (net.input_dim() != in_dim || net.output_dim() != p.state_dim) {
      throw DimensionMismatch("params file: mean net dimensions disagree with the header");
    }
  }
  if (p.cov_net.input_dim() != in_dim || p.cov_net.output_dim() != p.state_dim ||
      p.mix.rows() != p.state_dim || p.mix.cols() != p.state_dim) {
    throw DimensionMismatch("params file: covariance/mix dimensions disagree with the header");
  }

  ProposalMetadata& meta = loaded.metadata;
  meta.scenario_seed = j.at("seed").get<std::uint64_t>();
  const json& tc = j.at("training_config");
  meta.scenario = tc.at("scenario").get<std::string>();
  meta.snr_db = tc.at("snr_db").get<double>();
  meta.training.num_runs = tc.at("num_runs").get<std::size_t>();
  meta.training.particle_count = tc.at("particle_count").get<std::size_t>();
  meta.training.horizon = tc.at("horizon").get<std::size_t>();
  meta.training.learning_rate = tc.at("learning_rate").get<double>();
  meta.training.beta1 = tc.at("beta1").get<double>();
  meta.training.beta2 = tc.at("beta2").get<double>();
  meta.training.seed = tc.at("seed").get<std::uint64_t>();
  meta.training.fixed_trajectory = tc.at("fixed_trajectory").get<bool>();
  meta.training.grad_clip_norm = tc.at("grad_clip_norm").get<double>();
  return loaded;
}

}  // namespace sispf
