#pragma once

#include <cstdint>
#include <string>

#include "sispf/nn.hpp"
#include "sispf/training.hpp"

namespace sispf {

// Everything `test` needs to rebuild the exact scenario a proposal was
// trained for: the scenario family, its SNR, and the seed the scenario was
// generated from, plus the full training configuration for the record.
struct ProposalMetadata {
  std::string scenario = "linear";  // "linear" | "nonlinear" | "uniform"
  double snr_db = 10.0;
  std::uint64_t scenario_seed = 1;
  TrainingConfig training;
};

// JSON on disk. Doubles are written in shortest-round-trip form, so values
// survive save/load bit for bit.
void save_proposal(const std::string& path, const LearnedProposal& proposal,
                   const ProposalMetadata& metadata);

struct LoadedProposal {
  LearnedProposal proposal;
  ProposalMetadata metadata;
};

LoadedProposal load_proposal(const std::string& path);

}  // namespace sispf
