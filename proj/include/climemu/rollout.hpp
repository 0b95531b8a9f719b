#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "climemu/emulator.hpp"

namespace climemu {

struct RolloutConfig {
  std::size_t n_members = 1;
  std::size_t euler_steps = 12;
  // Any normalized state magnitude beyond this aborts with RolloutDiverged.
  double divergence_threshold = 100.0;
  std::uint64_t seed = 0;
};

/// Integrate the flow from a standard-normal draw to tau = 1 with fixed-step
/// Euler; returns the sampled residual in normalized state space.
std::vector<double> euler_sample(const EmulatorParams& det, const FlowParams& flow,
                                 const NormalizedItem& item, std::size_t n_steps,
                                 Rng& rng);

/// Autoregressive emulation at horizon 1. The first two months of each member
/// are taken from `init` (member 0); forcings, grid, variables, and length
/// come from `init` as well. Each step is the deterministic ensemble mean
/// plus, when a flow head is given, a sampled residual. Member m draws from
/// the sub-stream mix_seed(seed, m).
ScenarioDataset rollout(const std::vector<EmulatorParams>& ensemble,
                        const std::optional<FlowParams>& flow,
                        const ScenarioDataset& init, const RolloutConfig& cfg);

struct CheckpointScore {
  std::size_t step = 0;
  double nrmse = 0.0;
};

/// Roll each checkpoint over the validation scenario and rank by NRMSE
/// against the member mean. final_decade_only scores only the last 120
/// months (the deterministic selection rule); otherwise the full series
/// counts. Returns scores plus the winning checkpoint index.
struct SelectionResult {
  std::vector<CheckpointScore> scores;  // aligned with the checkpoint list
  std::size_t best = 0;
};

SelectionResult select_checkpoint(const std::vector<Checkpoint>& checkpoints,
                                  const std::optional<FlowParams>& flow,
                                  const ScenarioDataset& validation,
                                  bool final_decade_only, const RolloutConfig& cfg);

}  // namespace climemu
