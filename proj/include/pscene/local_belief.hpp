#pragma once

#include <filesystem>
#include <vector>

#include "pscene/convnet.hpp"

namespace pscene {

// One network per sampling strategy, all sharing a single architecture.
struct EnsembleModel {
  NetworkSpec spec;
  std::vector<Strategy> strategies;
  std::vector<NetworkParams> members;

  int size() const { return static_cast<int>(members.size()); }
};

// Member i is trained with seed cfg.seed + i, so the whole ensemble is
// reproducible from one seed.
EnsembleModel train_ensemble(const DatasetSplit& split, const std::vector<Strategy>& strategies,
                             const NetworkSpec& spec, const SamplingConfig& sampler,
                             const TrainConfig& cfg);

// Component-wise arithmetic mean of member distributions.
std::vector<double> ensemble_fuse(const std::vector<std::vector<double>>& member_beliefs);

// Per-cell fusion of all members' softmax outputs on the cell's patch.
// `image` is a raw (unpreprocessed) scene image.
BeliefMap local_belief_map(const EnsembleModel& model, const SceneImage& image);

// Single-member belief map (used for per-member evaluation).
BeliefMap member_belief_map(const NetworkSpec& spec, const NetworkParams& params,
                            const SceneImage& image);

void save_ensemble(const EnsembleModel& model, const std::filesystem::path& path);
EnsembleModel load_ensemble(const std::filesystem::path& path);

}  // namespace pscene
