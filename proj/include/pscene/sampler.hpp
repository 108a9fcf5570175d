#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "pscene/types.hpp"

namespace pscene {

enum class Strategy { GS, CS, HS, TCS };

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct SamplingConfig {
  Strategy strategy = Strategy::GS;
  int epoch_size = 10000;
  double eta = 0.05;
  std::uint64_t seed = 0;
};

struct RarityPartition {
  std::vector<int> frequent;
  std::vector<int> rare;
};

// One sampled patch reference: (record index, row, col). References may
// repeat; they always address labeled pixels.
struct SampleRef {
  int record = 0;
  int row = 0;
  int col = 0;
};

using SampleList = std::vector<SampleRef>;

// A class is frequent iff its frequency is strictly above eta.
RarityPartition classify_rarity(const ClassFrequencyTable& table, double eta);

// Per-class pools of labeled pixel references, computed once per split.
class PixelPools {
 public:
  PixelPools(const DatasetSplit& split, int class_count);

  const std::vector<SampleRef>& pool(int class_id) const { return pools_[class_id]; }
  const std::vector<SampleRef>& all_labeled() const { return all_; }
  int class_count() const { return static_cast<int>(pools_.size()); }

  // Uniform draw over all labeled pixels, returning the pixel's label too.
  std::pair<SampleRef, std::uint16_t> draw_global(std::mt19937_64& rng) const {
    std::uniform_int_distribution<size_t> d(0, all_.size() - 1);
    const size_t i = d(rng);
    return {all_[i], all_labels_[i]};
  }

 private:
  std::vector<std::vector<SampleRef>> pools_;
  std::vector<SampleRef> all_;
  std::vector<std::uint16_t> all_labels_;
};

SampleList sample_epoch(const PixelPools& pools, const ClassFrequencyTable& table,
                        const SamplingConfig& config, std::mt19937_64& rng);

}  // namespace pscene
