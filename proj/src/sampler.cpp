#include "pscene/sampler.hpp"

#include <algorithm>
#include <string>

namespace pscene {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::GS: return "gs";
    case Strategy::CS: return "cs";
    case Strategy::HS: return "hs";
    case Strategy::TCS: return "tcs";
  }
  return "?";
}

Strategy strategy_from_name(const std::string& name) {
  if (name == "gs") return Strategy::GS;
  if (name == "cs") return Strategy::CS;
  if (name == "hs") return Strategy::HS;
  if (name == "tcs") return Strategy::TCS;
  throw ArgumentError("unknown sampling strategy: " + name);
}

RarityPartition classify_rarity(const ClassFrequencyTable& table, double eta) {
  RarityPartition part;
  for (int c = 0; c < table.class_count(); ++c) {
    if (table.frequencies[c] > eta)
      part.frequent.push_back(c);
    else
      part.rare.push_back(c);
  }
  return part;
}

PixelPools::PixelPools(const DatasetSplit& split, int class_count) {
  pools_.resize(class_count);
  for (size_t i = 0; i < split.records.size(); ++i) {
    const LabelMap& lm = split.records[i].labels;
    for (int r = 0; r < lm.h; ++r)
      for (int c = 0; c < lm.w; ++c) {
        const std::uint16_t l = lm.at(r, c);
        if (l == kUnlabeled) continue;
        if (l >= pools_.size()) throw DataError("label id outside catalog");
        const SampleRef ref{static_cast<int>(i), r, c};
        pools_[l].push_back(ref);
        all_.push_back(ref);
        all_labels_.push_back(l);
      }
  }
}

namespace {

SampleRef draw(const std::vector<SampleRef>& pool, std::mt19937_64& rng) {
  std::uniform_int_distribution<size_t> d(0, pool.size() - 1);
  return pool[d(rng)];
}

// Equal per-class quotas summing to n; classes with smaller ids take the
// remainder, so max and min quotas differ by at most 1.
SampleList class_sample(const PixelPools& pools, const std::vector<int>& classes, int n,
                        std::mt19937_64& rng) {
  SampleList out;
  out.reserve(n);
  const int base = n / static_cast<int>(classes.size());
  const int extra = n % static_cast<int>(classes.size());
  for (size_t i = 0; i < classes.size(); ++i) {
    const int c = classes[i];
    if (pools.pool(c).empty())
      throw ArgumentError("class sampling: class " + std::to_string(c) +
                          " has no labeled pixels in the split");
    const int quota = base + (static_cast<int>(i) < extra ? 1 : 0);
    for (int k = 0; k < quota; ++k) out.push_back(draw(pools.pool(c), rng));
  }
  return out;
}

}  // namespace

SampleList sample_epoch(const PixelPools& pools, const ClassFrequencyTable& table,
                        const SamplingConfig& config, std::mt19937_64& rng) {
  const int n = config.epoch_size;
  if (n <= 0) throw ArgumentError("epoch size must be positive");
  if (config.eta <= 0.0 || config.eta >= 1.0) throw ArgumentError("eta must be in (0,1)");
  if (pools.all_labeled().empty()) throw ArgumentError("split has no labeled pixels");

  switch (config.strategy) {
    case Strategy::GS: {
      SampleList out;
      out.reserve(n);
      for (int k = 0; k < n; ++k) out.push_back(pools.draw_global(rng).first);
      return out;
    }
    case Strategy::CS: {
      std::vector<int> classes(pools.class_count());
      for (int c = 0; c < pools.class_count(); ++c) classes[c] = c;
      return class_sample(pools, classes, n, rng);
    }
    case Strategy::TCS: {
      const RarityPartition part = classify_rarity(table, config.eta);
      if (part.rare.empty()) throw ArgumentError("truncated class sampling: no rare classes");
      return class_sample(pools, part.rare, n, rng);
    }
    case Strategy::HS: {
      // Global draw first, then grow each rare class until its share of the
      // growing sample reaches eta. Rare classes are processed in ascending
      // id; classes absent from the split stay absent.
      SampleList out;
      out.reserve(n);
      std::vector<std::int64_t> counts(pools.class_count(), 0);
      for (int k = 0; k < n; ++k) {
        auto [ref, label] = pools.draw_global(rng);
        out.push_back(ref);
        ++counts[label];
      }
      const RarityPartition part = classify_rarity(table, config.eta);
      for (int c : part.rare) {
        if (pools.pool(c).empty()) continue;
        while (static_cast<double>(counts[c]) <
               config.eta * static_cast<double>(out.size())) {
          out.push_back(draw(pools.pool(c), rng));
          ++counts[c];
        }
      }
      return out;
    }
  }
  throw ArgumentError("unknown strategy");
}

}  // namespace pscene
