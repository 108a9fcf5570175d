#include "pscene/local_belief.hpp"

#include <algorithm>
#include <fstream>

#include "pscene/binio.hpp"
#include "pscene/scene_data.hpp"

namespace pscene {

EnsembleModel train_ensemble(const DatasetSplit& split, const std::vector<Strategy>& strategies,
                             const NetworkSpec& spec, const SamplingConfig& sampler,
                             const TrainConfig& cfg) {
  if (strategies.empty()) throw ArgumentError("ensemble needs at least one strategy");
  EnsembleModel model;
  model.spec = spec;
  model.strategies = strategies;
  const PixelPools pools(split, spec.num_classes());
  const ClassFrequencyTable table = compute_class_frequencies(split, spec.num_classes());
  for (size_t i = 0; i < strategies.size(); ++i) {
    SamplingConfig member_sampler = sampler;
    member_sampler.strategy = strategies[i];
    TrainConfig member_cfg = cfg;
    member_cfg.seed = cfg.seed + i;
    try {
      model.members.push_back(train(split, pools, table, member_sampler, spec, member_cfg));
    } catch (const std::exception& e) {
      throw ArgumentError(std::string("training member '") + strategy_name(strategies[i]) +
                          "' failed: " + e.what());
    }
  }
  return model;
}

std::vector<double> ensemble_fuse(const std::vector<std::vector<double>>& member_beliefs) {
  if (member_beliefs.empty()) throw ArgumentError("ensemble_fuse: empty member list");
  const size_t n = member_beliefs.front().size();
  std::vector<double> fused(n, 0.0);
  for (const auto& b : member_beliefs) {
    if (b.size() != n) throw ArgumentError("ensemble_fuse: distribution size mismatch");
    for (size_t j = 0; j < n; ++j) fused[j] += b[j];
  }
  const double inv = 1.0 / static_cast<double>(member_beliefs.size());
  for (double& v : fused) v *= inv;
  return fused;
}

namespace {

BeliefMap belief_map_impl(const NetworkSpec& spec, const std::vector<const NetworkParams*>& nets,
                          const SceneImage& image) {
  const SceneImage pre = preprocess(image);
  const int stride = spec.feature_stride();
  const int offset = stride / 2;
  BeliefMap map;
  map.grid_h = (image.h + stride - 1) / stride;
  map.grid_w = (image.w + stride - 1) / stride;
  map.classes = spec.num_classes();
  map.data.resize(static_cast<size_t>(map.grid_h) * map.grid_w * map.classes);
  std::vector<std::vector<double>> member_out(nets.size());
  for (int r = 0; r < map.grid_h; ++r)
    for (int c = 0; c < map.grid_w; ++c) {
      const int row = std::min(r * stride + offset, image.h - 1);
      const int col = std::min(c * stride + offset, image.w - 1);
      const Tensor t = patch_to_tensor(extract_patch(pre, row, col, spec.input_side));
      for (size_t m = 0; m < nets.size(); ++m) member_out[m] = forward(spec, *nets[m], t);
      const std::vector<double> fused = ensemble_fuse(member_out);
      std::copy(fused.begin(), fused.end(), map.cell(r, c));
    }
  return map;
}

}  // namespace

BeliefMap local_belief_map(const EnsembleModel& model, const SceneImage& image) {
  std::vector<const NetworkParams*> nets;
  for (const auto& m : model.members) nets.push_back(&m);
  return belief_map_impl(model.spec, nets, image);
}

BeliefMap member_belief_map(const NetworkSpec& spec, const NetworkParams& params,
                            const SceneImage& image) {
  return belief_map_impl(spec, {&params}, image);
}

// Ensemble file: "PENS", version, member count, then per member a strategy
// tag and an embedded PNET blob.
namespace {
constexpr char kEnsMagic[4] = {'P', 'E', 'N', 'S'};
constexpr std::uint32_t kEnsVersion = 1;
}  // namespace

void save_ensemble(const EnsembleModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  binio::write_magic(out, kEnsMagic);
  binio::write_u32(out, kEnsVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(model.members.size()));
  for (size_t i = 0; i < model.members.size(); ++i) {
    binio::write_u32(out, static_cast<std::uint32_t>(model.strategies[i]));
    write_network(model.spec, model.members[i], out);
  }
  if (!out) throw DataError("write failed: " + path.string());
}

EnsembleModel load_ensemble(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  binio::expect_magic(in, kEnsMagic, "PENS");
  binio::expect_version(in, kEnsVersion, "PENS");
  const std::uint32_t n = binio::read_u32(in, "member count");
  if (n == 0) throw DataError("ensemble file has no members");
  EnsembleModel model;
  for (std::uint32_t i = 0; i < n; ++i) {
    model.strategies.push_back(static_cast<Strategy>(binio::read_u32(in, "strategy tag")));
    auto [spec, params] = read_network(in);
    if (i == 0)
      model.spec = spec;
    else if (spec.layers.size() != model.spec.layers.size() ||
             spec.input_side != model.spec.input_side)
      throw DataError("ensemble members disagree on architecture");
    model.members.push_back(std::move(params));
  }
  return model;
}

}  // namespace pscene
