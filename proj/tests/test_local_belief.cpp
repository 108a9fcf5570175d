#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "pscene/local_belief.hpp"
#include "pscene/scene_data.hpp"

using namespace pscene;

namespace {

// Small two-class split with distinct palettes.
DatasetSplit toy_split(std::uint64_t seed) {
  SceneGrammarConfig g;
  g.classes = {{"dark", {50, 50, 50}, 6}, {"bright", {200, 200, 200}, 6}};
  g.categories = {{"only", {{0, 0.5}, {1, 0.5}}}};
  g.image_h = g.image_w = 16;
  g.train_per_category = 4;
  g.test_per_category = 0;
  return generate_synthetic_scenes(g, seed).train;
}

NetworkSpec small_spec(int classes) {
  NetworkSpec spec;
  spec.input_side = 7;
  spec.layers.push_back({LayerKind::Conv, 3, 4, 1});
  spec.layers.push_back({LayerKind::Relu});
  spec.layers.push_back({LayerKind::MaxPool, 2, 0, 2});
  spec.layers.push_back({LayerKind::FC, 0, 5});
  spec.layers.push_back({LayerKind::Relu});
  spec.layers.push_back({LayerKind::FC, 0, classes});
  return spec;
}

TrainConfig quick_train() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 25;
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST_CASE("fuse: identity on a single member") {
  const std::vector<double> p = {0.1, 0.7, 0.2};
  CHECK(ensemble_fuse({p}) == p);
}

TEST_CASE("fuse: direct arithmetic and idempotence") {
  const auto fused = ensemble_fuse({{0.2, 0.8}, {0.6, 0.4}});
  CHECK(fused[0] == doctest::Approx(0.4));
  CHECK(fused[1] == doctest::Approx(0.6));

  const std::vector<double> p = {0.3, 0.3, 0.4};
  const auto same = ensemble_fuse({p, p, p, p});
  for (size_t j = 0; j < p.size(); ++j) CHECK(same[j] == doctest::Approx(p[j]).epsilon(1e-12));
}

TEST_CASE("fuse: permutation invariance and the removal identity") {
  std::mt19937_64 rng(5);
  std::vector<std::vector<double>> members;
  for (int m = 0; m < 4; ++m) {
    std::vector<double> p(3);
    double sum = 0;
    for (double& v : p) {
      v = (rng() % 1000) + 1.0;
      sum += v;
    }
    for (double& v : p) v /= sum;
    members.push_back(p);
  }
  const auto base = ensemble_fuse(members);
  auto perm = members;
  std::reverse(perm.begin(), perm.end());
  const auto reordered = ensemble_fuse(perm);
  for (size_t j = 0; j < base.size(); ++j)
    CHECK(reordered[j] == doctest::Approx(base[j]).epsilon(1e-12));

  // fuse(S) = ((|S|-1) * fuse(S - last) + last) / |S|
  auto reduced = members;
  const auto removed = reduced.back();
  reduced.pop_back();
  const auto partial = ensemble_fuse(reduced);
  for (size_t j = 0; j < base.size(); ++j)
    CHECK(base[j] == doctest::Approx((3.0 * partial[j] + removed[j]) / 4.0).epsilon(1e-12));
}

TEST_CASE("fuse: errors on empty input and ragged sizes") {
  CHECK_THROWS_AS(ensemble_fuse({}), ArgumentError);
  CHECK_THROWS_AS(ensemble_fuse({{0.5, 0.5}, {1.0}}), ArgumentError);
}

TEST_CASE("train_ensemble: single GS member equals a plain training run") {
  const DatasetSplit split = toy_split(1);
  const NetworkSpec spec = small_spec(2);
  SamplingConfig sampler;
  sampler.epoch_size = 100;
  const TrainConfig cfg = quick_train();
  const EnsembleModel model = train_ensemble(split, {Strategy::GS}, spec, sampler, cfg);
  REQUIRE(model.size() == 1);

  const PixelPools pools(split, 2);
  const auto table = compute_class_frequencies(split, 2);
  SamplingConfig gs = sampler;
  gs.strategy = Strategy::GS;
  const NetworkParams plain = train(split, pools, table, gs, spec, cfg);
  for (size_t i = 0; i < plain.layers.size(); ++i)
    CHECK(model.members[0].layers[i].weights == plain.layers[i].weights);
}

TEST_CASE("train_ensemble: four strategies give four members; failures name the strategy") {
  const DatasetSplit split = toy_split(2);
  const NetworkSpec spec = small_spec(2);
  SamplingConfig sampler;
  sampler.epoch_size = 80;
  sampler.eta = 0.6;  // both classes rare so TCS is satisfiable
  const EnsembleModel model = train_ensemble(
      split, {Strategy::GS, Strategy::CS, Strategy::HS, Strategy::TCS}, spec, sampler,
      quick_train());
  CHECK(model.size() == 4);

  // eta low enough that no class is rare -> TCS cannot run; error names it.
  SamplingConfig bad = sampler;
  bad.eta = 0.01;
  try {
    train_ensemble(split, {Strategy::TCS}, spec, bad, quick_train());
    FAIL("expected ArgumentError");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("tcs") != std::string::npos);
  }
}

TEST_CASE("local_belief_map: valid distributions, member order irrelevant") {
  const DatasetSplit split = toy_split(3);
  const NetworkSpec spec = small_spec(2);
  SamplingConfig sampler;
  sampler.epoch_size = 80;
  EnsembleModel model =
      train_ensemble(split, {Strategy::GS, Strategy::CS}, spec, sampler, quick_train());
  const SceneImage& img = split.records[0].image;
  const BeliefMap map = local_belief_map(model, img);
  CHECK(map.grid_h == 8);  // ceil(16/2): one pool layer -> stride 2
  for (int r = 0; r < map.grid_h; ++r)
    for (int c = 0; c < map.grid_w; ++c) {
      double sum = 0;
      for (int j = 0; j < map.classes; ++j) {
        CHECK(map.cell(r, c)[j] >= 0.0);
        sum += map.cell(r, c)[j];
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }

  std::swap(model.members[0], model.members[1]);
  std::swap(model.strategies[0], model.strategies[1]);
  const BeliefMap swapped = local_belief_map(model, img);
  for (size_t i = 0; i < map.data.size(); ++i)
    CHECK(swapped.data[i] == doctest::Approx(map.data[i]).epsilon(1e-12));
}

TEST_CASE("local_belief_map equals the mean of per-member maps") {
  const DatasetSplit split = toy_split(4);
  const NetworkSpec spec = small_spec(2);
  SamplingConfig sampler;
  sampler.epoch_size = 80;
  const EnsembleModel model =
      train_ensemble(split, {Strategy::GS, Strategy::CS}, spec, sampler, quick_train());
  const SceneImage& img = split.records[1].image;
  const BeliefMap fused = local_belief_map(model, img);
  const BeliefMap m0 = member_belief_map(spec, model.members[0], img);
  const BeliefMap m1 = member_belief_map(spec, model.members[1], img);
  for (size_t i = 0; i < fused.data.size(); ++i)
    CHECK(fused.data[i] == doctest::Approx((m0.data[i] + m1.data[i]) / 2.0).epsilon(1e-12));
}

TEST_CASE("ensemble file round trip") {
  const DatasetSplit split = toy_split(5);
  const NetworkSpec spec = small_spec(2);
  SamplingConfig sampler;
  sampler.epoch_size = 60;
  const EnsembleModel model =
      train_ensemble(split, {Strategy::GS, Strategy::CS}, spec, sampler, quick_train());
  const auto path = std::filesystem::temp_directory_path() / "pscene_ens_test.pens";
  save_ensemble(model, path);
  const EnsembleModel back = load_ensemble(path);
  REQUIRE(back.size() == model.size());
  CHECK(back.strategies == model.strategies);
  for (int m = 0; m < model.size(); ++m)
    for (size_t i = 0; i < model.members[m].layers.size(); ++i)
      CHECK(back.members[m].layers[i].weights == model.members[m].layers[i].weights);
}
