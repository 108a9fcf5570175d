#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>

#include "pscene/scene_data.hpp"

using namespace pscene;
namespace fs = std::filesystem;

namespace {

SceneImage make_image(int h, int w, double fill = 0.0) {
  SceneImage img;
  img.h = h;
  img.w = w;
  img.data.assign(static_cast<size_t>(h) * w * 3, fill);
  return img;
}

SceneRecord make_record(int h, int w, const std::vector<std::uint16_t>& labels) {
  SceneRecord rec;
  rec.image = make_image(h, w);
  rec.labels.h = h;
  rec.labels.w = w;
  rec.labels.labels = labels;
  return rec;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pscene_sd_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("class frequencies: direct counts") {
  DatasetSplit split;
  split.records.push_back(make_record(2, 2, {0, 0, 0, 1}));
  const auto table = compute_class_frequencies(split, 2);
  CHECK(table.counts[0] == 3);
  CHECK(table.counts[1] == 1);
  CHECK(table.frequencies[0] == doctest::Approx(0.75));
  CHECK(table.frequencies[1] == doctest::Approx(0.25));
  CHECK(table.labeled_total == 4);
}

TEST_CASE("class frequencies: single class and unlabeled exclusion") {
  DatasetSplit split;
  split.records.push_back(make_record(1, 3, {2, 2, kUnlabeled}));
  const auto table = compute_class_frequencies(split, 3);
  CHECK(table.frequencies[2] == doctest::Approx(1.0));
  CHECK(table.labeled_total == 2);
}

TEST_CASE("class frequencies: zero labeled pixels is an error") {
  DatasetSplit split;
  split.records.push_back(make_record(1, 2, {kUnlabeled, kUnlabeled}));
  CHECK_THROWS_AS(compute_class_frequencies(split, 1), DataError);
  CHECK_THROWS_AS(compute_class_frequencies(DatasetSplit{}, 1), ArgumentError);
}

TEST_CASE("class frequencies: multi-image split matches an independent tally") {
  std::mt19937_64 rng(11);
  DatasetSplit split;
  std::vector<std::int64_t> oracle(5, 0);
  std::int64_t labeled = 0;
  for (int i = 0; i < 4; ++i) {
    std::vector<std::uint16_t> labels(6 * 7);
    for (auto& l : labels) {
      const int v = static_cast<int>(rng() % 6);
      l = v == 5 ? kUnlabeled : static_cast<std::uint16_t>(v);
      if (l != kUnlabeled) {
        ++oracle[l];
        ++labeled;
      }
    }
    split.records.push_back(make_record(6, 7, labels));
  }
  const auto table = compute_class_frequencies(split, 5);
  double sum = 0;
  for (int c = 0; c < 5; ++c) {
    CHECK(table.counts[c] == oracle[c]);
    CHECK(table.frequencies[c] ==
          doctest::Approx(static_cast<double>(oracle[c]) / labeled).epsilon(1e-12));
    sum += table.frequencies[c];
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("extract_patch: interior crop is the raw window") {
  SceneImage img = make_image(5, 5);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = r * 100 + c * 10 + ch;
  const Patch p = extract_patch(img, 2, 2, 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      for (int ch = 0; ch < 3; ++ch) CHECK(p.at(r, c, ch) == img.at(r + 1, c + 1, ch));
}

TEST_CASE("extract_patch: side 1 is the pixel itself") {
  SceneImage img = make_image(3, 3);
  img.at(1, 2, 0) = 42;
  const Patch p = extract_patch(img, 1, 2, 1);
  CHECK(p.at(0, 0, 0) == 42);
}

TEST_CASE("extract_patch: corner mirror matches index arithmetic") {
  SceneImage img = make_image(4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = r * 16 + c * 4 + ch;
  const Patch p = extract_patch(img, 0, 0, 3);
  // Independent oracle: reflect i -> |i| for the first fold.
  auto reflect = [](int i) { return i < 0 ? -i : i; };
  for (int r = -1; r <= 1; ++r)
    for (int c = -1; c <= 1; ++c)
      for (int ch = 0; ch < 3; ++ch)
        CHECK(p.at(r + 1, c + 1, ch) == img.at(reflect(r), reflect(c), ch));
}

TEST_CASE("extract_patch: mirror property on patches wider than the image") {
  std::mt19937_64 rng(3);
  SceneImage img = make_image(3, 4);
  for (auto& v : img.data) v = static_cast<double>(rng() % 256);
  const Patch p = extract_patch(img, 1, 1, 9);
  for (double v : p.values) {
    bool found = false;
    for (double w : img.data)
      if (w == v) found = true;
    CHECK(found);
  }
}

TEST_CASE("extract_patch: argument errors") {
  const SceneImage img = make_image(4, 4);
  CHECK_THROWS_AS(extract_patch(img, 0, 0, 4), ArgumentError);
  CHECK_THROWS_AS(extract_patch(img, 4, 0, 3), ArgumentError);
  CHECK_THROWS_AS(extract_patch(img, 0, -1, 3), ArgumentError);
}

TEST_CASE("preprocess: zero mean, unit variance, joint over channels") {
  std::mt19937_64 rng(5);
  SceneImage img = make_image(8, 9);
  for (auto& v : img.data) v = static_cast<double>(rng() % 256);
  const SceneImage out = preprocess(img);
  double mean = 0;
  for (double v : out.data) mean += v;
  mean /= static_cast<double>(out.data.size());
  double var = 0;
  for (double v : out.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(out.data.size());
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(var - 1.0) < 1e-6);
}

TEST_CASE("preprocess: constant image maps to zeros") {
  const SceneImage out = preprocess(make_image(4, 4, 77.0));
  for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("synthetic generation: deterministic given seed") {
  const auto g = default_grammar();
  const SynthResult a = generate_synthetic_scenes(g, 7);
  const SynthResult b = generate_synthetic_scenes(g, 7);
  REQUIRE(a.train.size() == b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train.records[i].image.data == b.train.records[i].image.data);
    CHECK(a.train.records[i].labels.labels == b.train.records[i].labels.labels);
  }
  const SynthResult c = generate_synthetic_scenes(g, 8);
  CHECK(a.train.records[0].image.data != c.train.records[0].image.data);
}

TEST_CASE("synthetic generation: configurable 100:1 imbalance") {
  SceneGrammarConfig g;
  g.classes = {{"a", {200, 10, 10}, 4}, {"b", {10, 200, 10}, 4}};
  g.categories = {{"only", {{0, 0.99}, {1, 0.01}}}};
  g.image_h = 100;
  g.image_w = 50;
  g.train_per_category = 10;
  g.test_per_category = 0;
  const SynthResult data = generate_synthetic_scenes(g, 3);
  const auto table = compute_class_frequencies(data.train, 2);
  const double ratio = table.frequencies[0] / table.frequencies[1];
  CHECK(ratio > 90.0);
  CHECK(ratio < 110.0);
}

TEST_CASE("synthetic generation: ambiguous pair has identical patch statistics") {
  // sand (2) and road (3) share one palette; their per-channel pixel value
  // distributions must agree. Compare means and stds with a tolerance far
  // below the palette separation (>= 40 units between distinct classes).
  auto g = default_grammar();
  g.train_per_category = 20;
  g.test_per_category = 0;
  const SynthResult data = generate_synthetic_scenes(g, 13);
  double sum[2][3] = {}, sq[2][3] = {};
  std::int64_t n[2] = {};
  for (const auto& rec : data.train.records)
    for (int r = 0; r < rec.labels.h; ++r)
      for (int c = 0; c < rec.labels.w; ++c) {
        const std::uint16_t l = rec.labels.at(r, c);
        if (l != 2 && l != 3) continue;
        const int k = l - 2;
        ++n[k];
        for (int ch = 0; ch < 3; ++ch) {
          sum[k][ch] += rec.image.at(r, c, ch);
          sq[k][ch] += rec.image.at(r, c, ch) * rec.image.at(r, c, ch);
        }
      }
  REQUIRE(n[0] > 1000);
  REQUIRE(n[1] > 1000);
  for (int ch = 0; ch < 3; ++ch) {
    const double m0 = sum[0][ch] / n[0], m1 = sum[1][ch] / n[1];
    const double s0 = std::sqrt(sq[0][ch] / n[0] - m0 * m0);
    const double s1 = std::sqrt(sq[1][ch] / n[1] - m1 * m1);
    CHECK(std::abs(m0 - m1) < 1.0);
    CHECK(std::abs(s0 - s1) < 1.0);
  }
}

TEST_CASE("synthetic generation: degenerate config rejected") {
  SceneGrammarConfig g;
  CHECK_THROWS_AS(generate_synthetic_scenes(g, 1), ArgumentError);
}

TEST_CASE("image and label round trips") {
  const fs::path dir = temp_dir("roundtrip");
  std::mt19937_64 rng(17);
  SceneImage img = make_image(6, 5);
  for (auto& v : img.data) v = static_cast<double>(rng() % 256);
  save_image_ppm(img, dir / "img.ppm");
  const SceneImage back = load_image_ppm(dir / "img.ppm");
  CHECK(back.h == img.h);
  CHECK(back.w == img.w);
  CHECK(back.data == img.data);

  LabelMap lm;
  lm.h = 3;
  lm.w = 4;
  lm.labels = {0, 1, 2, 300, 4, 5, kUnlabeled, 7, 8, 9, 10, 11};
  save_labels_pgm(lm, dir / "lbl.pgm");
  const LabelMap lback = load_labels_pgm(dir / "lbl.pgm");
  CHECK(lback.labels == lm.labels);
}

TEST_CASE("split round trip preserves everything") {
  auto g = default_grammar();
  g.train_per_category = 2;
  g.test_per_category = 0;
  g.image_h = g.image_w = 16;
  const SynthResult data = generate_synthetic_scenes(g, 5);
  const fs::path dir = temp_dir("split");
  save_split(data.train, dir / "train.manifest", "train");
  const DatasetSplit back = load_split(dir / "train.manifest");
  REQUIRE(back.size() == data.train.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back.records[i].image.data == data.train.records[i].image.data);
    CHECK(back.records[i].labels.labels == data.train.records[i].labels.labels);
    CHECK(back.records[i].scene_id == data.train.records[i].scene_id);
  }
}

TEST_CASE("malformed files are rejected with record context") {
  const fs::path dir = temp_dir("malformed");
  {
    std::ofstream out(dir / "trunc.ppm", std::ios::binary);
    out << "P6\n8 8\n255\nxx";  // far fewer than 192 payload bytes
  }
  CHECK_THROWS_AS(load_image_ppm(dir / "trunc.ppm"), DataError);

  {
    std::ofstream out(dir / "bad.manifest");
    out << "missing_fields_only\n";
  }
  try {
    load_split(dir / "bad.manifest");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }

  // Label value >= |L| (and != sentinel) must fail validation when a class
  // count is supplied.
  LabelMap lm;
  lm.h = lm.w = 2;
  lm.labels = {0, 1, 2, 9};
  save_labels_pgm(lm, dir / "lbl.pgm");
  save_image_ppm(make_image(2, 2), dir / "img.ppm");
  {
    std::ofstream out(dir / "val.manifest");
    out << "img.ppm\tlbl.pgm\t0\n";
  }
  CHECK_NOTHROW(load_split(dir / "val.manifest"));
  CHECK_THROWS_AS(load_split(dir / "val.manifest", 3), DataError);
}

TEST_CASE("band jitter shifts whole band instances coherently") {
  SceneGrammarConfig g;
  g.classes = {{"a", {128, 128, 128}, 1.0}};
  g.classes[0].jitter = 30.0;
  g.categories = {{"only", {{0, 1.0}}}};
  g.image_h = g.image_w = 16;
  g.train_per_category = 40;
  g.test_per_category = 0;
  const SynthResult data = generate_synthetic_scenes(g, 21);
  // Per-image means should spread with sigma ~ jitter, far beyond the pixel
  // noise; within an image the spread stays at pixel-noise scale.
  double mean_of_means = 0;
  std::vector<double> means;
  for (const auto& rec : data.train.records) {
    double m = 0;
    for (double v : rec.image.data) m += v;
    m /= static_cast<double>(rec.image.data.size());
    means.push_back(m);
    mean_of_means += m;
  }
  mean_of_means /= static_cast<double>(means.size());
  double var = 0;
  for (double m : means) var += (m - mean_of_means) * (m - mean_of_means);
  var /= static_cast<double>(means.size());
  CHECK(std::sqrt(var) > 8.0);  // jitter 30/sqrt(3 channels averaged) >> 1
}
