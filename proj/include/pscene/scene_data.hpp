#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pscene/types.hpp"

namespace pscene {

// Per-image global normalization: subtract the mean, divide by the standard
// deviation, computed jointly over all channels. A constant image maps to
// all zeros.
SceneImage preprocess(const SceneImage& img);

ClassFrequencyTable compute_class_frequencies(const DatasetSplit& split, int class_count);

// Crop of `side` x `side` centered at (row, col). Coordinates falling outside
// the image are mirror-reflected at the edges, so every emitted value equals
// some in-bounds pixel value.
Patch extract_patch(const SceneImage& img, int row, int col, int side);

// ---------------------------------------------------------------------------
// Synthetic scene grammar.
//
// A scene category is a stack of horizontal bands, each filled with one
// class. Classes draw their pixel values from a per-class palette (mean RGB
// plus i.i.d. Gaussian noise), so two classes given the same palette entry
// are locally indistinguishable and can only be told apart through the
// scene category they occur in. Rare "blob" classes are sprinkled as small
// rectangles with a configurable per-image probability, which is how heavy
// class imbalance is produced.
// ---------------------------------------------------------------------------

struct ClassPalette {
  std::string name;
  double mean[3] = {128, 128, 128};
  double sigma = 8.0;   // per-pixel noise std dev
  double jitter = 0.0;  // per-region color offset std dev (correlated across a
                        // whole band/blob instance, so it survives patch
                        // averaging and controls class overlap directly)
};

struct Band {
  int class_id = 0;
  double fraction = 1.0;  // share of image height; fractions are normalized
};

struct SceneCategoryConfig {
  std::string name;
  std::vector<Band> bands;
};

struct BlobConfig {
  int class_id = 0;
  double prob_per_image = 0.0;  // probability a given image carries one blob
  int side = 4;                 // blob square side, pixels
  int min_band = 0;             // vertical placement restricted to these bands
  int max_band = -1;            // -1 = any
};

struct SceneGrammarConfig {
  std::vector<ClassPalette> classes;
  std::vector<SceneCategoryConfig> categories;
  std::vector<BlobConfig> blobs;
  int image_h = 48;
  int image_w = 48;
  int train_per_category = 12;
  int test_per_category = 4;
  double unlabeled_fraction = 0.0;  // fraction of pixels masked to the sentinel
};

// Default grammar: three categories (coast / street / inlet) over seven
// classes. "sand" and "road" share a palette entry (the ambiguous pair);
// coast and inlet share class composition but differ in band order, which
// defeats orderless color histograms; "marker" is a rare blob class.
SceneGrammarConfig default_grammar();

struct SynthResult {
  DatasetSplit train;
  DatasetSplit test;
};

SynthResult generate_synthetic_scenes(const SceneGrammarConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// On-disk formats. Images are 8-bit binary PPM ("P6"); label maps are 16-bit
// binary PGM ("P5", maxval 65535, big-endian samples) with 65535 reserved
// for unlabeled pixels. A split manifest is UTF-8 text, one record per line:
//   image-path TAB label-path TAB scene-id
// Relative paths are resolved against the manifest's directory.
// ---------------------------------------------------------------------------

void save_image_ppm(const SceneImage& img, const std::filesystem::path& path);
SceneImage load_image_ppm(const std::filesystem::path& path);
void save_labels_pgm(const LabelMap& labels, const std::filesystem::path& path);
LabelMap load_labels_pgm(const std::filesystem::path& path);

void save_split(const DatasetSplit& split, const std::filesystem::path& manifest_path,
                const std::string& stem);
DatasetSplit load_split(const std::filesystem::path& manifest_path, int class_count = -1);

}  // namespace pscene
