#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pscene {

// Sentinel label for pixels without ground-truth annotation.
inline constexpr std::uint16_t kUnlabeled = 65535;

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed files, header/version mismatches, truncated records.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ClassCatalog {
  std::vector<std::string> names;

  int count() const { return static_cast<int>(names.size()); }
  bool valid_class(std::uint16_t id) const {
    return id < names.size();
  }
};

// RGB raster, row-major (row, col, channel). Values are raw intensities
// in [0,255] as loaded; preprocess() produces the zero-mean/unit-variance
// version consumed by the networks.
struct SceneImage {
  int h = 0;
  int w = 0;
  std::vector<double> data;  // size h*w*3

  double& at(int r, int c, int ch) { return data[(static_cast<size_t>(r) * w + c) * 3 + ch]; }
  double at(int r, int c, int ch) const { return data[(static_cast<size_t>(r) * w + c) * 3 + ch]; }
};

struct LabelMap {
  int h = 0;
  int w = 0;
  std::vector<std::uint16_t> labels;  // size h*w, kUnlabeled allowed

  std::uint16_t& at(int r, int c) { return labels[static_cast<size_t>(r) * w + c]; }
  std::uint16_t at(int r, int c) const { return labels[static_cast<size_t>(r) * w + c]; }
};

struct SceneRecord {
  SceneImage image;
  LabelMap labels;
  int scene_id = -1;  // -1 when unknown
};

struct DatasetSplit {
  std::vector<SceneRecord> records;

  bool empty() const { return records.empty(); }
  size_t size() const { return records.size(); }
};

struct ClassFrequencyTable {
  std::vector<std::int64_t> counts;      // per class id
  std::vector<double> frequencies;       // normalized over labeled pixels
  std::int64_t labeled_total = 0;

  int class_count() const { return static_cast<int>(counts.size()); }
};

// Grid of per-cell class distributions at feature-map geometry. Used for
// local, per-member, and global beliefs alike.
struct BeliefMap {
  int grid_h = 0, grid_w = 0, classes = 0;
  std::vector<double> data;  // grid_h * grid_w * classes

  double* cell(int r, int c) {
    return data.data() + (static_cast<size_t>(r) * grid_w + c) * classes;
  }
  const double* cell(int r, int c) const {
    return data.data() + (static_cast<size_t>(r) * grid_w + c) * classes;
  }
};

// Square odd-sided crop centered on a source pixel.
struct Patch {
  int side = 0;
  int center_row = 0;
  int center_col = 0;
  std::vector<double> values;  // side*side*3, same layout as SceneImage

  double at(int r, int c, int ch) const {
    return values[(static_cast<size_t>(r) * side + c) * 3 + ch];
  }
};

}  // namespace pscene
