#include "pscene/scene_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pscene {

SceneImage preprocess(const SceneImage& img) {
  SceneImage out = img;
  const size_t n = out.data.size();
  if (n == 0) return out;
  double mean = 0.0;
  for (double v : out.data) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : out.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  if (sd < 1e-12) {
    for (double& v : out.data) v = 0.0;
  } else {
    for (double& v : out.data) v = (v - mean) / sd;
  }
  return out;
}

ClassFrequencyTable compute_class_frequencies(const DatasetSplit& split, int class_count) {
  if (split.empty()) throw ArgumentError("compute_class_frequencies: empty split");
  ClassFrequencyTable table;
  table.counts.assign(class_count, 0);
  for (const auto& rec : split.records) {
    for (std::uint16_t l : rec.labels.labels) {
      if (l == kUnlabeled) continue;
      if (l >= table.counts.size())
        throw DataError("label id " + std::to_string(l) + " outside catalog");
      ++table.counts[l];
      ++table.labeled_total;
    }
  }
  if (table.labeled_total == 0) throw DataError("split has zero labeled pixels");
  table.frequencies.resize(class_count);
  for (int c = 0; c < class_count; ++c)
    table.frequencies[c] =
        static_cast<double>(table.counts[c]) / static_cast<double>(table.labeled_total);
  return table;
}

namespace {

// Mirror reflection of index i into [0, n). Repeated fold handles patches
// wider than the image.
int mirror_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

}  // namespace

Patch extract_patch(const SceneImage& img, int row, int col, int side) {
  if (side <= 0 || side % 2 == 0) throw ArgumentError("patch side must be odd and positive");
  if (row < 0 || row >= img.h || col < 0 || col >= img.w)
    throw ArgumentError("patch center outside image");
  Patch p;
  p.side = side;
  p.center_row = row;
  p.center_col = col;
  p.values.resize(static_cast<size_t>(side) * side * 3);
  const int half = side / 2;
  size_t idx = 0;
  for (int r = row - half; r <= row + half; ++r) {
    const int rr = mirror_index(r, img.h);
    for (int c = col - half; c <= col + half; ++c) {
      const int cc = mirror_index(c, img.w);
      for (int ch = 0; ch < 3; ++ch) p.values[idx++] = img.at(rr, cc, ch);
    }
  }
  return p;
}

// --------------------------------------------------------------------------
// Synthetic generation
// --------------------------------------------------------------------------

SceneGrammarConfig default_grammar() {
  SceneGrammarConfig g;
  g.classes = {
      {"sky", {150, 190, 230}, 8},   {"water", {40, 70, 160}, 8},
      {"sand", {200, 180, 120}, 8},  {"road", {200, 180, 120}, 8},  // same palette as sand
      {"building", {120, 120, 120}, 8}, {"tree", {40, 130, 50}, 8},
      {"marker", {220, 40, 40}, 8},
  };
  g.categories = {
      {"coast", {{0, 0.34}, {1, 0.33}, {2, 0.33}}},
      {"street", {{0, 0.34}, {4, 0.33}, {3, 0.33}}},
      {"inlet", {{1, 0.34}, {0, 0.33}, {2, 0.33}}},
  };
  g.blobs = {{6, 0.25, 4, 1, 2}};
  return g;
}

namespace {

struct BandLayout {
  std::vector<int> row_class;  // per image row, class id
  std::vector<int> row_band;   // per image row, band index
};

BandLayout band_layout(const SceneCategoryConfig& cat, int h) {
  double total = 0;
  for (const auto& b : cat.bands) total += b.fraction;
  BandLayout lay;
  lay.row_class.resize(h);
  lay.row_band.resize(h);
  double acc = 0;
  int start = 0;
  for (size_t bi = 0; bi < cat.bands.size(); ++bi) {
    acc += cat.bands[bi].fraction;
    int end = (bi + 1 == cat.bands.size()) ? h
                                           : static_cast<int>(std::lround(acc / total * h));
    end = std::clamp(end, start, h);
    for (int r = start; r < end; ++r) {
      lay.row_class[r] = cat.bands[bi].class_id;
      lay.row_band[r] = static_cast<int>(bi);
    }
    start = end;
  }
  return lay;
}

SceneRecord make_scene(const SceneGrammarConfig& cfg, int category, std::mt19937_64& rng) {
  const auto& cat = cfg.categories[category];
  const int h = cfg.image_h, w = cfg.image_w;
  SceneRecord rec;
  rec.scene_id = category;
  rec.image.h = h;
  rec.image.w = w;
  rec.image.data.resize(static_cast<size_t>(h) * w * 3);
  rec.labels.h = h;
  rec.labels.w = w;
  rec.labels.labels.resize(static_cast<size_t>(h) * w);

  const BandLayout lay = band_layout(cat, h);
  std::normal_distribution<double> noise(0.0, 1.0);

  // One color offset per band instance; all its pixels share it.
  std::vector<std::array<double, 3>> band_offset(cat.bands.size(), {0, 0, 0});
  for (size_t bi = 0; bi < cat.bands.size(); ++bi) {
    const auto& pal = cfg.classes[cat.bands[bi].class_id];
    for (int ch = 0; ch < 3; ++ch)
      if (pal.jitter > 0) band_offset[bi][ch] = pal.jitter * noise(rng);
  }

  for (int r = 0; r < h; ++r) {
    const auto& pal = cfg.classes[lay.row_class[r]];
    const auto& off = band_offset[lay.row_band[r]];
    for (int c = 0; c < w; ++c) {
      rec.labels.at(r, c) = static_cast<std::uint16_t>(lay.row_class[r]);
      for (int ch = 0; ch < 3; ++ch) {
        double v = pal.mean[ch] + off[ch] + pal.sigma * noise(rng);
        rec.image.at(r, c, ch) = std::clamp(v, 0.0, 255.0);
      }
    }
  }

  // Rare blobs.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& blob : cfg.blobs) {
    if (unit(rng) >= blob.prob_per_image) continue;
    int lo = 0, hi = h - blob.side;
    if (blob.min_band >= 0 || blob.max_band >= 0) {
      lo = h;
      hi = -1;
      const int bmax = blob.max_band < 0 ? 1 << 30 : blob.max_band;
      for (int r = 0; r + blob.side <= h; ++r) {
        if (lay.row_band[r] >= blob.min_band && lay.row_band[r + blob.side - 1] <= bmax) {
          lo = std::min(lo, r);
          hi = std::max(hi, r);
        }
      }
    }
    if (hi < lo) continue;
    std::uniform_int_distribution<int> row_d(lo, hi), col_d(0, w - blob.side);
    const int r0 = row_d(rng), c0 = col_d(rng);
    const auto& pal = cfg.classes[blob.class_id];
    std::array<double, 3> off = {0, 0, 0};
    for (int ch = 0; ch < 3; ++ch)
      if (pal.jitter > 0) off[ch] = pal.jitter * noise(rng);
    for (int r = r0; r < r0 + blob.side; ++r)
      for (int c = c0; c < c0 + blob.side; ++c) {
        rec.labels.at(r, c) = static_cast<std::uint16_t>(blob.class_id);
        for (int ch = 0; ch < 3; ++ch)
          rec.image.at(r, c, ch) =
              std::clamp(pal.mean[ch] + off[ch] + pal.sigma * noise(rng), 0.0, 255.0);
      }
  }

  if (cfg.unlabeled_fraction > 0) {
    for (auto& l : rec.labels.labels)
      if (unit(rng) < cfg.unlabeled_fraction) l = kUnlabeled;
  }

  // Quantize to the 8-bit grid so a save/load round trip is lossless.
  for (double& v : rec.image.data) v = std::floor(v + 0.5);
  return rec;
}

}  // namespace

SynthResult generate_synthetic_scenes(const SceneGrammarConfig& config, std::uint64_t seed) {
  if (config.classes.empty() || config.categories.empty())
    throw ArgumentError("scene grammar needs at least one class and one category");
  for (const auto& cat : config.categories) {
    if (cat.bands.empty()) throw ArgumentError("category '" + cat.name + "' has no bands");
    for (const auto& b : cat.bands)
      if (b.class_id < 0 || b.class_id >= static_cast<int>(config.classes.size()))
        throw ArgumentError("band class id out of range");
  }
  std::mt19937_64 rng(seed);
  SynthResult out;
  for (size_t cat = 0; cat < config.categories.size(); ++cat)
    for (int i = 0; i < config.train_per_category; ++i)
      out.train.records.push_back(make_scene(config, static_cast<int>(cat), rng));
  for (size_t cat = 0; cat < config.categories.size(); ++cat)
    for (int i = 0; i < config.test_per_category; ++i)
      out.test.records.push_back(make_scene(config, static_cast<int>(cat), rng));
  return out;
}

// --------------------------------------------------------------------------
// File formats
// --------------------------------------------------------------------------

namespace {

void skip_pnm_space(std::istream& in) {
  int c;
  while ((c = in.peek()) != EOF) {
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
}

long read_pnm_int(std::istream& in, const std::string& what) {
  skip_pnm_space(in);
  long v = -1;
  if (!(in >> v) || v < 0) throw DataError("malformed PNM header: " + what);
  return v;
}

}  // namespace

void save_image_ppm(const SceneImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> buf(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i)
    buf[i] = static_cast<unsigned char>(std::clamp(std::lround(img.data[i]), 0L, 255L));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

SceneImage load_image_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw DataError("not a P6 image: " + path.string());
  const long w = read_pnm_int(in, "width");
  const long h = read_pnm_int(in, "height");
  const long maxval = read_pnm_int(in, "maxval");
  if (maxval != 255) throw DataError("expected maxval 255: " + path.string());
  in.get();  // single whitespace after header
  SceneImage img;
  img.h = static_cast<int>(h);
  img.w = static_cast<int>(w);
  std::vector<unsigned char> buf(static_cast<size_t>(h) * w * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw DataError("truncated image data: " + path.string());
  img.data.assign(buf.begin(), buf.end());
  return img;
}

void save_labels_pgm(const LabelMap& labels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "P5\n" << labels.w << " " << labels.h << "\n65535\n";
  std::vector<unsigned char> buf;
  buf.reserve(labels.labels.size() * 2);
  for (std::uint16_t l : labels.labels) {  // big-endian per PNM convention
    buf.push_back(static_cast<unsigned char>(l >> 8));
    buf.push_back(static_cast<unsigned char>(l & 0xff));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

LabelMap load_labels_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw DataError("not a P5 label map: " + path.string());
  const long w = read_pnm_int(in, "width");
  const long h = read_pnm_int(in, "height");
  const long maxval = read_pnm_int(in, "maxval");
  if (maxval != 65535) throw DataError("expected maxval 65535: " + path.string());
  in.get();
  LabelMap lm;
  lm.h = static_cast<int>(h);
  lm.w = static_cast<int>(w);
  std::vector<unsigned char> buf(static_cast<size_t>(h) * w * 2);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw DataError("truncated label data: " + path.string());
  lm.labels.resize(static_cast<size_t>(h) * w);
  for (size_t i = 0; i < lm.labels.size(); ++i)
    lm.labels[i] = static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
  return lm;
}

void save_split(const DatasetSplit& split, const std::filesystem::path& manifest_path,
                const std::string& stem) {
  const auto dir = manifest_path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream manifest(manifest_path);
  if (!manifest) throw DataError("cannot open for writing: " + manifest_path.string());
  char name[64];
  for (size_t i = 0; i < split.records.size(); ++i) {
    std::snprintf(name, sizeof(name), "%s_%04zu", stem.c_str(), i);
    const std::string img_rel = std::string(name) + ".ppm";
    const std::string lbl_rel = std::string(name) + ".pgm";
    save_image_ppm(split.records[i].image, dir / img_rel);
    save_labels_pgm(split.records[i].labels, dir / lbl_rel);
    manifest << img_rel << '\t' << lbl_rel << '\t' << split.records[i].scene_id << '\n';
  }
  if (!manifest) throw DataError("write failed: " + manifest_path.string());
}

DatasetSplit load_split(const std::filesystem::path& manifest_path, int class_count) {
  std::ifstream manifest(manifest_path);
  if (!manifest) throw DataError("cannot open manifest: " + manifest_path.string());
  const auto dir = manifest_path.parent_path();
  DatasetSplit split;
  std::string line;
  int line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string img_rel, lbl_rel, scene;
    if (!std::getline(ss, img_rel, '\t') || !std::getline(ss, lbl_rel, '\t') ||
        !std::getline(ss, scene, '\t'))
      throw DataError("malformed manifest record at line " + std::to_string(line_no) + " of " +
                      manifest_path.string());
    SceneRecord rec;
    rec.image = load_image_ppm(dir / img_rel);
    rec.labels = load_labels_pgm(dir / lbl_rel);
    rec.scene_id = std::stoi(scene);
    if (rec.image.h != rec.labels.h || rec.image.w != rec.labels.w)
      throw DataError("image/label dimension mismatch at line " + std::to_string(line_no));
    if (class_count >= 0) {
      for (std::uint16_t l : rec.labels.labels)
        if (l != kUnlabeled && l >= class_count)
          throw DataError("label id " + std::to_string(l) + " out of range at line " +
                          std::to_string(line_no));
    }
    split.records.push_back(std::move(rec));
  }
  return split;
}

}  // namespace pscene
