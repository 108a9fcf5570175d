#include "pscene/global_transfer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pscene/binio.hpp"
#include "pscene/scene_data.hpp"

namespace pscene {

GlobalFeature pool_global_feature(const PixelFeatureMap& features, const PyramidConfig& pyramid) {
  if (features.grid_h < 1 || features.grid_w < 1)
    throw ArgumentError("pool_global_feature: empty feature grid");
  const int d = features.dim;
  GlobalFeature out;
  out.reserve(static_cast<size_t>(pyramid.region_count()) * d);
  for (int g : pyramid.level_grids) {
    const int rows_per = std::max(features.grid_h / g, 1);
    const int cols_per = std::max(features.grid_w / g, 1);
    for (int gr = 0; gr < g; ++gr)
      for (int gc = 0; gc < g; ++gc) {
        const int r0 = std::min(gr * rows_per, features.grid_h - 1);
        const int r1 = (gr + 1 == g) ? features.grid_h : std::min((gr + 1) * rows_per,
                                                                  features.grid_h);
        const int c0 = std::min(gc * cols_per, features.grid_w - 1);
        const int c1 = (gc + 1 == g) ? features.grid_w : std::min((gc + 1) * cols_per,
                                                                  features.grid_w);
        std::vector<double> mean(d, 0.0);
        int count = 0;
        for (int r = r0; r < std::max(r1, r0 + 1); ++r)
          for (int c = c0; c < std::max(c1, c0 + 1); ++c) {
            const double* cell = features.cell(r, c);
            for (int i = 0; i < d; ++i) mean[i] += cell[i];
            ++count;
          }
        for (double& v : mean) v /= count;
        out.insert(out.end(), mean.begin(), mean.end());
      }
  }
  return out;
}

std::vector<ExemplarMatch> retrieve_exemplars(const GlobalFeature& query,
                                              const std::vector<GlobalFeature>& gallery,
                                              int size) {
  if (gallery.empty()) throw ArgumentError("retrieve_exemplars: empty gallery");
  if (size < 1 || size > static_cast<int>(gallery.size()))
    throw ArgumentError("retrieve_exemplars: size out of range");
  std::vector<ExemplarMatch> all(gallery.size());
  for (size_t i = 0; i < gallery.size(); ++i) {
    if (gallery[i].size() != query.size())
      throw ArgumentError("retrieve_exemplars: descriptor dimension mismatch");
    double d2 = 0.0;
    for (size_t j = 0; j < query.size(); ++j) {
      const double diff = query[j] - gallery[i][j];
      d2 += diff * diff;
    }
    all[i] = {static_cast<int>(i), std::sqrt(d2)};
  }
  std::sort(all.begin(), all.end(), [](const ExemplarMatch& a, const ExemplarMatch& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.image < b.image;
  });
  all.resize(size);
  return all;
}

double similarity(const std::vector<double>& feat_a, double z_a, const std::vector<double>& feat_b,
                  double z_b, const KernelParams& params, const MetricParams* metric) {
  if (feat_a.size() != feat_b.size()) throw ArgumentError("similarity: feature dim mismatch");
  double feat_dist;
  if (metric) {
    const Eigen::Map<const Eigen::VectorXd> a(feat_a.data(), feat_a.size());
    const Eigen::Map<const Eigen::VectorXd> b(feat_b.data(), feat_b.size());
    feat_dist = (metric->W * (a - b)).norm();
  } else {
    double d2 = 0.0;
    for (size_t i = 0; i < feat_a.size(); ++i) {
      const double diff = feat_a[i] - feat_b[i];
      d2 += diff * diff;
    }
    feat_dist = std::sqrt(d2);
  }
  return std::exp(-params.alpha * feat_dist) * std::exp(-params.gamma * std::abs(z_a - z_b));
}

std::vector<double> global_belief(const std::vector<double>& query_feature, double query_z,
                                  const std::vector<TransferPixel>& transfer_set, int class_count,
                                  int k, const KernelParams& params, const MetricParams* metric) {
  if (transfer_set.empty()) throw ArgumentError("global_belief: empty transfer set");
  Eigen::VectorXd wq;
  if (metric)
    wq = metric->W * Eigen::Map<const Eigen::VectorXd>(query_feature.data(),
                                                       query_feature.size());
  // Combined log-kernel distance, monotone with the weighting kernel.
  std::vector<double> dist(transfer_set.size());
  for (size_t i = 0; i < transfer_set.size(); ++i) {
    const TransferPixel& t = transfer_set[i];
    double feat_dist;
    if (metric) {
      const Eigen::Map<const Eigen::VectorXd> f(t.feature.data(), t.feature.size());
      feat_dist = (wq - metric->W * f).norm();
    } else {
      double d2 = 0.0;
      for (size_t j = 0; j < query_feature.size(); ++j) {
        const double diff = query_feature[j] - t.feature[j];
        d2 += diff * diff;
      }
      feat_dist = std::sqrt(d2);
    }
    dist[i] = params.alpha * feat_dist + params.gamma * std::abs(query_z - t.z);
  }

  const size_t kk = std::min<size_t>(k, transfer_set.size());
  std::vector<size_t> order(transfer_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + kk, order.end(), [&](size_t a, size_t b) {
    return dist[a] != dist[b] ? dist[a] < dist[b] : a < b;
  });

  std::vector<double> belief(class_count, 0.0);
  double total = 0.0;
  for (size_t i = 0; i < kk; ++i) {
    const size_t idx = order[i];
    const double w = std::exp(-dist[idx]);
    belief[transfer_set[idx].label] += w;
    total += w;
  }
  if (total > 0.0)
    for (double& v : belief) v /= total;
  return belief;
}

double knn_matching_score(const std::vector<GlobalFeature>& queries,
                          const std::vector<int>& query_scene_ids,
                          const std::vector<GlobalFeature>& gallery,
                          const std::vector<int>& gallery_scene_ids, int k) {
  if (queries.empty() || gallery.empty()) throw ArgumentError("knn_matching_score: empty input");
  std::int64_t genuine = 0;
  for (size_t i = 0; i < queries.size(); ++i) {
    const auto matches = retrieve_exemplars(queries[i], gallery, k);
    for (const auto& m : matches)
      if (gallery_scene_ids[m.image] == query_scene_ids[i]) ++genuine;
  }
  return static_cast<double>(genuine) / (static_cast<double>(queries.size()) * k);
}

std::vector<std::uint16_t> cell_majority_labels(const LabelMap& labels, int stride, int grid_h,
                                                int grid_w) {
  std::vector<std::uint16_t> out(static_cast<size_t>(grid_h) * grid_w, kUnlabeled);
  for (int gr = 0; gr < grid_h; ++gr)
    for (int gc = 0; gc < grid_w; ++gc) {
      std::vector<int> counts;
      int unlabeled = 0;
      const int r1 = std::min((gr + 1) * stride, labels.h);
      const int c1 = std::min((gc + 1) * stride, labels.w);
      for (int r = gr * stride; r < r1; ++r)
        for (int c = gc * stride; c < c1; ++c) {
          const std::uint16_t l = labels.at(r, c);
          if (l == kUnlabeled) {
            ++unlabeled;
          } else {
            if (l >= counts.size()) counts.resize(l + 1, 0);
            ++counts[l];
          }
        }
      int best = -1, best_count = 0;
      for (size_t c = 0; c < counts.size(); ++c)
        if (counts[c] > best_count) {
          best_count = counts[c];
          best = static_cast<int>(c);
        }
      // Sentinel wins only when strictly dominant.
      if (best >= 0 && unlabeled <= best_count) out[static_cast<size_t>(gr) * grid_w + gc] =
          static_cast<std::uint16_t>(best);
    }
  return out;
}

TransferIndex build_index(const DatasetSplit& split, const NetworkSpec& spec,
                          const NetworkParams& params, const PyramidConfig& pyramid,
                          int class_count) {
  if (split.empty()) throw ArgumentError("build_index: empty split");
  TransferIndex index;
  index.class_count = class_count;
  index.pyramid = pyramid;
  index.class_frequencies = compute_class_frequencies(split, class_count).frequencies;
  const int stride = spec.feature_stride();
  for (const auto& rec : split.records) {
    IndexImage img;
    img.scene_id = rec.scene_id;
    img.features = extract_features(spec, params, preprocess(rec.image));
    img.descriptor = pool_global_feature(img.features, pyramid);
    img.cell_labels =
        cell_majority_labels(rec.labels, stride, img.features.grid_h, img.features.grid_w);
    img.cell_z.resize(img.cell_labels.size());
    for (int r = 0; r < img.features.grid_h; ++r)
      for (int c = 0; c < img.features.grid_w; ++c)
        img.cell_z[static_cast<size_t>(r) * img.features.grid_w + c] =
            (r + 0.5) / img.features.grid_h;
    index.images.push_back(std::move(img));
  }
  return index;
}

namespace {

TransferPixel make_transfer_pixel(const IndexImage& img, int image_id, int r, int c) {
  TransferPixel t;
  t.source_image = image_id;
  t.cell_r = r;
  t.cell_c = c;
  const double* f = img.features.cell(r, c);
  t.feature.assign(f, f + img.features.dim);
  t.z = img.cell_z[static_cast<size_t>(r) * img.features.grid_w + c];
  t.label = img.cell_labels[static_cast<size_t>(r) * img.features.grid_w + c];
  return t;
}

}  // namespace

std::vector<TransferPixel> build_transfer_set(const TransferIndex& index,
                                              const std::vector<int>& exemplar_ids, int k,
                                              double eta, std::mt19937_64& rng,
                                              std::vector<int>* deficient) {
  if (k < 1) throw ArgumentError("build_transfer_set: K must be >= 1");
  std::vector<bool> in_exemplars(index.images.size(), false);
  for (int id : exemplar_ids) in_exemplars[id] = true;

  std::vector<TransferPixel> transfer;
  std::vector<std::int64_t> counts(index.class_count, 0);
  for (int id : exemplar_ids) {
    const IndexImage& img = index.images[id];
    for (int r = 0; r < img.features.grid_h; ++r)
      for (int c = 0; c < img.features.grid_w; ++c) {
        const std::uint16_t l = img.cell_labels[static_cast<size_t>(r) * img.features.grid_w + c];
        if (l == kUnlabeled) continue;
        transfer.push_back(make_transfer_pixel(img, id, r, c));
        ++counts[l];
      }
  }

  // Rare classes by pixel frequency of the indexed split.
  for (int c = 0; c < index.class_count; ++c) {
    if (index.class_frequencies[c] > eta || counts[c] >= k) continue;
    // Candidate cells outside the exemplar set.
    std::vector<std::pair<int, int>> pool;  // (image id, flat cell)
    for (size_t id = 0; id < index.images.size(); ++id) {
      if (in_exemplars[id]) continue;
      const IndexImage& img = index.images[id];
      for (size_t cell = 0; cell < img.cell_labels.size(); ++cell)
        if (img.cell_labels[cell] == c) pool.emplace_back(static_cast<int>(id),
                                                          static_cast<int>(cell));
    }
    if (pool.empty()) {
      if (counts[c] == 0 && deficient) deficient->push_back(c);
      continue;
    }
    std::uniform_int_distribution<size_t> d(0, pool.size() - 1);
    while (counts[c] < k) {
      const auto [id, cell] = pool[d(rng)];
      const IndexImage& img = index.images[id];
      transfer.push_back(make_transfer_pixel(img, id, cell / img.features.grid_w,
                                             cell % img.features.grid_w));
      ++counts[c];
    }
  }
  return transfer;
}

BeliefMap global_belief_map(const TransferIndex& index, const PixelFeatureMap& query,
                            const GlobalTransferConfig& cfg, const MetricParams* metric) {
  std::vector<GlobalFeature> gallery;
  gallery.reserve(index.images.size());
  for (const auto& img : index.images) gallery.push_back(img.descriptor);
  const GlobalFeature descriptor = pool_global_feature(query, index.pyramid);
  const int size = std::min<int>(cfg.exemplar_count, static_cast<int>(gallery.size()));
  const auto matches = retrieve_exemplars(descriptor, gallery, size);
  std::vector<int> exemplar_ids;
  for (const auto& m : matches) exemplar_ids.push_back(m.image);

  std::mt19937_64 rng(cfg.seed);
  const auto transfer = build_transfer_set(index, exemplar_ids, cfg.k, cfg.eta, rng);

  BeliefMap map;
  map.grid_h = query.grid_h;
  map.grid_w = query.grid_w;
  map.classes = index.class_count;
  map.data.resize(static_cast<size_t>(map.grid_h) * map.grid_w * map.classes);
  std::vector<double> feature(query.dim);
  for (int r = 0; r < map.grid_h; ++r) {
    const double z = (r + 0.5) / map.grid_h;
    for (int c = 0; c < map.grid_w; ++c) {
      const double* f = query.cell(r, c);
      feature.assign(f, f + query.dim);
      const auto belief =
          global_belief(feature, z, transfer, index.class_count, cfg.k, cfg.kernel, metric);
      std::copy(belief.begin(), belief.end(), map.cell(r, c));
    }
  }
  return map;
}

// --------------------------------------------------------------------------
// Index file ("PIDX")
// --------------------------------------------------------------------------

namespace {
constexpr char kIdxMagic[4] = {'P', 'I', 'D', 'X'};
constexpr std::uint32_t kIdxVersion = 1;
}  // namespace

void save_index(const TransferIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  binio::write_magic(out, kIdxMagic);
  binio::write_u32(out, kIdxVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(index.class_count));
  binio::write_f64_vec(out, index.class_frequencies);
  binio::write_u32(out, static_cast<std::uint32_t>(index.pyramid.level_grids.size()));
  for (int g : index.pyramid.level_grids) binio::write_u32(out, static_cast<std::uint32_t>(g));
  binio::write_u32(out, static_cast<std::uint32_t>(index.images.size()));
  for (const auto& img : index.images) {
    binio::write_i64(out, img.scene_id);
    binio::write_f64_vec(out, img.descriptor);
    binio::write_u32(out, static_cast<std::uint32_t>(img.features.grid_h));
    binio::write_u32(out, static_cast<std::uint32_t>(img.features.grid_w));
    binio::write_u32(out, static_cast<std::uint32_t>(img.features.dim));
    binio::write_f64_vec(out, img.features.data);
    binio::write_u16_vec(out, img.cell_labels);
    binio::write_f64_vec(out, img.cell_z);
  }
  if (!out) throw DataError("write failed: " + path.string());
}

TransferIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  binio::expect_magic(in, kIdxMagic, "PIDX");
  binio::expect_version(in, kIdxVersion, "PIDX");
  TransferIndex index;
  index.class_count = static_cast<int>(binio::read_u32(in, "class count"));
  index.class_frequencies = binio::read_f64_vec(in, "class frequencies");
  index.pyramid.level_grids.clear();
  const std::uint32_t levels = binio::read_u32(in, "pyramid levels");
  for (std::uint32_t i = 0; i < levels; ++i)
    index.pyramid.level_grids.push_back(static_cast<int>(binio::read_u32(in, "level grid")));
  const std::uint32_t n = binio::read_u32(in, "image count");
  for (std::uint32_t i = 0; i < n; ++i) {
    IndexImage img;
    img.scene_id = static_cast<int>(binio::read_i64(in, "scene id"));
    img.descriptor = binio::read_f64_vec(in, "descriptor");
    img.features.grid_h = static_cast<int>(binio::read_u32(in, "grid h"));
    img.features.grid_w = static_cast<int>(binio::read_u32(in, "grid w"));
    img.features.dim = static_cast<int>(binio::read_u32(in, "feature dim"));
    img.features.data = binio::read_f64_vec(in, "cell features");
    img.cell_labels = binio::read_u16_vec(in, "cell labels");
    img.cell_z = binio::read_f64_vec(in, "cell heights");
    const size_t cells = static_cast<size_t>(img.features.grid_h) * img.features.grid_w;
    if (img.cell_labels.size() != cells || img.cell_z.size() != cells ||
        img.features.data.size() != cells * img.features.dim)
      throw DataError("index image " + std::to_string(i) + " has inconsistent dimensions");
    index.images.push_back(std::move(img));
  }
  return index;
}

}  // namespace pscene
