#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "pscene/convnet.hpp"
#include "pscene/metric.hpp"
#include "pscene/types.hpp"

namespace pscene {

// Spatial pyramid: per-level square grid sizes. Default {1, 2} gives
// J = 1 + 4 = 5 regions and a descriptor of dimension 5*d.
struct PyramidConfig {
  std::vector<int> level_grids = {1, 2};

  int region_count() const {
    int j = 0;
    for (int g : level_grids) j += g * g;
    return j;
  }
};

using GlobalFeature = std::vector<double>;

// Average-pools the feature grid region-wise and concatenates level by
// level, row-major within a level. Regions split the grid into even index
// ranges; the remainder goes to the last region of a row/column.
GlobalFeature pool_global_feature(const PixelFeatureMap& features, const PyramidConfig& pyramid);

struct ExemplarMatch {
  int image = 0;
  double distance = 0.0;
};

// Exhaustive Euclidean scan; ties broken by ascending image index.
std::vector<ExemplarMatch> retrieve_exemplars(const GlobalFeature& query,
                                              const std::vector<GlobalFeature>& gallery,
                                              int size);

struct TransferPixel {
  int source_image = -1;
  int cell_r = 0, cell_c = 0;
  std::vector<double> feature;  // d-dim
  double z = 0.0;               // normalized height coordinate in [0,1]
  std::uint16_t label = 0;
};

struct KernelParams {
  double alpha = 15.0;  // feature falloff
  double gamma = 5.0;   // spatial falloff
};

// exp(-alpha ||xa-xb||) * exp(-gamma |za-zb|); features pass through W first
// when a metric is supplied.
double similarity(const std::vector<double>& feat_a, double z_a, const std::vector<double>& feat_b,
                  double z_b, const KernelParams& params, const MetricParams* metric = nullptr);

// Kernel-weighted vote of the K nearest transfer pixels. Nearest is by the
// combined log-kernel distance alpha*||dx|| + gamma*|dz| (monotone in the
// weight); ties keep transfer-set order.
std::vector<double> global_belief(const std::vector<double>& query_feature, double query_z,
                                  const std::vector<TransferPixel>& transfer_set, int class_count,
                                  int k, const KernelParams& params,
                                  const MetricParams* metric = nullptr);

// Average genuine matching percentage among the K nearest gallery neighbors
// of each query; a genuine match shares the query's scene id.
double knn_matching_score(const std::vector<GlobalFeature>& queries,
                          const std::vector<int>& query_scene_ids,
                          const std::vector<GlobalFeature>& gallery,
                          const std::vector<int>& gallery_scene_ids, int k);

// ---------------------------------------------------------------------------
// Retrieval index: everything the parse stage needs from the training split.
// Cell labels are the majority pixel label of each stride block (ties to the
// lowest class id); cells dominated by unlabeled pixels carry the sentinel
// and never enter transfer sets.
// ---------------------------------------------------------------------------

struct IndexImage {
  int scene_id = -1;
  GlobalFeature descriptor;
  PixelFeatureMap features;
  std::vector<std::uint16_t> cell_labels;  // grid_h * grid_w
  std::vector<double> cell_z;              // grid_h * grid_w
};

struct TransferIndex {
  int class_count = 0;
  std::vector<double> class_frequencies;  // pixel frequencies of the indexed split
  PyramidConfig pyramid;
  std::vector<IndexImage> images;
};

TransferIndex build_index(const DatasetSplit& split, const NetworkSpec& spec,
                          const NetworkParams& params, const PyramidConfig& pyramid,
                          int class_count);

std::vector<std::uint16_t> cell_majority_labels(const LabelMap& labels, int stride, int grid_h,
                                                int grid_w);

struct GlobalTransferConfig {
  int exemplar_count = 5;  // |S(X)|
  int k = 200;             // transfer neighbors / rare-class floor
  KernelParams kernel;
  double eta = 0.05;       // rarity threshold over index frequencies
  std::uint64_t seed = 0;  // auxiliary-set sampling
};

// Union of all exemplar cells with the auxiliary set A(X): every rare class
// present anywhere in the index reaches at least K candidates, drawn
// uniformly from that class's cells outside the exemplar images. Classes
// with no instances anywhere are reported in `deficient` and left short.
std::vector<TransferPixel> build_transfer_set(const TransferIndex& index,
                                              const std::vector<int>& exemplar_ids, int k,
                                              double eta, std::mt19937_64& rng,
                                              std::vector<int>* deficient = nullptr);

// Full global-labeling path for one query image's feature map.
BeliefMap global_belief_map(const TransferIndex& index, const PixelFeatureMap& query,
                            const GlobalTransferConfig& cfg,
                            const MetricParams* metric = nullptr);

void save_index(const TransferIndex& index, const std::filesystem::path& path);
TransferIndex load_index(const std::filesystem::path& path);

}  // namespace pscene
