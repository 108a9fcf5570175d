#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "pscene/sampler.hpp"
#include "pscene/types.hpp"

namespace pscene {

// Dense h x w x c activation block, row-major (row, col, channel).
struct Tensor {
  int h = 1, w = 1, c = 1;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_) * w_ * c_) {}
  double& at(int r, int col, int ch) { return v[(static_cast<size_t>(r) * w + col) * c + ch]; }
  double at(int r, int col, int ch) const {
    return v[(static_cast<size_t>(r) * w + col) * c + ch];
  }
  size_t size() const { return v.size(); }
};

enum class LayerKind : std::uint8_t { Conv, Relu, MaxPool, FC };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int kernel = 0;        // Conv: kernel side; MaxPool: window
  int channels_out = 0;  // Conv: output channels; FC: output width
  int stride = 1;        // Conv / MaxPool
};

// Layer sequence ending in a fully-connected classifier head; softmax is
// applied after the last FC layer. The activation feeding that last FC layer
// is the truncated-network feature (width feature_dim()).
struct NetworkSpec {
  int input_side = 17;
  int input_channels = 3;
  std::vector<LayerSpec> layers;

  int pool_count() const;
  int feature_stride() const;  // product of pool strides, 2^p for 2x2 pools
  int num_classes() const;
  int feature_dim() const;
  // Shape of the activation entering layer `i` (0 = network input).
  Tensor shape_at(int layer_index) const;
};

NetworkSpec desk_spec(int num_classes, int input_side = 17, int feature_dim = 16);
// Approximation of the paper-scale net: 65x65 input, 64-d features, 3 pools.
NetworkSpec full_spec(int num_classes);

struct LayerParams {
  std::vector<double> weights;
  std::vector<double> bias;
};

struct NetworkParams {
  std::vector<LayerParams> layers;     // empty entries for parameterless layers
  std::vector<LayerParams> momentum;   // same shapes, zero-initialized
};

using Gradients = std::vector<LayerParams>;

NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed);
Gradients zero_gradients(const NetworkSpec& spec);

struct ForwardCache {
  std::vector<Tensor> acts;          // acts[i] = input of layer i; back = logits
  std::vector<std::vector<int>> pool_argmax;  // per layer, flat source indices
};

// Runs the full network on one input; returns softmax class probabilities.
std::vector<double> forward(const NetworkSpec& spec, const NetworkParams& params,
                            const Tensor& input, ForwardCache* cache = nullptr);

// Truncated network: stops at the input of the final FC layer.
std::vector<double> forward_features(const NetworkSpec& spec, const NetworkParams& params,
                                     const Tensor& input, ForwardCache* cache = nullptr);

// Gradients of the cross-entropy loss of one sample (softmax at the head).
// `probs` is the forward() output for the cached input. Accumulates into
// `grads` scaled by `scale` (use 1/batch for batch means).
void backward(const NetworkSpec& spec, const NetworkParams& params, const ForwardCache& cache,
              const std::vector<double>& probs, int target, Gradients& grads, double scale = 1.0);

// Backpropagates an arbitrary gradient w.r.t. the truncated-network feature
// through the feature-extraction layers (used by metric fine-tuning).
void backward_from_feature(const NetworkSpec& spec, const NetworkParams& params,
                           const ForwardCache& cache, const std::vector<double>& dfeature,
                           Gradients& grads, double scale = 1.0);

struct TrainConfig {
  double learning_rate = 0.01;
  double decay_factor = 0.1;
  int decay_every = 20;  // epochs between decays
  double momentum = 0.9;
  int batch_size = 100;
  int epochs = 35;
  std::uint64_t seed = 0;
  // Optional per-class loss weights (inverse-frequency baseline). Empty =
  // unweighted.
  std::vector<double> class_weights;
};

double learning_rate_at(const TrainConfig& cfg, int epoch);

// v <- mu*v - lr*g ; w <- w + v
void sgd_step(const NetworkSpec& spec, NetworkParams& params, const Gradients& grads, double lr,
              double mu);

Tensor patch_to_tensor(const Patch& patch);

// Patch-classification training with per-epoch resampling.
NetworkParams train(const DatasetSplit& split, const PixelPools& pools,
                    const ClassFrequencyTable& table, const SamplingConfig& sampler,
                    const NetworkSpec& spec, const TrainConfig& cfg);

// Feature tensor F: one feature vector per stride cell of the image.
struct PixelFeatureMap {
  int grid_h = 0, grid_w = 0, dim = 0;
  std::vector<double> data;  // grid_h * grid_w * dim

  const double* cell(int r, int c) const {
    return data.data() + (static_cast<size_t>(r) * grid_w + c) * dim;
  }
};

// `image` must already be preprocessed. Cell (r,c) holds the truncated
// feature of the patch centered at (r*stride + stride/2, c*stride + stride/2)
// (clamped to the image).
PixelFeatureMap extract_features(const NetworkSpec& spec, const NetworkParams& params,
                                 const SceneImage& image);

void save_network(const NetworkSpec& spec, const NetworkParams& params,
                  const std::filesystem::path& path);
std::pair<NetworkSpec, NetworkParams> load_network(const std::filesystem::path& path);
void write_network(const NetworkSpec& spec, const NetworkParams& params, std::ostream& out);
std::pair<NetworkSpec, NetworkParams> read_network(std::istream& in);

}  // namespace pscene
