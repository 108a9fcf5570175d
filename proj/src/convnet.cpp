#include "pscene/convnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pscene/binio.hpp"
#include "pscene/scene_data.hpp"

namespace pscene {

namespace {

struct Shape {
  int h = 1, w = 1, c = 1;
  int flat() const { return h * w * c; }
};

int conv_out(int in, int k, int s) { return (in - k) / s + 1; }

// Ceil-mode pooling: partial windows at the bottom/right edges are kept, so
// a 2x2/2 pool maps n to ceil(n/2).
int pool_out(int in, int k, int s) { return (std::max(in - k, 0) + s - 1) / s + 1; }

Shape layer_out_shape(const LayerSpec& l, const Shape& in) {
  switch (l.kind) {
    case LayerKind::Conv: {
      const int oh = conv_out(in.h, l.kernel, l.stride);
      const int ow = conv_out(in.w, l.kernel, l.stride);
      if (oh < 1 || ow < 1) throw ArgumentError("conv layer shrinks input below 1x1");
      return {oh, ow, l.channels_out};
    }
    case LayerKind::Relu:
      return in;
    case LayerKind::MaxPool:
      return {pool_out(in.h, l.kernel, l.stride), pool_out(in.w, l.kernel, l.stride), in.c};
    case LayerKind::FC:
      return {1, 1, l.channels_out};
  }
  throw ArgumentError("unknown layer kind");
}

std::vector<Shape> all_shapes(const NetworkSpec& spec) {
  std::vector<Shape> shapes;
  shapes.push_back({spec.input_side, spec.input_side, spec.input_channels});
  for (const auto& l : spec.layers) shapes.push_back(layer_out_shape(l, shapes.back()));
  return shapes;
}

int last_fc_index(const NetworkSpec& spec) {
  for (int i = static_cast<int>(spec.layers.size()) - 1; i >= 0; --i)
    if (spec.layers[i].kind == LayerKind::FC) return i;
  throw ArgumentError("network has no fully-connected head");
}

}  // namespace

int NetworkSpec::pool_count() const {
  int p = 0;
  for (const auto& l : layers)
    if (l.kind == LayerKind::MaxPool) ++p;
  return p;
}

int NetworkSpec::feature_stride() const {
  int s = 1;
  for (const auto& l : layers)
    if (l.kind == LayerKind::MaxPool) s *= l.stride;
  return s;
}

int NetworkSpec::num_classes() const { return layers.empty() ? 0 : layers.back().channels_out; }

int NetworkSpec::feature_dim() const {
  const auto shapes = all_shapes(*this);
  return shapes[last_fc_index(*this)].flat();
}

Tensor NetworkSpec::shape_at(int layer_index) const {
  const auto shapes = all_shapes(*this);
  const Shape& s = shapes[layer_index];
  return Tensor(s.h, s.w, s.c);
}

NetworkSpec desk_spec(int num_classes, int input_side, int feature_dim) {
  NetworkSpec spec;
  spec.input_side = input_side;
  for (int block = 0; block < 3; ++block) {
    spec.layers.push_back({LayerKind::Conv, 3, 16, 1});
    spec.layers.push_back({LayerKind::Relu});
    spec.layers.push_back({LayerKind::MaxPool, 2, 0, 2});
  }
  spec.layers.push_back({LayerKind::FC, 0, feature_dim});
  spec.layers.push_back({LayerKind::Relu});
  spec.layers.push_back({LayerKind::FC, 0, num_classes});
  return spec;
}

NetworkSpec full_spec(int num_classes) {
  NetworkSpec spec;
  spec.input_side = 65;
  spec.layers.push_back({LayerKind::Conv, 6, 32, 1});   // 65 -> 60
  spec.layers.push_back({LayerKind::Relu});
  spec.layers.push_back({LayerKind::MaxPool, 2, 0, 2}); // -> 30
  spec.layers.push_back({LayerKind::Conv, 7, 48, 1});   // -> 24
  spec.layers.push_back({LayerKind::Relu});
  spec.layers.push_back({LayerKind::MaxPool, 2, 0, 2}); // -> 12
  spec.layers.push_back({LayerKind::Conv, 5, 64, 1});   // -> 8
  spec.layers.push_back({LayerKind::Relu});
  spec.layers.push_back({LayerKind::MaxPool, 2, 0, 2}); // -> 4
  spec.layers.push_back({LayerKind::FC, 0, 64});
  spec.layers.push_back({LayerKind::Relu});
  spec.layers.push_back({LayerKind::FC, 0, num_classes});
  return spec;
}

NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NetworkParams params;
  const auto shapes = all_shapes(spec);
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    LayerParams p;
    int fan_in = 0, fan_out = 0;
    if (l.kind == LayerKind::Conv) {
      const int cin = shapes[i].c;
      p.weights.resize(static_cast<size_t>(l.kernel) * l.kernel * cin * l.channels_out);
      p.bias.resize(l.channels_out, 0.0);
      fan_in = l.kernel * l.kernel * cin;
      fan_out = l.kernel * l.kernel * l.channels_out;
    } else if (l.kind == LayerKind::FC) {
      const int in = shapes[i].flat();
      p.weights.resize(static_cast<size_t>(l.channels_out) * in);
      p.bias.resize(l.channels_out, 0.0);
      fan_in = in;
      fan_out = l.channels_out;
    }
    if (!p.weights.empty()) {
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> d(-a, a);
      for (double& w : p.weights) w = d(rng);
    }
    params.layers.push_back(p);
    LayerParams m;
    m.weights.assign(p.weights.size(), 0.0);
    m.bias.assign(p.bias.size(), 0.0);
    params.momentum.push_back(std::move(m));
  }
  return params;
}

Gradients zero_gradients(const NetworkSpec& spec) {
  Gradients g;
  NetworkParams p = init_params(spec, 0);
  for (auto& lp : p.layers) {
    std::fill(lp.weights.begin(), lp.weights.end(), 0.0);
    g.push_back(std::move(lp));
  }
  return g;
}

namespace {

void conv_forward(const Tensor& in, const LayerSpec& l, const LayerParams& p, Tensor& out) {
  const int k = l.kernel, s = l.stride, cin = in.c, cout = l.channels_out;
  for (int orow = 0; orow < out.h; ++orow)
    for (int ocol = 0; ocol < out.w; ++ocol)
      for (int oc = 0; oc < cout; ++oc) {
        double acc = p.bias[oc];
        for (int kr = 0; kr < k; ++kr)
          for (int kc = 0; kc < k; ++kc) {
            const double* src = &in.v[((static_cast<size_t>(orow * s + kr) * in.w) +
                                       (ocol * s + kc)) * cin];
            const double* wt = &p.weights[(((static_cast<size_t>(kr) * k + kc) * cin) * cout) + oc];
            for (int ic = 0; ic < cin; ++ic) acc += src[ic] * wt[static_cast<size_t>(ic) * cout];
          }
        out.at(orow, ocol, oc) = acc;
      }
}

void conv_backward(const Tensor& in, const Tensor& dout, const LayerSpec& l,
                   const LayerParams& p, Tensor& din, LayerParams& grad) {
  const int k = l.kernel, s = l.stride, cin = in.c, cout = l.channels_out;
  for (int orow = 0; orow < dout.h; ++orow)
    for (int ocol = 0; ocol < dout.w; ++ocol)
      for (int oc = 0; oc < cout; ++oc) {
        const double g = dout.at(orow, ocol, oc);
        if (g == 0.0) continue;
        grad.bias[oc] += g;
        for (int kr = 0; kr < k; ++kr)
          for (int kc = 0; kc < k; ++kc) {
            const size_t in_base =
                ((static_cast<size_t>(orow * s + kr) * in.w) + (ocol * s + kc)) * cin;
            const size_t w_base = ((static_cast<size_t>(kr) * k + kc) * cin) * cout + oc;
            for (int ic = 0; ic < cin; ++ic) {
              grad.weights[w_base + static_cast<size_t>(ic) * cout] += g * in.v[in_base + ic];
              din.v[in_base + ic] += g * p.weights[w_base + static_cast<size_t>(ic) * cout];
            }
          }
      }
}

void pool_forward(const Tensor& in, const LayerSpec& l, Tensor& out, std::vector<int>& argmax) {
  argmax.assign(out.size(), 0);
  for (int orow = 0; orow < out.h; ++orow)
    for (int ocol = 0; ocol < out.w; ++ocol) {
      const int r0 = orow * l.stride, c0 = ocol * l.stride;
      const int r1 = std::min(r0 + l.kernel, in.h), c1 = std::min(c0 + l.kernel, in.w);
      for (int ch = 0; ch < in.c; ++ch) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = -1;
        for (int r = r0; r < r1; ++r)
          for (int c = c0; c < c1; ++c) {
            const double v = in.at(r, c, ch);
            if (v > best) {
              best = v;
              best_idx = static_cast<int>((static_cast<size_t>(r) * in.w + c) * in.c + ch);
            }
          }
        out.at(orow, ocol, ch) = best;
        argmax[(static_cast<size_t>(orow) * out.w + ocol) * out.c + ch] = best_idx;
      }
    }
}

void fc_forward(const Tensor& in, const LayerSpec& l, const LayerParams& p, Tensor& out) {
  const int n_in = static_cast<int>(in.size());
  for (int o = 0; o < l.channels_out; ++o) {
    double acc = p.bias[o];
    const double* w = &p.weights[static_cast<size_t>(o) * n_in];
    for (int i = 0; i < n_in; ++i) acc += w[i] * in.v[i];
    out.v[o] = acc;
  }
}

void fc_backward(const Tensor& in, const Tensor& dout, const LayerSpec& l, const LayerParams& p,
                 Tensor& din, LayerParams& grad) {
  const int n_in = static_cast<int>(in.size());
  for (int o = 0; o < l.channels_out; ++o) {
    const double g = dout.v[o];
    grad.bias[o] += g;
    const double* w = &p.weights[static_cast<size_t>(o) * n_in];
    double* gw = &grad.weights[static_cast<size_t>(o) * n_in];
    for (int i = 0; i < n_in; ++i) {
      gw[i] += g * in.v[i];
      din.v[i] += g * w[i];
    }
  }
}

// Forward through layers [0, stop). Returns activations in cache.
void run_forward(const NetworkSpec& spec, const NetworkParams& params, const Tensor& input,
                 int stop, ForwardCache& cache) {
  if (input.h != spec.input_side || input.w != spec.input_side || input.c != spec.input_channels)
    throw ArgumentError("forward: input shape does not match network spec");
  const auto shapes = all_shapes(spec);
  cache.acts.clear();
  cache.pool_argmax.assign(spec.layers.size(), {});
  cache.acts.push_back(input);
  for (int i = 0; i < stop; ++i) {
    const LayerSpec& l = spec.layers[i];
    const Shape& os = shapes[i + 1];
    Tensor out(os.h, os.w, os.c);
    const Tensor& in = cache.acts.back();
    switch (l.kind) {
      case LayerKind::Conv:
        conv_forward(in, l, params.layers[i], out);
        break;
      case LayerKind::Relu:
        out = in;
        for (double& v : out.v) v = std::max(v, 0.0);
        break;
      case LayerKind::MaxPool:
        pool_forward(in, l, out, cache.pool_argmax[i]);
        break;
      case LayerKind::FC:
        fc_forward(in, l, params.layers[i], out);
        break;
    }
    cache.acts.push_back(std::move(out));
  }
}

std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> p(logits.size());
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

// Backpropagates `dtop` (gradient at the input of layer `top_exclusive`,
// i.e. at activation index top_exclusive) through layers [0, top_exclusive).
void run_backward(const NetworkSpec& spec, const NetworkParams& params, const ForwardCache& cache,
                  int top_exclusive, Tensor dtop, Gradients& grads) {
  for (int i = top_exclusive - 1; i >= 0; --i) {
    const LayerSpec& l = spec.layers[i];
    const Tensor& in = cache.acts[i];
    Tensor din(in.h, in.w, in.c);
    switch (l.kind) {
      case LayerKind::Conv:
        conv_backward(in, dtop, l, params.layers[i], din, grads[i]);
        break;
      case LayerKind::Relu:
        for (size_t j = 0; j < in.size(); ++j) din.v[j] = in.v[j] > 0.0 ? dtop.v[j] : 0.0;
        break;
      case LayerKind::MaxPool: {
        const auto& argmax = cache.pool_argmax[i];
        for (size_t j = 0; j < dtop.size(); ++j) din.v[argmax[j]] += dtop.v[j];
        break;
      }
      case LayerKind::FC:
        fc_backward(in, dtop, l, params.layers[i], din, grads[i]);
        break;
    }
    dtop = std::move(din);
  }
}

}  // namespace

std::vector<double> forward(const NetworkSpec& spec, const NetworkParams& params,
                            const Tensor& input, ForwardCache* cache) {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  run_forward(spec, params, input, static_cast<int>(spec.layers.size()), c);
  return softmax(c.acts.back().v);
}

std::vector<double> forward_features(const NetworkSpec& spec, const NetworkParams& params,
                                     const Tensor& input, ForwardCache* cache) {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  run_forward(spec, params, input, last_fc_index(spec), c);
  return c.acts.back().v;
}

void backward(const NetworkSpec& spec, const NetworkParams& params, const ForwardCache& cache,
              const std::vector<double>& probs, int target, Gradients& grads, double scale) {
  if (cache.acts.size() != spec.layers.size() + 1)
    throw ArgumentError("backward: cache does not cover the full network");
  if (target < 0 || target >= static_cast<int>(probs.size()))
    throw ArgumentError("backward: target class out of range");
  Tensor dlogits(1, 1, static_cast<int>(probs.size()));
  for (size_t j = 0; j < probs.size(); ++j)
    dlogits.v[j] = scale * (probs[j] - (static_cast<int>(j) == target ? 1.0 : 0.0));
  run_backward(spec, params, cache, static_cast<int>(spec.layers.size()), std::move(dlogits),
               grads);
}

void backward_from_feature(const NetworkSpec& spec, const NetworkParams& params,
                           const ForwardCache& cache, const std::vector<double>& dfeature,
                           Gradients& grads, double scale) {
  const int t = last_fc_index(spec);
  if (cache.acts.size() < static_cast<size_t>(t) + 1)
    throw ArgumentError("backward_from_feature: cache too short");
  const Tensor& feat = cache.acts[t];
  if (dfeature.size() != feat.size())
    throw ArgumentError("backward_from_feature: gradient size mismatch");
  Tensor dtop(feat.h, feat.w, feat.c);
  for (size_t j = 0; j < dfeature.size(); ++j) dtop.v[j] = scale * dfeature[j];
  run_backward(spec, params, cache, t, std::move(dtop), grads);
}

double learning_rate_at(const TrainConfig& cfg, int epoch) {
  const int steps = cfg.decay_every > 0 ? epoch / cfg.decay_every : 0;
  return cfg.learning_rate * std::pow(cfg.decay_factor, steps);
}

void sgd_step(const NetworkSpec& spec, NetworkParams& params, const Gradients& grads, double lr,
              double mu) {
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    auto& p = params.layers[i];
    auto& m = params.momentum[i];
    const auto& g = grads[i];
    for (size_t j = 0; j < p.weights.size(); ++j) {
      m.weights[j] = mu * m.weights[j] - lr * g.weights[j];
      p.weights[j] += m.weights[j];
    }
    for (size_t j = 0; j < p.bias.size(); ++j) {
      m.bias[j] = mu * m.bias[j] - lr * g.bias[j];
      p.bias[j] += m.bias[j];
    }
  }
}

Tensor patch_to_tensor(const Patch& patch) {
  Tensor t(patch.side, patch.side, 3);
  t.v = patch.values;
  return t;
}

NetworkParams train(const DatasetSplit& split, const PixelPools& pools,
                    const ClassFrequencyTable& table, const SamplingConfig& sampler,
                    const NetworkSpec& spec, const TrainConfig& cfg) {
  NetworkParams params = init_params(spec, cfg.seed);
  std::seed_seq seq{cfg.seed, sampler.seed, static_cast<std::uint64_t>(0x70736e65)};
  std::mt19937_64 rng(seq);

  std::vector<SceneImage> preprocessed;
  preprocessed.reserve(split.size());
  for (const auto& rec : split.records) preprocessed.push_back(preprocess(rec.image));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate_at(cfg, epoch);
    const SampleList samples = sample_epoch(pools, table, sampler, rng);
    for (size_t start = 0; start < samples.size(); start += cfg.batch_size) {
      const size_t end = std::min(samples.size(), start + cfg.batch_size);
      Gradients grads = zero_gradients(spec);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (size_t k = start; k < end; ++k) {
        const SampleRef& ref = samples[k];
        const Patch patch =
            extract_patch(preprocessed[ref.record], ref.row, ref.col, spec.input_side);
        const int target = split.records[ref.record].labels.at(ref.row, ref.col);
        ForwardCache cache;
        const std::vector<double> probs = forward(spec, params, patch_to_tensor(patch), &cache);
        double scale = inv_batch;
        if (!cfg.class_weights.empty()) scale *= cfg.class_weights[target];
        backward(spec, params, cache, probs, target, grads, scale);
      }
      sgd_step(spec, params, grads, lr, cfg.momentum);
    }
  }
  return params;
}

PixelFeatureMap extract_features(const NetworkSpec& spec, const NetworkParams& params,
                                 const SceneImage& image) {
  const int stride = spec.feature_stride();
  if (image.h < 1 || image.w < 1) throw ArgumentError("extract_features: empty image");
  PixelFeatureMap map;
  map.grid_h = (image.h + stride - 1) / stride;
  map.grid_w = (image.w + stride - 1) / stride;
  map.dim = spec.feature_dim();
  map.data.resize(static_cast<size_t>(map.grid_h) * map.grid_w * map.dim);
  const int offset = stride / 2;
  for (int r = 0; r < map.grid_h; ++r)
    for (int c = 0; c < map.grid_w; ++c) {
      const int row = std::min(r * stride + offset, image.h - 1);
      const int col = std::min(c * stride + offset, image.w - 1);
      const Patch patch = extract_patch(image, row, col, spec.input_side);
      const std::vector<double> feat = forward_features(spec, params, patch_to_tensor(patch));
      std::copy(feat.begin(), feat.end(),
                map.data.begin() + (static_cast<size_t>(r) * map.grid_w + c) * map.dim);
    }
  return map;
}

// --------------------------------------------------------------------------
// Model file: "PNET", version, spec, parameters in declaration order.
// --------------------------------------------------------------------------

namespace {
constexpr char kNetMagic[4] = {'P', 'N', 'E', 'T'};
constexpr std::uint32_t kNetVersion = 1;
}  // namespace

void write_network(const NetworkSpec& spec, const NetworkParams& params, std::ostream& out) {
  binio::write_magic(out, kNetMagic);
  binio::write_u32(out, kNetVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(spec.input_side));
  binio::write_u32(out, static_cast<std::uint32_t>(spec.input_channels));
  binio::write_u32(out, static_cast<std::uint32_t>(spec.layers.size()));
  for (const auto& l : spec.layers) {
    binio::write_u32(out, static_cast<std::uint32_t>(l.kind));
    binio::write_u32(out, static_cast<std::uint32_t>(l.kernel));
    binio::write_u32(out, static_cast<std::uint32_t>(l.channels_out));
    binio::write_u32(out, static_cast<std::uint32_t>(l.stride));
  }
  for (const auto& p : params.layers) {
    binio::write_f64_vec(out, p.weights);
    binio::write_f64_vec(out, p.bias);
  }
}

std::pair<NetworkSpec, NetworkParams> read_network(std::istream& in) {
  binio::expect_magic(in, kNetMagic, "PNET");
  binio::expect_version(in, kNetVersion, "PNET");
  NetworkSpec spec;
  spec.input_side = static_cast<int>(binio::read_u32(in, "input side"));
  spec.input_channels = static_cast<int>(binio::read_u32(in, "input channels"));
  const std::uint32_t n = binio::read_u32(in, "layer count");
  for (std::uint32_t i = 0; i < n; ++i) {
    LayerSpec l;
    l.kind = static_cast<LayerKind>(binio::read_u32(in, "layer kind"));
    l.kernel = static_cast<int>(binio::read_u32(in, "kernel"));
    l.channels_out = static_cast<int>(binio::read_u32(in, "channels"));
    l.stride = static_cast<int>(binio::read_u32(in, "stride"));
    spec.layers.push_back(l);
  }
  NetworkParams params = init_params(spec, 0);
  for (auto& p : params.layers) {
    const auto w = binio::read_f64_vec(in, "weights");
    const auto b = binio::read_f64_vec(in, "bias");
    if (w.size() != p.weights.size() || b.size() != p.bias.size())
      throw DataError("parameter block does not match network spec");
    p.weights = w;
    p.bias = b;
  }
  return {spec, params};
}

void save_network(const NetworkSpec& spec, const NetworkParams& params,
                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  write_network(spec, params, out);
  if (!out) throw DataError("write failed: " + path.string());
}

std::pair<NetworkSpec, NetworkParams> load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  return read_network(in);
}

}  // namespace pscene
