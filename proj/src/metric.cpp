#include "pscene/metric.hpp"

#include <algorithm>
#include <fstream>

#include "pscene/binio.hpp"
#include "pscene/scene_data.hpp"

namespace pscene {

Eigen::VectorXd MetricParams::transform(const Eigen::VectorXd& x) const {
  if (x.size() != W.cols()) throw ArgumentError("metric transform: dimension mismatch");
  return W * x;
}

namespace {

double pair_count_norm(const MetricBatch& batch, LossNorm norm) {
  const auto b = static_cast<double>(batch.features.size());
  return norm == LossNorm::Pairs ? b * (b - 1.0) / 2.0 : b;
}

void check_batch(const MetricBatch& batch) {
  if (batch.features.size() < 2)
    throw ArgumentError("metric batch needs at least two features");
  if (batch.features.size() != batch.labels.size())
    throw ArgumentError("metric batch: feature/label count mismatch");
}

}  // namespace

double metric_loss(const MetricParams& metric, const MetricBatch& batch,
                   const MetricLossConfig& cfg) {
  check_batch(batch);
  const size_t b = batch.features.size();
  std::vector<Eigen::VectorXd> mapped(b);
  for (size_t i = 0; i < b; ++i) mapped[i] = metric.W * batch.features[i];
  double hinge_sum = 0.0;
  for (size_t i = 0; i < b; ++i)
    for (size_t j = i + 1; j < b; ++j) {
      const double l = batch.labels[i] == batch.labels[j] ? 1.0 : -1.0;
      const double d2 = (mapped[i] - mapped[j]).squaredNorm();
      hinge_sum += std::max(0.0, 1.0 - l * (cfg.margin - d2));
    }
  const double n = pair_count_norm(batch, cfg.norm);
  return cfg.lambda / 2.0 * metric.W.squaredNorm() + hinge_sum / (2.0 * n);
}

MetricGradients metric_gradients(const MetricParams& metric, const MetricBatch& batch,
                                 const MetricLossConfig& cfg) {
  check_batch(batch);
  const size_t b = batch.features.size();
  std::vector<Eigen::VectorXd> mapped(b);
  for (size_t i = 0; i < b; ++i) mapped[i] = metric.W * batch.features[i];

  MetricGradients out;
  out.dW = cfg.lambda * metric.W;
  out.dfeatures.assign(b, Eigen::VectorXd::Zero(metric.W.cols()));
  const double inv_n = 1.0 / pair_count_norm(batch, cfg.norm);

  for (size_t i = 0; i < b; ++i)
    for (size_t j = i + 1; j < b; ++j) {
      const double l = batch.labels[i] == batch.labels[j] ? 1.0 : -1.0;
      const Eigen::VectorXd wdx = mapped[i] - mapped[j];
      const double c = 1.0 - l * (cfg.margin - wdx.squaredNorm());
      if (c <= 0.0) continue;  // hinge subgradient: g'(0) = 0
      const Eigen::VectorXd dx = batch.features[i] - batch.features[j];
      out.dW.noalias() += inv_n * l * wdx * dx.transpose();
      const Eigen::VectorXd dfeat = inv_n * l * (metric.W.transpose() * wdx);
      out.dfeatures[i] += dfeat;
      out.dfeatures[j] -= dfeat;
    }
  return out;
}

namespace {

// Class-sampled epoch over feature indices: `quota` draws per class, with
// replacement, then shuffled.
std::vector<size_t> class_sampled_epoch(const std::vector<std::vector<size_t>>& by_class,
                                        int quota, std::mt19937_64& rng) {
  std::vector<size_t> epoch;
  for (const auto& pool : by_class) {
    if (pool.empty()) continue;
    std::uniform_int_distribution<size_t> d(0, pool.size() - 1);
    for (int k = 0; k < quota; ++k) epoch.push_back(pool[d(rng)]);
  }
  std::shuffle(epoch.begin(), epoch.end(), rng);
  return epoch;
}

std::vector<std::vector<size_t>> group_by_class(const std::vector<int>& labels, int class_count) {
  std::vector<std::vector<size_t>> by_class(class_count);
  for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  int populated = 0;
  for (const auto& pool : by_class)
    if (!pool.empty()) ++populated;
  if (populated < 2) throw ArgumentError("metric learning needs at least two populated classes");
  return by_class;
}

}  // namespace

MetricParams train_metric(const std::vector<Eigen::VectorXd>& features,
                          const std::vector<int>& labels, int class_count,
                          const MetricLossConfig& cfg) {
  if (features.empty()) throw ArgumentError("train_metric: no features");
  const auto by_class = group_by_class(labels, class_count);
  const int dim = static_cast<int>(features.front().size());
  MetricParams metric = MetricParams::identity(dim);
  std::mt19937_64 rng(cfg.seed);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, epoch);
    const auto order = class_sampled_epoch(by_class, cfg.per_class_quota, rng);
    for (size_t start = 0; start + 1 < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) break;
      MetricBatch batch;
      for (size_t k = start; k < end; ++k) {
        batch.features.push_back(features[order[k]]);
        batch.labels.push_back(labels[order[k]]);
      }
      const MetricGradients g = metric_gradients(metric, batch, cfg);
      metric.W -= lr * g.dW;
    }
  }
  return metric;
}

MetricParams train_metric_finetune(const DatasetSplit& split, const NetworkSpec& spec,
                                   NetworkParams& params, const MetricLossConfig& cfg,
                                   const TrainConfig& net_cfg) {
  const int classes = spec.num_classes();
  const PixelPools pools(split, classes);
  std::vector<std::vector<size_t>> by_class(classes);  // indices into a flat ref list
  std::vector<SampleRef> refs;
  std::vector<int> ref_labels;
  for (int c = 0; c < classes; ++c)
    for (const auto& ref : pools.pool(c)) {
      by_class[c].push_back(refs.size());
      refs.push_back(ref);
      ref_labels.push_back(c);
    }
  int populated = 0;
  for (const auto& pool : by_class)
    if (!pool.empty()) ++populated;
  if (populated < 2) throw ArgumentError("metric fine-tuning needs at least two classes");

  std::vector<SceneImage> preprocessed;
  for (const auto& rec : split.records) preprocessed.push_back(preprocess(rec.image));

  MetricParams metric = MetricParams::identity(spec.feature_dim());
  std::mt19937_64 rng(cfg.seed);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, epoch);
    const auto order = class_sampled_epoch(by_class, cfg.per_class_quota, rng);
    for (size_t start = 0; start + 1 < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) break;
      MetricBatch batch;
      std::vector<ForwardCache> caches(end - start);
      for (size_t k = start; k < end; ++k) {
        const SampleRef& ref = refs[order[k]];
        const Patch patch =
            extract_patch(preprocessed[ref.record], ref.row, ref.col, spec.input_side);
        const auto feat =
            forward_features(spec, params, patch_to_tensor(patch), &caches[k - start]);
        batch.features.push_back(Eigen::Map<const Eigen::VectorXd>(
            feat.data(), static_cast<Eigen::Index>(feat.size())));
        batch.labels.push_back(ref_labels[order[k]]);
      }
      const MetricGradients g = metric_gradients(metric, batch, cfg);
      Gradients net_grads = zero_gradients(spec);
      for (size_t k = 0; k < caches.size(); ++k) {
        const std::vector<double> dfeat(g.dfeatures[k].data(),
                                        g.dfeatures[k].data() + g.dfeatures[k].size());
        backward_from_feature(spec, params, caches[k], dfeat, net_grads);
      }
      metric.W -= lr * g.dW;
      sgd_step(spec, params, net_grads, lr, net_cfg.momentum);
    }
  }
  return metric;
}

// Metric file: "PMTR", version, rows, cols, row-major doubles.
namespace {
constexpr char kMetricMagic[4] = {'P', 'M', 'T', 'R'};
constexpr std::uint32_t kMetricVersion = 1;
}  // namespace

void save_metric(const MetricParams& metric, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  binio::write_magic(out, kMetricMagic);
  binio::write_u32(out, kMetricVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(metric.W.rows()));
  binio::write_u32(out, static_cast<std::uint32_t>(metric.W.cols()));
  for (Eigen::Index r = 0; r < metric.W.rows(); ++r)
    for (Eigen::Index c = 0; c < metric.W.cols(); ++c) binio::write_f64(out, metric.W(r, c));
  if (!out) throw DataError("write failed: " + path.string());
}

MetricParams load_metric(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  binio::expect_magic(in, kMetricMagic, "PMTR");
  binio::expect_version(in, kMetricVersion, "PMTR");
  const int rows = static_cast<int>(binio::read_u32(in, "rows"));
  const int cols = static_cast<int>(binio::read_u32(in, "cols"));
  MetricParams metric{Eigen::MatrixXd(rows, cols)};
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) metric.W(r, c) = binio::read_f64(in, "matrix entry");
  return metric;
}

}  // namespace pscene
