#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "pscene/convnet.hpp"
#include "pscene/types.hpp"

namespace pscene {

// Linear map W defining the Mahalanobis metric M = W^T W.
struct MetricParams {
  Eigen::MatrixXd W;

  static MetricParams identity(int dim) { return {Eigen::MatrixXd::Identity(dim, dim)}; }
  Eigen::VectorXd transform(const Eigen::VectorXd& x) const;
};

enum class LossNorm { Pairs, Features };

struct MetricLossConfig {
  double margin = 3.0;      // tau, > 1
  double lambda = 0.01;     // Frobenius regularizer
  int batch_size = 200;
  int per_class_quota = 200;  // class-sampled draws per class per epoch
  double learning_rate = 1e-3;
  double lr_decay = 0.9;    // exponential, per epoch
  int epochs = 20;
  std::uint64_t seed = 0;
  LossNorm norm = LossNorm::Pairs;
};

struct MetricBatch {
  std::vector<Eigen::VectorXd> features;
  std::vector<int> labels;
};

// Hinge pair loss over all unordered pairs of the batch:
//   L = lambda/2 ||W||_F^2 + 1/(2N) sum max(0, 1 - l_ij (tau - ||W dx||^2))
// N = contributing-pair count (LossNorm::Pairs) or feature count.
double metric_loss(const MetricParams& metric, const MetricBatch& batch,
                   const MetricLossConfig& cfg);

struct MetricGradients {
  Eigen::MatrixXd dW;
  std::vector<Eigen::VectorXd> dfeatures;  // per batch feature
};

MetricGradients metric_gradients(const MetricParams& metric, const MetricBatch& batch,
                                 const MetricLossConfig& cfg);

// SGD over class-sampled batches of pre-extracted features. W starts at
// identity.
MetricParams train_metric(const std::vector<Eigen::VectorXd>& features,
                          const std::vector<int>& labels, int class_count,
                          const MetricLossConfig& cfg);

// Joint fine-tuning: the metric loss gradient flows through the truncated
// network; `params` is updated in place (initialize it from the trained
// classification network). Returns the learned W.
MetricParams train_metric_finetune(const DatasetSplit& split, const NetworkSpec& spec,
                                   NetworkParams& params, const MetricLossConfig& cfg,
                                   const TrainConfig& net_cfg);

void save_metric(const MetricParams& metric, const std::filesystem::path& path);
MetricParams load_metric(const std::filesystem::path& path);

}  // namespace pscene
