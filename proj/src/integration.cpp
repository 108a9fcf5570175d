#include "pscene/integration.hpp"

#include <algorithm>
#include <cmath>

namespace pscene {

std::vector<double> local_energy(const std::vector<double>& belief) {
  std::vector<double> e(belief.size());
  for (size_t j = 0; j < belief.size(); ++j) e[j] = -std::log(std::max(belief[j], kBeliefFloor));
  return e;
}

EnergyMap integrate(const BeliefMap& local, const BeliefMap& global) {
  if (local.grid_h != global.grid_h || local.grid_w != global.grid_w ||
      local.classes != global.classes)
    throw ArgumentError("integrate: belief map geometry mismatch");
  EnergyMap energy;
  energy.grid_h = local.grid_h;
  energy.grid_w = local.grid_w;
  energy.classes = local.classes;
  energy.data.resize(local.data.size());
  for (size_t i = 0; i < local.data.size(); ++i)
    energy.data[i] = -std::log(std::max(local.data[i], kBeliefFloor)) -
                     std::log(std::max(global.data[i], kBeliefFloor));
  return energy;
}

EnergyMap belief_energy(const BeliefMap& beliefs) {
  EnergyMap energy;
  energy.grid_h = beliefs.grid_h;
  energy.grid_w = beliefs.grid_w;
  energy.classes = beliefs.classes;
  energy.data.resize(beliefs.data.size());
  for (size_t i = 0; i < beliefs.data.size(); ++i)
    energy.data[i] = -std::log(std::max(beliefs.data[i], kBeliefFloor));
  return energy;
}

LabelMap infer_labels(const EnergyMap& energy, int stride, int h, int w) {
  LabelMap out;
  out.h = h;
  out.w = w;
  out.labels.resize(static_cast<size_t>(h) * w);
  for (int gr = 0; gr < energy.grid_h; ++gr)
    for (int gc = 0; gc < energy.grid_w; ++gc) {
      const double* e = energy.cell(gr, gc);
      int best = 0;
      for (int j = 1; j < energy.classes; ++j)
        if (e[j] < e[best]) best = j;
      const int r1 = std::min((gr + 1) * stride, h);
      const int c1 = std::min((gc + 1) * stride, w);
      for (int r = gr * stride; r < r1; ++r)
        for (int c = gc * stride; c < c1; ++c)
          out.at(r, c) = static_cast<std::uint16_t>(best);
    }
  return out;
}

EvalReport evaluate(const std::vector<LabelMap>& predictions,
                    const std::vector<LabelMap>& ground_truth, int class_count) {
  if (predictions.size() != ground_truth.size())
    throw ArgumentError("evaluate: prediction/ground-truth count mismatch");
  EvalReport report;
  report.confusion.assign(class_count, std::vector<std::int64_t>(class_count, 0));
  std::int64_t correct = 0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const LabelMap& pred = predictions[i];
    const LabelMap& gt = ground_truth[i];
    if (pred.h != gt.h || pred.w != gt.w) throw ArgumentError("evaluate: dimension mismatch");
    for (size_t p = 0; p < gt.labels.size(); ++p) {
      const std::uint16_t g = gt.labels[p];
      if (g == kUnlabeled) continue;
      const std::uint16_t q = pred.labels[p];
      if (g >= class_count || q >= class_count)
        throw ArgumentError("evaluate: label outside catalog");
      ++report.confusion[g][q];
      ++report.labeled_total;
      if (q == g) ++correct;
    }
  }
  if (report.labeled_total == 0) throw ArgumentError("evaluate: zero labeled pixels");
  report.gpa = static_cast<double>(correct) / static_cast<double>(report.labeled_total);

  report.per_class_recall.assign(class_count, -1.0);
  double recall_sum = 0.0;
  int present = 0;
  for (int c = 0; c < class_count; ++c) {
    std::int64_t total = 0;
    for (int q = 0; q < class_count; ++q) total += report.confusion[c][q];
    if (total == 0) continue;  // absent classes do not enter the ACA mean
    report.per_class_recall[c] =
        static_cast<double>(report.confusion[c][c]) / static_cast<double>(total);
    recall_sum += report.per_class_recall[c];
    ++present;
  }
  report.aca = recall_sum / present;
  return report;
}

}  // namespace pscene
