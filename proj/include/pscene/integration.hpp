#pragma once

#include <vector>

#include "pscene/types.hpp"

namespace pscene {

// Belief floor: keeps energies finite when a belief zeros out a class.
inline constexpr double kBeliefFloor = 1e-12;

struct EnergyMap {
  int grid_h = 0, grid_w = 0, classes = 0;
  std::vector<double> data;

  double* cell(int r, int c) {
    return data.data() + (static_cast<size_t>(r) * grid_w + c) * classes;
  }
  const double* cell(int r, int c) const {
    return data.data() + (static_cast<size_t>(r) * grid_w + c) * classes;
  }
};

// Psi(j) = -log(max(P(j), floor))
std::vector<double> local_energy(const std::vector<double>& belief);

// Cell-wise E(j) = -log(P_local(j)) - log(P_global(j)), both floored.
EnergyMap integrate(const BeliefMap& local, const BeliefMap& global);

EnergyMap belief_energy(const BeliefMap& beliefs);  // single-source energy

// Per-cell argmin (ties to the lowest class id), replicated over each
// stride x stride pixel block and cropped to (h, w).
LabelMap infer_labels(const EnergyMap& energy, int stride, int h, int w);

struct EvalReport {
  double gpa = 0.0;
  double aca = 0.0;
  std::vector<double> per_class_recall;          // -1 for classes absent from gt
  std::vector<std::vector<std::int64_t>> confusion;  // [gt][pred]
  std::int64_t labeled_total = 0;
};

EvalReport evaluate(const std::vector<LabelMap>& predictions,
                    const std::vector<LabelMap>& ground_truth, int class_count);

}  // namespace pscene
