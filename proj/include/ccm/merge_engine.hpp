#pragma once

// Weight-space algebra around one anchor and two endpoint experts.
//
//   delta_low  = theta_low  - theta_0        delta_plus  = (delta_low + delta_high) / 2
//   delta_high = theta_high - theta_0        delta_minus = (delta_high - delta_low) / 2
//
//   theta(alpha) = theta_0 + delta_plus + alpha * delta_minus
//                = (1 - alpha)/2 * theta_low + (1 + alpha)/2 * theta_high
//
// All arithmetic runs on the flattened canonical vector.

#include <cstdint>
#include <functional>
#include <vector>

#include "ccm/checkpoint_store.hpp"
#include "ccm/field_grid.hpp"

namespace ccm {

struct Decomposition {
  Checkpoint anchor;
  Checkpoint expert_low;
  Checkpoint expert_high;
  Schema schema;
  std::vector<double> theta0;
  std::vector<double> theta_low;
  std::vector<double> theta_high;
  std::vector<double> delta_low;
  std::vector<double> delta_high;
  std::vector<double> delta_plus;
  std::vector<double> delta_minus;
};

Decomposition decompose(const Checkpoint& anchor, const Checkpoint& expert_low,
                        const Checkpoint& expert_high);

struct CoordinateLine {
  Decomposition parts;
  double alpha_min = -1.5;
  double alpha_max = 1.5;

  CoordinateLine(Decomposition d, double lo, double hi);
};

// Flat parameter vector at alpha in each algebraic form.
std::vector<double> line_point_anchor_form(const Decomposition& d, double alpha);
std::vector<double> line_point_convex_form(const Decomposition& d, double alpha);

// Merged checkpoint at alpha (convex form, so alpha = +-1 reproduce the
// experts bit for bit). Does not clip.
Checkpoint compose_at(const CoordinateLine& line, double alpha);
Checkpoint endpoint_average(const CoordinateLine& line);

struct WeightedDelta {
  WeightSet delta;
  double weight = 1.0;
};

// theta_0 + sum_i w_i * delta_i, summed in list order.
Checkpoint task_arithmetic(const Checkpoint& anchor, const std::vector<WeightedDelta>& deltas);

// Keeps the top `trim` fraction of each delta by magnitude, elects a sign per
// coordinate from the summed trimmed mass, and averages the survivors that
// agree with it. Result is theta_0 + scale * merged.
Checkpoint ties_merge(const Checkpoint& anchor, const std::vector<WeightSet>& deltas,
                      double trim = 0.2, double scale = 1.0);

// Drops each delta coordinate with probability p, rescales survivors by
// 1 / (1 - p), and adds the weighted sum to theta_0.
Checkpoint dare_merge(const Checkpoint& anchor, const std::vector<WeightedDelta>& deltas,
                      double drop = 0.9, std::uint64_t seed = 0);

// Autoregressive ensemble: at every step each expert advances the shared
// state and the weighted combination becomes the next state.
using StepFunction = std::function<GridField(const GridField&)>;
Trajectory output_ensemble(const std::vector<StepFunction>& experts,
                           const std::vector<double>& weights, const GridField& u0, int steps);
Trajectory output_ensemble(const std::vector<OperatorModel>& experts,
                           const std::vector<double>& weights, const GridField& u0, int steps);

}  // namespace ccm
