#pragma once

// Compact Fourier neural operator with a hand-written backward pass.
//
//   z        = (u - mean) / std                       per channel
//   a_0      = lift(z)                                 1x1 linear, C -> width
//   a_{l+1}  = act(spectral_l(a_l) + bypass_l(a_l))    act = GELU except last layer
//   u_next   = u + step_scale * project(a_L)           1x1 linear, width -> C
//
// spectral_l keeps ky rows {0..m-1} U {H-m..H-1} and kx columns {0..m-1}, and
// returns Re(IDFT(R * DFT(a))). All-zero learned tensors give u_next = u.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ccm/field_grid.hpp"
#include "ccm/pde_sim.hpp"
#include "ccm/rng.hpp"
#include "ccm/weight_set.hpp"

namespace ccm {

struct OperatorConfig {
  int channels = 1;  // C_u
  int width = 16;    // hidden channels
  int modes = 8;
  int layers = 3;
  int grid_h = 32;
  int grid_w = 32;

  void validate() const;
  bool operator==(const OperatorConfig&) const = default;
};

// Per-channel affine input normalization and output increment scale, fit on
// the anchor's support data and shared unchanged by every descendant.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<double> step_scale;

  bool operator==(const Normalizer&) const = default;
};

Normalizer fit_normalizer(const std::vector<const TrajectoryDataset*>& data);
Normalizer identity_normalizer(int channels);

struct OperatorModel {
  OperatorConfig config;
  Normalizer normalizer;
  WeightSet weights;
};

// Expected parameter names and shapes for a configuration.
Schema operator_schema(const OperatorConfig& config);
WeightSet init_weights(const OperatorConfig& config, std::uint64_t seed);

// Validates config, normalizer and weight schema against each other.
void check_model(const OperatorModel& model);

// step_scale * project(a_L); forward_step(u) == u + forward_increment(u).
GridField forward_increment(const OperatorModel& model, const GridField& u);
GridField forward_step(const OperatorModel& model, const GridField& u);

struct RolloutResult {
  Trajectory frames;          // frames[0] = u_0, frames[t] = prediction of u_t
  std::vector<double> norms;  // L2 norm of each frame
};

RolloutResult rollout(const OperatorModel& model, const GridField& u0, int steps);

// One supervision window: the model is rolled out from `input` for
// targets.size() steps and compared with each target frame.
struct Transition {
  GridField input;
  std::vector<GridField> targets;
};

struct LossAndGrad {
  double loss = 0.0;
  WeightSet grad;
};

// Mean over windows, steps, cells and channels of
// ((prediction - target) / step_scale)^2, with its exact gradient
// (backpropagated through the unrolled steps), multiplied by loss_scale.
LossAndGrad loss_and_grad(const OperatorModel& model,
                          const std::vector<Transition>& batch,
                          double loss_scale = 1.0);
double loss_only(const OperatorModel& model, const std::vector<Transition>& batch);

struct AdamState {
  WeightSet m;
  WeightSet v;
  long step = 0;
};

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void adam_update(WeightSet& weights, const WeightSet& grad, AdamState& state,
                 const AdamHyper& hyper);

struct TrainConfig {
  int steps = 1000;
  int batch = 16;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::string schedule = "cosine";  // constant | cosine
  int unroll = 1;                   // 1..4
  std::uint64_t seed = 0;
  int log_every = 10;
  int monitor_every = 50;  // anchor only: best-weights check cadence
  int monitor_batch = 64;

  void validate() const;
};

struct LogRow {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double monitor_loss = 0.0;  // NaN when not evaluated at this step
};

struct TrainResult {
  OperatorModel model;
  std::vector<LogRow> log;
  int best_step = 0;
  double best_monitor_loss = 0.0;
};

// Samples `count` windows uniformly over (dataset, sample, start frame).
std::vector<Transition> sample_windows(const std::vector<const TrajectoryDataset*>& data,
                                       int count, int unroll, Rng& rng);

// Trains from a seeded initialization and returns the weights with the lowest
// loss on a fixed monitor batch drawn from the support data.
TrainResult train_anchor(const OperatorConfig& config, const TrainConfig& train,
                         const std::vector<const TrajectoryDataset*>& support);

// Continues training the anchor on one endpoint regime; returns the final
// weights. Normalizer and architecture are inherited unchanged.
TrainResult finetune_endpoint(const OperatorModel& anchor, const TrainConfig& train,
                              const TrajectoryDataset& endpoint);

// CSV with header step,loss,lr,monitor_loss.
std::string training_log_csv(const std::vector<LogRow>& log);

}  // namespace ccm
