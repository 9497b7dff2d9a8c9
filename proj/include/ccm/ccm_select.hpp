#pragma once

// Coordinate selectors: known coordinate, scaled coordinate, prefix-scored
// bank search, the full-window oracle and the wrong-sign control.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ccm/eval_metrics.hpp"
#include "ccm/merge_engine.hpp"

namespace ccm {

struct AlphaBank {
  std::vector<double> values;  // strictly increasing, contains -1, 0, +1

  void validate() const;
  double alpha_min() const { return values.front(); }
  double alpha_max() const { return values.back(); }
};

// {-1.50, -1.25, ..., 1.50}
AlphaBank default_bank();
// Uniform bank lo, lo + step, ..., hi computed as lo + k * step.
AlphaBank uniform_bank(double lo, double hi, double step);

enum class SelectorMode { coord, scale, prefix, oracle, wrong_sign };

enum class PrefixObjective { full_prefix, mean_step, first_step, final_step, recency_weighted };

std::string to_string(SelectorMode mode);
std::string to_string(PrefixObjective objective);
SelectorMode selector_mode_from_string(const std::string& text);
PrefixObjective prefix_objective_from_string(const std::string& text);

struct SelectorConfig {
  SelectorMode mode = SelectorMode::coord;
  double gamma = 1.0;
  int prefix = 4;  // K
  PrefixObjective objective = PrefixObjective::full_prefix;

  void validate(int frames) const;
};

struct SelectionResult {
  double alpha = 0.0;
  std::vector<double> candidates;  // bank modes only
  std::vector<double> losses;
  std::string inputs_digest;
};

double clip(double x, double lo, double hi);
double select_coord(double s, double lo, double hi);
double select_scale(double s, double gamma, double lo, double hi);
double wrong_sign(double s, double lo, double hi);

// Index of the smallest loss; ties go to the smaller |alpha|, then the
// smaller alpha. NaN losses never win.
std::size_t argmin_alpha(const std::vector<double>& alphas, const std::vector<double>& losses);

// Scores a predicted prefix (frames 0..K) against the observed one.
//   full_prefix       ||pred_{1:K} - u_{1:K}|| / ||u_{1:K}|| over all K frames jointly
//   mean_step         mean over t of per-frame relative L2
//   first_step        per-frame relative L2 at t = 1
//   final_step        per-frame relative L2 at t = K
//   recency_weighted  sum_t t * e_t / sum_t t
double prefix_objective(const Trajectory& pred, const Trajectory& observed,
                        PrefixObjective objective);

// Rollout of candidate `index` from u0 for `steps` steps (frames 0..steps).
using CandidateRollout = std::function<Trajectory(std::size_t index, const GridField& u0, int steps)>;

// One operator per bank entry, composed once from the coordinate line.
class BankModels {
 public:
  BankModels(const CoordinateLine& line, AlphaBank bank);

  const AlphaBank& bank() const noexcept { return bank_; }
  const OperatorModel& model(std::size_t index) const { return models_.at(index); }
  Trajectory rollout(std::size_t index, const GridField& u0, int steps) const;
  CandidateRollout rollout_fn() const;

 private:
  AlphaBank bank_;
  std::vector<OperatorModel> models_;
};

// Per-trajectory bank search on the observed prefix u_{0:K} (K = frames - 1).
// `horizon` is the full rollout length T; K must be < T.
SelectionResult select_prefix(const AlphaBank& bank, const CandidateRollout& rollout,
                              const Trajectory& prefix, int horizon, PrefixObjective objective,
                              int jobs = 1);

// Per-task variant: averages per-sample prefix losses before the argmin.
SelectionResult select_prefix_task(const AlphaBank& bank, const CandidateRollout& rollout,
                                   const std::vector<Trajectory>& prefixes, int horizon,
                                   PrefixObjective objective, int jobs = 1);

// Diagnostic argmin of the rollout L2 over `idx` against the full truth.
SelectionResult oracle_alpha(const AlphaBank& bank, const CandidateRollout& rollout,
                             const Trajectory& truth, const IndexSet& idx, int jobs = 1);

struct GammaCalibration {
  double gamma = 1.0;
  std::vector<double> grid;
  std::vector<double> losses;  // mean validation loss per grid entry
};

// Validation loss of deploying alpha on validation regime r.
using RegimeLoss = std::function<double(std::size_t regime, double alpha)>;

// Picks gamma minimizing the mean over regimes of loss(r, clip(gamma * s_r));
// ties go to the smallest gamma.
GammaCalibration calibrate_gamma(const std::vector<double>& validation_s,
                                 const std::vector<double>& gamma_grid, double lo, double hi,
                                 const RegimeLoss& loss);

}  // namespace ccm
