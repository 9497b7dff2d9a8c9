#pragma once

// Rollout metrics over time-index sets, the calibration/future split,
// physics diagnostics and summary statistics.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ccm/field_grid.hpp"
#include "ccm/pde_sim.hpp"

namespace ccm {

enum class IndexTag { full, calibration, future };

std::string to_string(IndexTag tag);

struct IndexSet {
  std::vector<int> indices;  // sorted, within 1..T
  IndexTag tag = IndexTag::full;
};

IndexSet full_indices(int frames);

struct ProtocolSplit {
  IndexSet calibration;  // {1..K}
  IndexSet future;       // {K+1..T}
};

// Throws InvalidArgument unless 1 <= K < T.
ProtocolSplit split_protocol(int frames, int prefix);

// ||pred_t - truth_t|| / ||truth_t|| over all cells and channels.
// Throws DegenerateInput when the truth frame has zero norm.
double frame_relative_l2(const GridField& pred, const GridField& truth);

// Relative L2 for frames 1..T (element 0 is unused and set to 0).
std::vector<double> frame_errors(const Trajectory& pred, const Trajectory& truth);

// Mean of frame_relative_l2 over the indices.
double rollout_l2(const Trajectory& pred, const Trajectory& truth, const IndexSet& idx);
// Same, from precomputed frame errors.
double mean_over(const std::vector<double>& errors, const IndexSet& idx);

struct OodSummary {
  double mean = 0.0;
  double worst = 0.0;
};

// Mean and maximum of per-regime mean losses.
OodSummary summarize(const std::vector<double>& regime_means);

// (base - method) / base.
double relative_gain(double base, double method);

struct PhysicsReport {
  FamilyId family = FamilyId::rdb;
  // rdb: mass_mae, std_mae, front_mae; ns2d: vorticity_mean_mae,
  // enstrophy_mae, final_enstrophy.
  std::map<std::string, double> metrics;
};

double spatial_mean(const GridField& f, int channel = 0);
double spatial_std(const GridField& f, int channel = 0);
double enstrophy(const GridField& vorticity);

// Largest radius (from the domain center) where the azimuthally averaged
// height crosses (h_outer + h_center) / 2, with linear interpolation between
// radial bins one cell wide. Returns 0 when the profile never crosses.
double front_radius(const GridField& height, double h_outer);

PhysicsReport physics_rdb(const Trajectory& pred, const Trajectory& truth,
                          const IndexSet& idx, double h_outer = 1.0);
PhysicsReport physics_ns2d(const Trajectory& pred, const Trajectory& truth,
                           const IndexSet& idx);

// Sample Pearson correlation of (x, y) pairs. Throws InvalidArgument for fewer
// than 3 pairs and DegenerateInput when either coordinate has no variance.
double coordinate_correlation(const std::vector<std::pair<double, double>>& pairs);

struct WinLossRegret {
  int wins = 0;
  int losses = 0;
  double negative_regret = 0.0;  // sum of max(0, method - base)
};

WinLossRegret win_loss_regret(const std::vector<double>& base, const std::vector<double>& method);

struct BootstrapInterval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile bootstrap of the mean; quantiles use linear interpolation
// between order statistics.
BootstrapInterval bootstrap_ci(const std::vector<double>& values, int resamples, double level,
                               std::uint64_t seed);

}  // namespace ccm
