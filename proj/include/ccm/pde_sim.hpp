#pragma once

// Ground-truth simulators for the three PDE families, physical-axis
// bookkeeping, and seeded dataset generation.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ccm/field_grid.hpp"

namespace ccm {

enum class FamilyId { diffreact, ns2d, rdb };

enum class RegimeRole {
  support,
  endpoint_low,
  endpoint_high,
  interpolation,
  ood_low,
  ood_high,
};

// Which seed bank a regime draws from. Training data (anchor support and
// endpoint fine-tuning), selector validation, and reported evaluation never
// share samples.
enum class Split { train, val, eval };

std::string to_string(FamilyId id);
std::string to_string(RegimeRole role);
std::string to_string(Split split);
FamilyId family_from_string(const std::string& text);
RegimeRole role_from_string(const std::string& text);
Split split_from_string(const std::string& text);

struct RegimeDef {
  std::string name;
  double lambda = 0.0;
  RegimeRole role = RegimeRole::support;
  Split split = Split::train;
  // Reporting bucket ("support", "endpoint", "interp", "medium", "ood").
  std::string group;
};

struct FamilySpec {
  FamilyId family = FamilyId::diffreact;
  std::string axis;  // diffreact: D_u | D_v | k; ns2d: nu; rdb: h_inner
  double lambda_low = 0.0;
  double lambda_high = 0.0;
  // When set, s is piecewise-affine around this center (separate low and
  // high half-gaps); otherwise s is affine around the midpoint.
  std::optional<double> lambda_center;

  // Non-axis coefficients: diffreact D_u, D_v, k; ns2d forcing; rdb
  // h_outer, radius_min, radius_max; plus IC shape knobs (ic_amplitude,
  // ic_length, ic_kmax).
  std::map<std::string, double> coefficients;

  int height = 32;
  int width = 32;
  double lx = 1.0;
  double ly = 1.0;
  int frames = 20;  // T: stored frames after u_0
  double frame_dt = 0.05;
  int substeps = 10;  // fixed-step solvers; rdb adapts dt under cfl
  double cfl = 0.4;   // rdb only
  std::uint64_t seed_bank = 0;

  std::vector<RegimeDef> regimes;

  double coefficient(const std::string& key) const;
  double coefficient(const std::string& key, double fallback) const;
  int channel_count() const;
  std::vector<std::string> channel_names() const;
  // Throws InvalidArgument describing the first violated invariant.
  void validate() const;
};

struct RegimeTask {
  std::string name;
  double lambda = 0.0;
  RegimeRole role = RegimeRole::support;
  Split split = Split::train;
  std::string group;
  double s = 0.0;
  std::vector<std::uint64_t> seeds;
};

struct TrajectorySample {
  std::uint64_t seed = 0;
  Trajectory frames;  // T + 1 frames, frames[0] = u_0
};

struct TrajectoryDataset {
  FamilyId family = FamilyId::diffreact;
  RegimeTask task;
  std::vector<std::string> channel_names;
  std::vector<TrajectorySample> samples;
};

// s(lambda); exact +-1 at the endpoints.
double normalize_coordinate(double lambda, const FamilySpec& spec);
// Inverse of normalize_coordinate.
double denormalize_coordinate(double s, const FamilySpec& spec);
// Role implied by s for an evaluation regime.
RegimeRole role_for_coordinate(double s);
RegimeTask make_task(const RegimeDef& def, const FamilySpec& spec,
                     std::vector<std::uint64_t> seeds);

struct TimeStepping {
  double frame_dt = 0.05;
  int substeps = 10;
};

struct DiffReactParams {
  double du = 1e-3;
  double dv = 5e-3;
  double k = 5e-3;
  bool reaction = true;  // false only in tests: pure heat equation
};

// Semi-implicit spectral scheme: Crank-Nicolson diffusion, second-order
// Adams-Bashforth reaction. ic has channels (u, v).
Trajectory simulate_diffreact(const DiffReactParams& params,
                              const GridField& ic, int frames,
                              const TimeStepping& stepping);

struct Ns2dParams {
  double nu = 1e-4;
  double forcing_amplitude = 0.1;  // f = A sin(2 pi (x + y) / L)
  double cfl_limit = 1.0;
};

// Pseudo-spectral vorticity form: 2/3 dealiased advection (AB2),
// Crank-Nicolson diffusion, fixed forcing. ic has one channel (vorticity).
Trajectory simulate_ns2d(const Ns2dParams& params, const GridField& ic,
                         int frames, const TimeStepping& stepping);

struct ShallowWaterParams {
  double gravity = 1.0;
  double cfl = 0.4;
};

// First-order finite volume with Rusanov flux, SSP-RK3 in time, periodic
// boundaries. state has channels (h, hu, hv); returns full-state frames.
Trajectory simulate_shallow_water(const ShallowWaterParams& params,
                                  const GridField& state, int frames,
                                  double frame_dt);

struct RdbParams {
  double h_inner = 3.0;
  double h_outer = 1.0;
  double gravity = 1.0;
  double cfl = 0.4;
};

// Radial dam break; ic is the height channel (usually from
// sample_initial_condition). Returns height-only frames.
Trajectory simulate_rdb(const RdbParams& params, const GridField& height_ic,
                        int frames, double frame_dt);

// Deterministic per (family, seed). lambda only enters the rdb column height.
GridField sample_initial_condition(const FamilySpec& spec, std::uint64_t seed,
                                   double lambda);

// Simulates one trajectory of the family at physical coordinate lambda.
Trajectory simulate_regime(const FamilySpec& spec, double lambda,
                           std::uint64_t seed);
// Same, from an explicit initial condition.
Trajectory simulate_from(const FamilySpec& spec, double lambda,
                         const GridField& ic);

std::uint64_t split_seed(const FamilySpec& spec, Split split, int index);

struct SampleCounts {
  int train = 4;
  int val = 4;
  int eval = 4;
  int for_split(Split s) const;
};

std::map<std::string, TrajectoryDataset> build_family(const FamilySpec& spec,
                                                      int samples_per_regime,
                                                      int jobs = 1);
std::map<std::string, TrajectoryDataset> build_family(const FamilySpec& spec,
                                                      const SampleCounts& counts,
                                                      int jobs = 1);

// On-disk layout: <dir>/manifest.json plus one sample_<seed>.traj per sample.
void save_dataset(const TrajectoryDataset& dataset, const FamilySpec& spec,
                  const std::filesystem::path& dir);
TrajectoryDataset load_dataset(const std::filesystem::path& dir);

void write_trajectory(const Trajectory& traj, const std::filesystem::path& path);
Trajectory read_trajectory(const std::filesystem::path& path);

}  // namespace ccm
