#pragma once

// Stage orchestration for one experiment directory.
//
// Layout under the output directory:
//   config.json                 resolved configuration of the last stage run
//   manifest.json               per-stage output digests, for `verify`
//   manifests/<stage>.json      inputs, outputs, config digest, wall time
//   data/<regime>/              gen-data
//   checkpoints/, logs/         train-anchor, finetune-endpoints, merge-sweep
//   sweep/ calibrate/ select/ evaluate/ theory/ report/

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ccm/experiment_config.hpp"
#include "ccm/report.hpp"

namespace ccm {

enum class Stage {
  gen_data,
  train_anchor,
  finetune_endpoints,
  merge_sweep,
  calibrate,
  select,
  evaluate,
  theory_audit,
  report,
};

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& text);
// Every stage in execution order.
const std::vector<Stage>& pipeline_stages();
// Stages whose artifacts `stage` reads, transitively, in execution order.
std::vector<Stage> upstream_of(Stage stage, const ExperimentConfig& config);

struct RunOptions {
  std::filesystem::path out;
  int jobs = 1;
  std::ostream* log = nullptr;  // progress lines; null for silence
};

struct InvariantCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct StageResult {
  Stage stage = Stage::gen_data;
  std::vector<std::string> outputs;  // paths relative to the output directory
  std::vector<InvariantCheck> checks;
  double wall_time_s = 0.0;

  bool ok() const;
};

// Runs one stage. Throws MissingArtifact when an upstream stage has not run
// and DigestMismatch when upstream outputs or the config changed since.
StageResult run_stage(const ExperimentConfig& config, Stage stage, const RunOptions& options);
// All enabled stages in order.
std::vector<StageResult> run_pipeline(const ExperimentConfig& config, const RunOptions& options);

struct VerifyResult {
  bool ok = true;
  std::vector<std::string> lines;
};

// Recomputes every recorded output digest and checks that each stage's
// recorded inputs match its upstream outputs.
VerifyResult verify_run(const std::filesystem::path& out);

// Report tables, built only from the evaluate CSVs.
// main table: one row per method with the interpolation/OOD means over
// regime means, the OOD worst regime, and relative gains against base and
// endpoint-average.
CsvTable build_main_table(const CsvTable& results, const CsvTable& regimes);
// One row per evaluation regime: s, the regime-level oracle alpha (argmin of
// the sweep mean), and the clipped coordinate.
CsvTable build_coordinate_law(const CsvTable& sweep, const CsvTable& regimes, double alpha_min,
                              double alpha_max);

}  // namespace ccm
