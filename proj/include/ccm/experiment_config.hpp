#pragma once

// Experiment configuration: one JSON file per family with every knob of the
// pipeline. Missing keys take the defaults below; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ccm/ccm_select.hpp"
#include "ccm/neural_operator.hpp"
#include "ccm/pde_sim.hpp"

namespace ccm {

struct BankSpec {
  double min = -1.5;
  double max = 1.5;
  double step = 0.25;

  AlphaBank build() const { return uniform_bank(min, max, step); }
};

struct SelectorSettings {
  BankSpec bank;
  int prefix = 4;  // K calibration frames
  PrefixObjective objective = PrefixObjective::full_prefix;
  std::vector<double> gamma_grid{0.5, 0.75, 1.0, 1.25, 1.5, 2.0};
  // Ablations run in the select/evaluate stages.
  std::vector<PrefixObjective> objective_ablation{
      PrefixObjective::full_prefix, PrefixObjective::mean_step, PrefixObjective::first_step,
      PrefixObjective::final_step, PrefixObjective::recency_weighted};
  std::vector<double> bank_step_ablation{0.5, 0.125};
};

struct MergeSettings {
  double ties_trim = 0.2;
  double ties_scale = 1.0;
  double dare_drop = 0.9;
  double task_arithmetic_low = 1.0;
  double task_arithmetic_high = 1.0;
};

struct EvalSettings {
  int bootstrap_resamples = 2000;
  double bootstrap_level = 0.95;
};

struct TheorySettings {
  int probes = 8;
};

struct StageToggles {
  bool theory_audit = true;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  FamilySpec family;
  SampleCounts samples;
  OperatorConfig op;  // channels and grid are taken from the family
  TrainConfig anchor_training;
  TrainConfig expert_training;
  SelectorSettings selector;
  MergeSettings merges;
  EvalSettings evaluation;
  TheorySettings theory;
  StageToggles stages;

  // Throws InvalidArgument naming the first bad field.
  void validate() const;
  // Operator config with channels/grid filled in from the family.
  OperatorConfig operator_config() const;
  // Derived seeds for independent random streams.
  std::uint64_t stream_seed(std::uint64_t stream) const;
};

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Canonical text (sorted keys, every field present); the config digest is its SHA-256.
std::string config_to_json_text(const ExperimentConfig& config);
std::string config_digest(const ExperimentConfig& config);

}  // namespace ccm
