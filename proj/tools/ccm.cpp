// Command-line driver: one subcommand per pipeline stage, plus `run` and `verify`.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ccm/error.hpp"
#include "ccm/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string stage;
  int jobs = 1;
};

void add_run_flags(CLI::App* cmd, Flags& f, bool with_stage) {
  cmd->add_option("--config", f.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output directory")->required();
  cmd->add_option("--seed", f.seed, "override the config seed (model-side randomness)");
  cmd->add_option("--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);
  if (with_stage) cmd->add_option("--stage", f.stage, "run only this stage");
}

int report_results(const std::vector<ccm::StageResult>& results) {
  bool ok = true;
  for (const auto& r : results) {
    for (const auto& c : r.checks) {
      if (!c.passed) {
        std::cerr << "invariant failed: " << ccm::to_string(r.stage) << "/" << c.name << ": " << c.detail << "\n";
        ok = false;
      }
    }
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coordinate-conditioned merging lab"};
  app.require_subcommand(1);
  Flags flags;

  std::vector<std::pair<CLI::App*, ccm::Stage>> stage_cmds;
  for (ccm::Stage s : ccm::pipeline_stages()) {
    auto* cmd = app.add_subcommand(ccm::to_string(s), "run the " + ccm::to_string(s) + " stage");
    add_run_flags(cmd, flags, false);
    stage_cmds.emplace_back(cmd, s);
  }
  auto* run = app.add_subcommand("run", "run every enabled stage in order");
  add_run_flags(run, flags, true);
  auto* verify = app.add_subcommand("verify", "recheck every digest recorded under an output directory");
  verify->add_option("--out", flags.out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (verify->parsed()) {
      const auto v = ccm::verify_run(flags.out);
      for (const auto& line : v.lines) std::cout << line << "\n";
      std::cout << (v.ok ? "verify: ok" : "verify: FAILED") << "\n";
      return v.ok ? 0 : 1;
    }
    auto config = ccm::load_config(flags.config);
    if (flags.seed) config.seed = *flags.seed;
    ccm::RunOptions options{flags.out, flags.jobs, &std::cerr};

    std::vector<ccm::StageResult> results;
    if (run->parsed()) {
      if (flags.stage.empty()) {
        results = ccm::run_pipeline(config, options);
      } else {
        results.push_back(ccm::run_stage(config, ccm::stage_from_string(flags.stage), options));
      }
    } else {
      for (const auto& [cmd, stage] : stage_cmds) {
        if (cmd->parsed()) results.push_back(ccm::run_stage(config, stage, options));
      }
    }
    return report_results(results);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
