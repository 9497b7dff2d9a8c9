#include "ccm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numbers>
#include <ostream>
#include <set>

#include "ccm/byte_io.hpp"
#include "ccm/ccm_select.hpp"
#include "ccm/checkpoint_store.hpp"
#include "ccm/digest.hpp"
#include "ccm/error.hpp"
#include "ccm/eval_metrics.hpp"
#include "ccm/merge_engine.hpp"
#include "ccm/parallel.hpp"
#include "ccm/theory_checks.hpp"
#include "json.hpp"

namespace ccm {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::gen_data: return "gen-data";
    case Stage::train_anchor: return "train-anchor";
    case Stage::finetune_endpoints: return "finetune-endpoints";
    case Stage::merge_sweep: return "merge-sweep";
    case Stage::calibrate: return "calibrate";
    case Stage::select: return "select";
    case Stage::evaluate: return "evaluate";
    case Stage::theory_audit: return "theory-audit";
    case Stage::report: return "report";
  }
  return "unknown";
}

Stage stage_from_string(const std::string& text) {
  for (Stage s : pipeline_stages()) {
    if (to_string(s) == text) return s;
  }
  throw InvalidArgument("unknown stage '" + text + "'");
}

const std::vector<Stage>& pipeline_stages() {
  static const std::vector<Stage> all{Stage::gen_data,    Stage::train_anchor, Stage::finetune_endpoints,
                                      Stage::merge_sweep, Stage::calibrate,    Stage::select,
                                      Stage::evaluate,    Stage::theory_audit, Stage::report};
  return all;
}

std::vector<Stage> upstream_of(Stage stage, const ExperimentConfig& config) {
  switch (stage) {
    case Stage::gen_data: return {};
    case Stage::train_anchor: return {Stage::gen_data};
    case Stage::finetune_endpoints: return {Stage::gen_data, Stage::train_anchor};
    case Stage::merge_sweep: return {Stage::gen_data, Stage::train_anchor, Stage::finetune_endpoints};
    case Stage::calibrate:
      return {Stage::gen_data, Stage::train_anchor, Stage::finetune_endpoints, Stage::merge_sweep};
    case Stage::select:
      return {Stage::gen_data, Stage::train_anchor, Stage::finetune_endpoints, Stage::merge_sweep,
              Stage::calibrate};
    case Stage::evaluate:
      return {Stage::gen_data,    Stage::train_anchor, Stage::finetune_endpoints,
              Stage::merge_sweep, Stage::calibrate,    Stage::select};
    case Stage::theory_audit: return {Stage::train_anchor, Stage::finetune_endpoints};
    case Stage::report: {
      std::vector<Stage> up{Stage::gen_data,    Stage::train_anchor, Stage::finetune_endpoints,
                            Stage::merge_sweep, Stage::calibrate,    Stage::select,
                            Stage::evaluate};
      if (config.stages.theory_audit) up.push_back(Stage::theory_audit);
      return up;
    }
  }
  return {};
}

bool StageResult::ok() const {
  return std::all_of(checks.begin(), checks.end(), [](const InvariantCheck& c) { return c.passed; });
}

namespace {

using Clock = std::chrono::steady_clock;

struct Ctx {
  const ExperimentConfig& cfg;
  const RunOptions& opt;
  Stage stage;
  std::string digest;
  std::vector<std::string> outputs;

  fs::path path(const std::string& rel) const { return opt.out / rel; }

  void log(const std::string& msg) const {
    if (opt.log) *opt.log << "[" << to_string(stage) << "] " << msg << std::endl;
  }

  void emit_csv(const std::string& rel, const CsvTable& t) {
    write_csv(path(rel), t);
    outputs.push_back(rel);
  }

  void emit_text(const std::string& rel, const std::string& text) {
    const auto p = path(rel);
    fs::create_directories(p.parent_path());
    write_file_atomic(p, text);
    outputs.push_back(rel);
  }

  void emit_checkpoint(const std::string& rel, const Checkpoint& c) {
    const auto p = path(rel);
    fs::create_directories(p.parent_path());
    save_checkpoint(c, p);
    outputs.push_back(rel);
  }
};

std::string manifest_rel(Stage s) { return "manifests/" + to_string(s) + ".json"; }

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file_bytes(p));
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(p.string() + ": " + e.what());
  }
}

std::string outputs_digest(const std::map<std::string, std::string>& outputs) {
  Sha256 h;
  for (const auto& [path, digest] : outputs) {
    h.update(path);
    h.update(std::string_view("\0", 1));
    h.update(digest);
    h.update("\n");
  }
  return h.finish_hex();
}

// Validates upstream manifests against the disk and the current config and
// returns the consumed files with their digests.
std::map<std::string, std::string> check_upstream(const Ctx& ctx) {
  std::map<std::string, std::string> inputs;
  for (Stage up : upstream_of(ctx.stage, ctx.cfg)) {
    const auto mpath = ctx.path(manifest_rel(up));
    if (!fs::exists(mpath)) {
      throw MissingArtifact("stage " + to_string(ctx.stage) + " needs the artifacts of stage " +
                            to_string(up) + ", which has not run in " + ctx.opt.out.string());
    }
    const json m = read_json(mpath);
    if (m.at("config_digest").get<std::string>() != ctx.digest) {
      throw DigestMismatch("stage " + to_string(up) +
                           " ran with a different config; rerun it before " + to_string(ctx.stage));
    }
    for (const auto& [rel, digest] : m.at("outputs").items()) {
      const auto p = ctx.path(rel);
      if (!fs::exists(p)) throw MissingArtifact("output " + rel + " of stage " + to_string(up) + " is missing");
      const auto now = sha256_file_hex(p);
      if (now != digest.get<std::string>()) {
        throw DigestMismatch("output " + rel + " of stage " + to_string(up) +
                             " changed since it was written (stale inputs)");
      }
      inputs[rel] = now;
    }
  }
  return inputs;
}

void write_manifests(const Ctx& ctx, const std::map<std::string, std::string>& inputs,
                     const StageResult& result) {
  std::map<std::string, std::string> outputs;
  for (const auto& rel : result.outputs) outputs[rel] = sha256_file_hex(ctx.path(rel));
  json m;
  m["stage"] = to_string(ctx.stage);
  m["config_digest"] = ctx.digest;
  m["seed"] = ctx.cfg.seed;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["outputs_digest"] = outputs_digest(outputs);
  m["wall_time_s"] = result.wall_time_s;
  json checks = json::array();
  for (const auto& c : result.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}});
  m["checks"] = checks;
  fs::create_directories(ctx.path("manifests"));
  write_file_atomic(ctx.path(manifest_rel(ctx.stage)), m.dump(2) + "\n");

  json top;
  const auto tpath = ctx.path("manifest.json");
  if (fs::exists(tpath)) top = read_json(tpath);
  top["config_digest"] = ctx.digest;
  top["stages"][to_string(ctx.stage)] = {{"manifest", manifest_rel(ctx.stage)},
                                         {"outputs_digest", m["outputs_digest"]}};
  write_file_atomic(tpath, top.dump(2) + "\n");
}

// Dataset access --------------------------------------------------------------

std::string data_rel(const std::string& regime) { return "data/" + regime; }

const RegimeDef& regime_with(const ExperimentConfig& cfg, RegimeRole role, Split split) {
  for (const auto& r : cfg.family.regimes) {
    if (r.role == role && r.split == split) return r;
  }
  throw InvalidArgument("config has no " + to_string(role) + " regime in split " + to_string(split));
}

TrajectoryDataset load_regime(const Ctx& ctx, const std::string& name) {
  const auto dir = ctx.path(data_rel(name));
  if (!fs::exists(dir / "manifest.json")) throw MissingArtifact("dataset " + dir.string() + " is missing");
  return load_dataset(dir);
}

std::vector<TrajectoryDataset> load_split(const Ctx& ctx, Split split) {
  std::vector<TrajectoryDataset> out;
  for (const auto& r : ctx.cfg.family.regimes) {
    if (r.split == split) out.push_back(load_regime(ctx, r.name));
  }
  return out;
}

// Checkpoints --------------------------------------------------------------

const char* kAnchorRel = "checkpoints/anchor.ckpt";
const char* kLowRel = "checkpoints/expert_low.ckpt";
const char* kHighRel = "checkpoints/expert_high.ckpt";

Checkpoint load_ckpt(const Ctx& ctx, const std::string& rel) {
  const auto p = ctx.path(rel);
  if (!fs::exists(p)) throw MissingArtifact("checkpoint " + p.string() + " is missing");
  return load_checkpoint(p);
}

CoordinateLine load_line(const Ctx& ctx) {
  const auto& b = ctx.cfg.selector.bank;
  return CoordinateLine(decompose(load_ckpt(ctx, kAnchorRel), load_ckpt(ctx, kLowRel), load_ckpt(ctx, kHighRel)),
                        b.min, b.max);
}

std::string alpha_tag(double a) { return format_number(a); }

// Metrics ------------------------------------------------------------------

struct WindowErrors {
  double full = 0.0;
  double calibration = 0.0;
  double future = 0.0;
};

WindowErrors window_errors(const Trajectory& pred, const Trajectory& truth, int frames, int prefix) {
  const auto e = frame_errors(pred, truth);
  const auto split = split_protocol(frames, prefix);
  return {mean_over(e, full_indices(frames)), mean_over(e, split.calibration), mean_over(e, split.future)};
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct SampleRef {
  std::size_t dataset = 0;
  std::size_t sample = 0;
};

std::vector<SampleRef> sample_refs(const std::vector<TrajectoryDataset>& sets) {
  std::vector<SampleRef> out;
  for (std::size_t d = 0; d < sets.size(); ++d) {
    for (std::size_t k = 0; k < sets[d].samples.size(); ++k) out.push_back({d, k});
  }
  return out;
}

// Stages -------------------------------------------------------------------

void stage_gen_data(Ctx& ctx) {
  fs::remove_all(ctx.path("data"));
  const auto sets = build_family(ctx.cfg.family, ctx.cfg.samples, ctx.opt.jobs);
  for (const auto& r : ctx.cfg.family.regimes) {
    const auto& ds = sets.at(r.name);
    save_dataset(ds, ctx.cfg.family, ctx.path(data_rel(r.name)));
    ctx.outputs.push_back(data_rel(r.name) + "/manifest.json");
    for (const auto& s : ds.samples) {
      ctx.outputs.push_back(data_rel(r.name) + "/sample_" + std::to_string(s.seed) + ".traj");
    }
    ctx.log(r.name + ": " + std::to_string(ds.samples.size()) + " trajectories, s = " +
            format_number(ds.task.s));
  }
}

Lineage base_lineage(const Ctx& ctx, CheckpointRole role) {
  Lineage l;
  l.role = role;
  l.family = to_string(ctx.cfg.family.family);
  l.config_digest = ctx.digest;
  l.created_by = to_string(ctx.stage);
  return l;
}

void stage_train_anchor(Ctx& ctx) {
  std::vector<TrajectoryDataset> support;
  for (const auto& r : ctx.cfg.family.regimes) {
    if (r.role == RegimeRole::support && r.split == Split::train) support.push_back(load_regime(ctx, r.name));
  }
  std::vector<const TrajectoryDataset*> ptrs;
  for (const auto& d : support) ptrs.push_back(&d);
  TrainConfig tc = ctx.cfg.anchor_training;
  tc.seed = ctx.cfg.stream_seed(1);
  ctx.log("training on " + std::to_string(ptrs.size()) + " support regimes, " + std::to_string(tc.steps) +
          " steps");
  const auto result = train_anchor(ctx.cfg.operator_config(), tc, ptrs);
  Lineage l = base_lineage(ctx, CheckpointRole::anchor);
  l.seed = tc.seed;
  l.method = "train-anchor";
  l.hyperparameters = {{"steps", tc.steps}, {"lr", tc.lr}, {"best_step", result.best_step}};
  ctx.emit_checkpoint(kAnchorRel, make_checkpoint(result.model, l));
  ctx.emit_text("logs/anchor_train.csv", training_log_csv(result.log));
  ctx.log("best monitor loss " + format_number(result.best_monitor_loss) + " at step " +
          std::to_string(result.best_step));
}

void stage_finetune_endpoints(Ctx& ctx) {
  const auto anchor = load_ckpt(ctx, kAnchorRel);
  const auto anchor_model = to_model(anchor);
  struct Job {
    RegimeRole role;
    CheckpointRole ckpt_role;
    std::uint64_t stream;
    const char* rel;
    const char* log;
  };
  const Job jobs[] = {{RegimeRole::endpoint_low, CheckpointRole::endpoint_low, 2, kLowRel, "logs/expert_low_train.csv"},
                      {RegimeRole::endpoint_high, CheckpointRole::endpoint_high, 3, kHighRel,
                       "logs/expert_high_train.csv"}};
  std::vector<TrainResult> results(2);
  std::vector<TrainConfig> tcs(2, ctx.cfg.expert_training);
  std::vector<TrajectoryDataset> data;
  for (int k = 0; k < 2; ++k) {
    data.push_back(load_regime(ctx, regime_with(ctx.cfg, jobs[k].role, Split::train).name));
    tcs[k].seed = ctx.cfg.stream_seed(jobs[k].stream);
  }
  parallel_for(2, ctx.opt.jobs, [&](std::size_t k) { results[k] = finetune_endpoint(anchor_model, tcs[k], data[k]); });
  for (int k = 0; k < 2; ++k) {
    Lineage l = base_lineage(ctx, jobs[k].ckpt_role);
    l.lambda = data[k].task.lambda;
    l.parent_hash = content_hash(anchor);
    l.anchor_hash = anchor_of(anchor);
    l.seed = tcs[k].seed;
    l.method = "finetune-endpoint";
    l.hyperparameters = {{"steps", tcs[k].steps}, {"lr", tcs[k].lr}};
    ctx.emit_checkpoint(jobs[k].rel, make_checkpoint(results[k].model, l));
    ctx.emit_text(jobs[k].log, training_log_csv(results[k].log));
    ctx.log(std::string(to_string(jobs[k].ckpt_role)) + " on " + data[k].task.name + ": final loss " +
            format_number(results[k].log.empty() ? std::nan("") : results[k].log.back().loss));
  }
}

const char* kTaRel = "checkpoints/baselines/task_arithmetic.ckpt";
const char* kTiesRel = "checkpoints/baselines/ties.ckpt";
const char* kDareRel = "checkpoints/baselines/dare.ckpt";

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

void stage_merge_sweep(Ctx& ctx) {
  const auto& cfg = ctx.cfg;
  const auto line = load_line(ctx);
  const auto bank = cfg.selector.bank.build();
  const BankModels models(line, bank);
  for (std::size_t k = 0; k < bank.values.size(); ++k) {
    ctx.emit_checkpoint("checkpoints/line/alpha_" + alpha_tag(bank.values[k]) + ".ckpt",
                        compose_at(line, bank.values[k]));
  }

  const auto& parts = line.parts;
  const auto d_low = subtract(parts.expert_low.weights, parts.anchor.weights);
  const auto d_high = subtract(parts.expert_high.weights, parts.anchor.weights);
  const auto tag = [&](Checkpoint c) {
    c.lineage.config_digest = ctx.digest;
    c.lineage.created_by = to_string(ctx.stage);
    return c;
  };
  ctx.emit_checkpoint(kTaRel, tag(task_arithmetic(parts.anchor, {{d_low, cfg.merges.task_arithmetic_low},
                                                                 {d_high, cfg.merges.task_arithmetic_high}})));
  ctx.emit_checkpoint(kTiesRel, tag(ties_merge(parts.anchor, {d_low, d_high}, cfg.merges.ties_trim,
                                               cfg.merges.ties_scale)));
  ctx.emit_checkpoint(kDareRel, tag(dare_merge(parts.anchor, {{d_low, 0.5}, {d_high, 0.5}},
                                               cfg.merges.dare_drop, cfg.stream_seed(4))));

  CsvTable comp({"quantity", "value"});
  const double nl = std::sqrt(dot(parts.delta_low, parts.delta_low));
  const double nh = std::sqrt(dot(parts.delta_high, parts.delta_high));
  comp.add_row({"norm_theta0", format_number(std::sqrt(dot(parts.theta0, parts.theta0)))});
  comp.add_row({"norm_delta_low", format_number(nl)});
  comp.add_row({"norm_delta_high", format_number(nh)});
  comp.add_row({"norm_delta_plus", format_number(std::sqrt(dot(parts.delta_plus, parts.delta_plus)))});
  comp.add_row({"norm_delta_minus", format_number(std::sqrt(dot(parts.delta_minus, parts.delta_minus)))});
  comp.add_row({"cosine_delta_low_high",
                format_number(nl > 0 && nh > 0 ? dot(parts.delta_low, parts.delta_high) / (nl * nh) : std::nan(""))});
  ctx.emit_csv("sweep/line.csv", comp);

  std::vector<TrajectoryDataset> sets = load_split(ctx, Split::val);
  for (auto& d : load_split(ctx, Split::eval)) sets.push_back(std::move(d));
  const auto refs = sample_refs(sets);
  const int T = cfg.family.frames;
  const int K = cfg.selector.prefix;
  const std::size_t na = bank.values.size();
  std::vector<WindowErrors> errs(na * refs.size());
  ctx.log("sweeping " + std::to_string(na) + " alphas over " + std::to_string(refs.size()) + " trajectories");
  parallel_for(errs.size(), ctx.opt.jobs, [&](std::size_t i) {
    const std::size_t a = i / refs.size();
    const auto& ref = refs[i % refs.size()];
    const auto& truth = sets[ref.dataset].samples[ref.sample].frames;
    errs[i] = window_errors(models.rollout(a, truth.front(), T), truth, T, K);
  });

  CsvTable per_sample({"regime", "split", "group", "s", "sample_seed", "alpha", "full_l2", "calibration_l2",
                       "future_l2"});
  CsvTable means({"regime", "split", "group", "s", "alpha", "full_l2", "calibration_l2", "future_l2"});
  for (std::size_t d = 0; d < sets.size(); ++d) {
    const auto& task = sets[d].task;
    for (std::size_t a = 0; a < na; ++a) {
      std::vector<double> full, cal, fut;
      for (std::size_t j = 0; j < refs.size(); ++j) {
        if (refs[j].dataset != d) continue;
        const auto& e = errs[a * refs.size() + j];
        per_sample.add_row({task.name, to_string(task.split), task.group, format_number(task.s),
                            std::to_string(sets[d].samples[refs[j].sample].seed), alpha_tag(bank.values[a]),
                            format_number(e.full), format_number(e.calibration), format_number(e.future)});
        full.push_back(e.full);
        cal.push_back(e.calibration);
        fut.push_back(e.future);
      }
      means.add_row({task.name, to_string(task.split), task.group, format_number(task.s), alpha_tag(bank.values[a]),
                     format_number(mean_of(full)), format_number(mean_of(cal)), format_number(mean_of(fut))});
    }
  }
  ctx.emit_csv("sweep/alpha_sweep_samples.csv", per_sample);
  ctx.emit_csv("sweep/alpha_sweep.csv", means);
}

std::map<std::string, double> read_key_values(const fs::path& p) {
  const auto t = read_csv(p);
  std::map<std::string, double> out;
  for (std::size_t r = 0; r < t.size(); ++r) out[t.cell(r, "key")] = t.number(r, "value");
  return out;
}

// Future-window loss of compose_at(alpha) averaged over the samples of a set.
double mean_future_loss(const OperatorModel& m, const TrajectoryDataset& ds, int T, int K) {
  std::vector<double> v;
  for (const auto& s : ds.samples) v.push_back(window_errors(rollout(m, s.frames.front(), T).frames, s.frames, T, K).future);
  return mean_of(v);
}

void stage_calibrate(Ctx& ctx) {
  const auto& cfg = ctx.cfg;
  const auto bank = cfg.selector.bank.build();
  const auto val = load_split(ctx, Split::val);
  if (val.empty()) {
    throw InvalidArgument("calibrate needs at least one validation regime (split \"val\") in the config");
  }
  // best fixed alpha: mean over validation regimes of the regime-mean future loss
  const auto sweep = read_csv(ctx.path("sweep/alpha_sweep.csv"));
  std::vector<double> fixed_loss(bank.values.size(), 0.0);
  std::vector<int> counts(bank.values.size(), 0);
  for (std::size_t r = 0; r < sweep.size(); ++r) {
    if (sweep.cell(r, "split") != "val") continue;
    const double a = sweep.number(r, "alpha");
    for (std::size_t k = 0; k < bank.values.size(); ++k) {
      if (bank.values[k] == a) {
        fixed_loss[k] += sweep.number(r, "future_l2");
        ++counts[k];
      }
    }
  }
  for (std::size_t k = 0; k < fixed_loss.size(); ++k) {
    if (counts[k] != static_cast<int>(val.size())) throw CorruptCheckpoint("sweep table does not cover the bank");
    fixed_loss[k] /= counts[k];
  }
  const double best_fixed = bank.values[argmin_alpha(bank.values, fixed_loss)];
  CsvTable fixed({"alpha", "val_future_l2"});
  for (std::size_t k = 0; k < bank.values.size(); ++k) {
    fixed.add_row({alpha_tag(bank.values[k]), format_number(fixed_loss[k])});
  }
  ctx.emit_csv("calibrate/best_fixed.csv", fixed);

  // gamma: evaluate each distinct (regime, clip(gamma s)) once
  const double lo = bank.alpha_min(), hi = bank.alpha_max();
  const auto line = load_line(ctx);
  std::vector<double> s_val;
  for (const auto& d : val) s_val.push_back(d.task.s);
  std::set<std::pair<std::size_t, double>> pairs;
  std::set<double> alphas;
  for (double g : cfg.selector.gamma_grid) {
    for (std::size_t r = 0; r < val.size(); ++r) {
      const double a = select_scale(s_val[r], g, lo, hi);
      pairs.insert({r, a});
      alphas.insert(a);
    }
  }
  std::map<double, OperatorModel> models;
  for (double a : alphas) models.emplace(a, to_model(compose_at(line, a)));
  const std::vector<std::pair<std::size_t, double>> work(pairs.begin(), pairs.end());
  std::vector<double> losses(work.size());
  const int T = cfg.family.frames, K = cfg.selector.prefix;
  parallel_for(work.size(), ctx.opt.jobs, [&](std::size_t i) {
    losses[i] = mean_future_loss(models.at(work[i].second), val[work[i].first], T, K);
  });
  std::map<std::pair<std::size_t, double>, double> table;
  for (std::size_t i = 0; i < work.size(); ++i) table[work[i]] = losses[i];
  const auto cal = calibrate_gamma(s_val, cfg.selector.gamma_grid, lo, hi,
                                   [&](std::size_t r, double a) { return table.at({r, a}); });
  CsvTable gamma({"gamma", "val_future_l2"});
  for (std::size_t k = 0; k < cal.grid.size(); ++k) {
    gamma.add_row({format_number(cal.grid[k]), format_number(cal.losses[k])});
  }
  ctx.emit_csv("calibrate/gamma.csv", gamma);
  CsvTable kv({"key", "value"});
  kv.add_row({"gamma", format_number(cal.gamma)});
  kv.add_row({"best_fixed_alpha", alpha_tag(best_fixed)});
  ctx.emit_csv("calibrate/calibration.csv", kv);
  ctx.log("gamma = " + format_number(cal.gamma) + ", best fixed alpha = " + alpha_tag(best_fixed));
}

struct Selection {
  std::string selector;
  double alpha = 0.0;
  double score = std::nan("");
  std::string digest;
  std::string objective;
  std::string losses;  // "alpha:loss" pairs joined by ';'
};

std::string candidate_losses(const std::vector<double>& alphas, const std::vector<double>& losses) {
  std::string out;
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    if (k) out += ';';
    out += format_number(alphas[k]) + ":" + format_number(losses[k]);
  }
  return out;
}

std::string sample_key(const std::string& regime, std::uint64_t seed) {
  return regime + "#" + std::to_string(seed);
}

void stage_select(Ctx& ctx) {
  const auto& cfg = ctx.cfg;
  const auto bank = cfg.selector.bank.build();
  const double lo = bank.alpha_min(), hi = bank.alpha_max();
  const auto kv = read_key_values(ctx.path("calibrate/calibration.csv"));
  const double gamma = kv.at("gamma");
  const double best_fixed = kv.at("best_fixed_alpha");

  // per-sample future losses over the bank, from the sweep
  const auto sweep = read_csv(ctx.path("sweep/alpha_sweep_samples.csv"));
  std::map<std::string, std::vector<double>> sweep_future;
  for (std::size_t r = 0; r < sweep.size(); ++r) {
    if (sweep.cell(r, "split") != "eval") continue;
    auto& v = sweep_future[sweep.cell(r, "regime") + "#" + sweep.cell(r, "sample_seed")];
    if (v.empty()) v.assign(bank.values.size(), std::nan(""));
    const double a = sweep.number(r, "alpha");
    for (std::size_t k = 0; k < bank.values.size(); ++k) {
      if (bank.values[k] == a) v[k] = sweep.number(r, "future_l2");
    }
  }

  const auto line = load_line(ctx);
  const BankModels models(line, bank);
  std::vector<std::pair<std::string, BankModels>> ablation_banks;
  for (double step : cfg.selector.bank_step_ablation) {
    BankSpec b = cfg.selector.bank;
    b.step = step;
    ablation_banks.emplace_back("prefix-bank-" + format_number(step), BankModels(line, b.build()));
  }

  const auto eval = load_split(ctx, Split::eval);
  const auto refs = sample_refs(eval);
  const int T = cfg.family.frames, K = cfg.selector.prefix;
  std::vector<std::vector<Selection>> chosen(refs.size());
  ctx.log("selecting alpha for " + std::to_string(refs.size()) + " evaluation trajectories");
  parallel_for(refs.size(), ctx.opt.jobs, [&](std::size_t i) {
    const auto& ds = eval[refs[i].dataset];
    const auto& sample = ds.samples[refs[i].sample];
    const double s = ds.task.s;
    auto& out = chosen[i];
    out.push_back({"best-fixed", best_fixed, std::nan(""), "", "", ""});
    out.push_back({"ccm-coord", select_coord(s, lo, hi), std::nan(""), "", "", ""});
    out.push_back({"ccm-scale", select_scale(s, gamma, lo, hi), std::nan(""), "", "", ""});
    out.push_back({"wrong-sign", wrong_sign(s, lo, hi), std::nan(""), "", "", ""});
    const auto it = sweep_future.find(sample_key(ds.task.name, sample.seed));
    if (it == sweep_future.end()) throw CorruptCheckpoint("sweep has no rows for " + ds.task.name);
    const std::size_t o = argmin_alpha(bank.values, it->second);
    out.push_back({"oracle", bank.values[o], it->second[o], "", "future-l2", candidate_losses(bank.values, it->second)});

    const Trajectory prefix(sample.frames.begin(), sample.frames.begin() + K + 1);
    const auto pick = [&](const std::string& name, const BankModels& m, PrefixObjective obj) {
      const auto r = select_prefix(m.bank(), m.rollout_fn(), prefix, T, obj);
      const std::size_t k = argmin_alpha(r.candidates, r.losses);
      out.push_back({name, r.alpha, r.losses[k], r.inputs_digest, to_string(obj), candidate_losses(r.candidates, r.losses)});
    };
    pick("ccm-prefix", models, cfg.selector.objective);
    for (auto obj : cfg.selector.objective_ablation) pick("prefix-obj-" + to_string(obj), models, obj);
    for (const auto& [name, m] : ablation_banks) pick(name, m, cfg.selector.objective);
  });

  CsvTable t({"family", "regime", "lambda", "s", "sample_seed", "selector", "prefix_k", "objective", "alpha", "score",
              "candidate_losses", "inputs_digest"});
  const std::string family = to_string(cfg.family.family);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& ds = eval[refs[i].dataset];
    for (const auto& sel : chosen[i]) {
      t.add_row({family, ds.task.name, format_number(ds.task.lambda), format_number(ds.task.s),
                 std::to_string(ds.samples[refs[i].sample].seed), sel.selector, std::to_string(K), sel.objective,
                 format_number(sel.alpha), format_number(sel.score), sel.losses, sel.digest});
    }
  }
  ctx.emit_csv("select/selections.csv", t);
}

// evaluate -----------------------------------------------------------------

struct MethodRecord {
  double alpha = std::nan("");
  WindowErrors errors;
  std::map<std::string, double> physics;
  bool exclusion_ok = true;
};

std::vector<std::string> line_methods_in(const CsvTable& selections) {
  std::vector<std::string> out;
  for (std::size_t r = 0; r < selections.size(); ++r) {
    const auto& s = selections.cell(r, "selector");
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  }
  return out;
}

void stage_evaluate(Ctx& ctx, StageResult& result) {
  const auto& cfg = ctx.cfg;
  const int T = cfg.family.frames, K = cfg.selector.prefix;
  const auto bank = cfg.selector.bank.build();
  const auto line = load_line(ctx);
  const auto eval = load_split(ctx, Split::eval);
  const auto refs = sample_refs(eval);
  const auto selections = read_csv(ctx.path("select/selections.csv"));
  const auto selectors = line_methods_in(selections);

  std::map<std::string, double> picked;  // selector @ sample -> alpha
  std::set<double> alphas{0.0};
  for (std::size_t r = 0; r < selections.size(); ++r) {
    const double a = selections.number(r, "alpha");
    picked[selections.cell(r, "selector") + "@" + sample_key(selections.cell(r, "regime"),
                                                             std::stoull(selections.cell(r, "sample_seed")))] = a;
    alphas.insert(a);
  }
  std::map<double, OperatorModel> line_models;
  for (double a : alphas) line_models.emplace(a, to_model(compose_at(line, a)));
  std::map<std::string, OperatorModel> fixed_models{
      {"base", to_model(line.parts.anchor)},
      {"expert-low", to_model(line.parts.expert_low)},
      {"expert-high", to_model(line.parts.expert_high)},
      {"task-arithmetic", to_model(load_ckpt(ctx, kTaRel))},
      {"ties", to_model(load_ckpt(ctx, kTiesRel))},
      {"dare", to_model(load_ckpt(ctx, kDareRel))},
  };

  // Main methods first, then the selector ablations in selection order.
  std::vector<std::string> methods{"base",      "expert-low", "expert-high",     "endpoint-average",
                                   "best-fixed", "ccm-coord", "ccm-scale",       "ccm-prefix",
                                   "oracle",    "wrong-sign", "task-arithmetic", "ties",
                                   "dare",      "ensemble-average", "ensemble-coord"};
  for (const auto& s : selectors) {
    if (std::find(methods.begin(), methods.end(), s) == methods.end()) methods.push_back(s);
  }

  const auto perturb_ok = [&](const Trajectory& pred, const Trajectory& truth, double future) {
    Trajectory bent = pred;
    for (int t = 1; t <= K; ++t) {
      for (double& v : bent[static_cast<std::size_t>(t)].values()) v += 1.0;
    }
    return window_errors(bent, truth, T, K).future == future;
  };

  const std::size_t nm = methods.size();
  std::vector<MethodRecord> records(refs.size() * nm);
  ctx.log("evaluating " + std::to_string(nm) + " methods on " + std::to_string(refs.size()) + " trajectories");
  parallel_for(records.size(), ctx.opt.jobs, [&](std::size_t i) {
    const auto& ref = refs[i / nm];
    const auto& method = methods[i % nm];
    const auto& ds = eval[ref.dataset];
    const auto& truth = ds.samples[ref.sample].frames;
    const std::string key = sample_key(ds.task.name, ds.samples[ref.sample].seed);
    MethodRecord rec;
    Trajectory pred;
    if (const auto f = fixed_models.find(method); f != fixed_models.end()) {
      pred = rollout(f->second, truth.front(), T).frames;
    } else if (method == "endpoint-average") {
      rec.alpha = 0.0;
      pred = rollout(line_models.at(0.0), truth.front(), T).frames;
    } else if (method == "ensemble-average") {
      pred = output_ensemble(std::vector<OperatorModel>{fixed_models.at("expert-low"), fixed_models.at("expert-high")},
                             {0.5, 0.5}, truth.front(), T);
    } else if (method == "ensemble-coord") {
      const double a = picked.at("ccm-coord@" + key);
      rec.alpha = a;
      pred = output_ensemble(std::vector<OperatorModel>{fixed_models.at("expert-low"), fixed_models.at("expert-high")},
                             {(1.0 - a) / 2.0, (1.0 + a) / 2.0}, truth.front(), T);
    } else {
      const auto p = picked.find(method + "@" + key);
      if (p == picked.end()) throw CorruptCheckpoint("no selection for " + method + " on " + key);
      rec.alpha = p->second;
      pred = rollout(line_models.at(p->second), truth.front(), T).frames;
    }
    rec.errors = window_errors(pred, truth, T, K);
    const auto future = split_protocol(T, K).future;
    if (cfg.family.family == FamilyId::rdb) {
      rec.physics = physics_rdb(pred, truth, future, cfg.family.coefficient("h_outer", 1.0)).metrics;
    } else if (cfg.family.family == FamilyId::ns2d) {
      rec.physics = physics_ns2d(pred, truth, future).metrics;
    }
    rec.exclusion_ok = perturb_ok(pred, truth, rec.errors.future);
    records[i] = std::move(rec);
  });
  const auto rec_at = [&](std::size_t sample, const std::string& method) -> const MethodRecord& {
    const auto m = std::find(methods.begin(), methods.end(), method) - methods.begin();
    return records[sample * nm + static_cast<std::size_t>(m)];
  };

  CsvTable regimes({"regime", "lambda", "s", "role", "group", "samples"});
  for (const auto& ds : eval) {
    regimes.add_row({ds.task.name, format_number(ds.task.lambda), format_number(ds.task.s), to_string(ds.task.role),
                     ds.task.group, std::to_string(ds.samples.size())});
  }
  ctx.emit_csv("evaluate/regimes.csv", regimes);

  CsvTable per_sample({"regime", "role", "s", "sample_seed", "method", "alpha", "full_l2", "calibration_l2",
                       "future_l2"});
  CsvTable results({"family", "regime", "method", "metric", "value"});
  const std::string family = to_string(cfg.family.family);
  // regime means, used by the invariants below
  std::map<std::string, std::map<std::string, double>> regime_future;
  for (std::size_t d = 0; d < eval.size(); ++d) {
    const auto& task = eval[d].task;
    for (const auto& method : methods) {
      std::vector<double> full, cal, fut, al;
      std::map<std::string, std::vector<double>> phys;
      for (std::size_t j = 0; j < refs.size(); ++j) {
        if (refs[j].dataset != d) continue;
        const auto& r = rec_at(j, method);
        per_sample.add_row({task.name, to_string(task.role), format_number(task.s),
                            std::to_string(eval[d].samples[refs[j].sample].seed), method, format_number(r.alpha),
                            format_number(r.errors.full), format_number(r.errors.calibration),
                            format_number(r.errors.future)});
        full.push_back(r.errors.full);
        cal.push_back(r.errors.calibration);
        fut.push_back(r.errors.future);
        if (std::isfinite(r.alpha)) al.push_back(r.alpha);
        for (const auto& [k, v] : r.physics) phys[k].push_back(v);
      }
      const auto row = [&](const std::string& metric, double v) {
        results.add_row({family, task.name, method, metric, format_number(v)});
      };
      row("future_l2", mean_of(fut));
      row("full_l2", mean_of(full));
      row("calibration_l2", mean_of(cal));
      if (!al.empty()) row("alpha_mean", mean_of(al));
      for (const auto& [k, v] : phys) row(k, mean_of(v));
      regime_future[task.name][method] = mean_of(fut);
    }
  }
  ctx.emit_csv("evaluate/results_samples.csv", per_sample);
  ctx.emit_csv("evaluate/results.csv", results);

  // Invariant suite -------------------------------------------------------
  const auto sweep = read_csv(ctx.path("sweep/alpha_sweep_samples.csv"));
  std::map<std::string, std::map<double, double>> sweep_future;  // sample key -> alpha -> future
  for (std::size_t r = 0; r < sweep.size(); ++r) {
    if (sweep.cell(r, "split") != "eval") continue;
    sweep_future[sweep.cell(r, "regime") + "#" + sweep.cell(r, "sample_seed")][sweep.number(r, "alpha")] =
        sweep.number(r, "future_l2");
  }
  const auto check = [&](const std::string& name, bool ok, const std::string& detail) {
    result.checks.push_back({name, ok, detail});
  };

  {
    int bad = 0;
    for (std::size_t j = 0; j < refs.size(); ++j) {
      const auto& ds = eval[refs[j].dataset];
      const auto& sw = sweep_future.at(sample_key(ds.task.name, ds.samples[refs[j].sample].seed));
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [a, v] : sw) best = std::min(best, v);
      if (rec_at(j, "oracle").errors.future != best) ++bad;
      if (rec_at(j, "expert-low").errors.future != sw.at(-1.0)) ++bad;
      if (rec_at(j, "expert-high").errors.future != sw.at(1.0)) ++bad;
      if (rec_at(j, "endpoint-average").errors.future != sw.at(0.0)) ++bad;
    }
    check("sweep_consistency", bad == 0,
          std::to_string(bad) + " mismatches between fresh rollouts and the sweep (oracle, alpha = -1, 0, +1)");
  }
  {
    int bad = 0;
    for (const auto& ds : eval) {
      const double oracle = regime_future.at(ds.task.name).at("oracle");
      for (double a : bank.values) {
        std::vector<double> v;
        for (const auto& s : ds.samples) v.push_back(sweep_future.at(sample_key(ds.task.name, s.seed)).at(a));
        if (!(oracle <= mean_of(v))) ++bad;
      }
    }
    check("oracle_dominance", bad == 0, std::to_string(bad) + " (regime, alpha) pairs beat the oracle mean");
  }
  {
    int bad = 0;
    for (const auto& r : records) bad += r.exclusion_ok ? 0 : 1;
    check("future_index_exclusion", bad == 0,
          std::to_string(bad) + " records whose future metric moved when calibration frames were perturbed");
  }
  {
    int bad = 0;
    const std::string dflt = "prefix-obj-" + to_string(cfg.selector.objective);
    if (std::find(methods.begin(), methods.end(), dflt) != methods.end()) {
      for (std::size_t j = 0; j < refs.size(); ++j) {
        if (rec_at(j, dflt).alpha != rec_at(j, "ccm-prefix").alpha) ++bad;
      }
    }
    check("prefix_objective_consistency", bad == 0, std::to_string(bad) + " samples disagree with ccm-prefix");
  }
  {
    int bad = 0;
    for (const auto& r : records) {
      if (!std::isfinite(r.errors.future) || !std::isfinite(r.errors.full)) ++bad;
    }
    check("finite_metrics", bad == 0, std::to_string(bad) + " non-finite rollout metrics");
  }
  CsvTable inv({"check", "passed", "detail"});
  for (const auto& c : result.checks) inv.add_row({c.name, c.passed ? "true" : "false", c.detail});
  ctx.emit_csv("evaluate/invariants.csv", inv);

  // Paired per-sample improvements over the endpoint average on OOD samples.
  CsvTable boot({"method", "baseline", "group", "samples", "mean", "lo", "hi", "level"});
  std::vector<std::size_t> ood;
  for (std::size_t j = 0; j < refs.size(); ++j) {
    const auto role = eval[refs[j].dataset].task.role;
    if (role == RegimeRole::ood_low || role == RegimeRole::ood_high) ood.push_back(j);
  }
  if (ood.size() >= 2) {
    for (const std::string m : {"ccm-coord", "ccm-scale", "ccm-prefix", "best-fixed", "oracle", "wrong-sign"}) {
      std::vector<double> gain;
      for (std::size_t j : ood) gain.push_back(rec_at(j, "endpoint-average").errors.future - rec_at(j, m).errors.future);
      const auto ci = bootstrap_ci(gain, cfg.evaluation.bootstrap_resamples, cfg.evaluation.bootstrap_level,
                                   cfg.stream_seed(5));
      boot.add_row({m, "endpoint-average", "ood", std::to_string(gain.size()), format_number(ci.mean),
                    format_number(ci.lo), format_number(ci.hi), format_number(cfg.evaluation.bootstrap_level)});
    }
  }
  ctx.emit_csv("evaluate/bootstrap.csv", boot);

  CsvTable wl({"method", "baseline", "regimes", "wins", "losses", "negative_regret"});
  for (const std::string baseline : {"base", "endpoint-average"}) {
    for (const auto& m : methods) {
      if (m == baseline) continue;
      std::vector<double> b, v;
      for (const auto& ds : eval) {
        b.push_back(regime_future.at(ds.task.name).at(baseline));
        v.push_back(regime_future.at(ds.task.name).at(m));
      }
      const auto w = win_loss_regret(b, v);
      wl.add_row({m, baseline, std::to_string(b.size()), std::to_string(w.wins), std::to_string(w.losses),
                  format_number(w.negative_regret)});
    }
  }
  ctx.emit_csv("evaluate/win_loss.csv", wl);
}

// theory-audit -------------------------------------------------------------

void stage_theory_audit(Ctx& ctx, StageResult& result) {
  const auto& cfg = ctx.cfg;
  const auto line = load_line(ctx);
  const auto bank = cfg.selector.bank.build();
  const auto probes = make_probe_batch(cfg.family.seed_bank, cfg.theory.probes);
  ctx.log("bound audit over " + std::to_string(bank.values.size()) + " alphas with " +
          std::to_string(probes.seeds.size()) + " probe trajectories");
  const auto rep = bound_audit(line, cfg.family, bank, probes, ctx.opt.jobs);

  const auto interior = [&](double a) { return a > bank.alpha_min() && a < bank.alpha_max(); };
  CsvTable audit({"alpha", "interior", "measured", "k_e", "k_f", "k_s", "bound", "bound_ke", "slack", "tolerance",
                  "flagged", "mismatch_measured", "mismatch_bound"});
  int flagged = 0;
  bool endpoints_exact = true;
  for (const auto& r : rep.rows) {
    audit.add_row({format_number(r.alpha), interior(r.alpha) ? "true" : "false", format_number(r.measured),
                   format_number(r.k_e), format_number(r.k_f), format_number(r.k_s), format_number(r.bound),
                   format_number(r.bound_ke), format_number(r.slack), format_number(r.tolerance),
                   r.flagged ? "true" : "false", format_number(r.mismatch_measured),
                   format_number(r.mismatch_bound)});
    if (interior(r.alpha) && r.flagged) ++flagged;
    if (std::abs(r.alpha) == 1.0 && r.slack != 0.0) endpoints_exact = false;
  }
  ctx.emit_csv("theory/bound_audit.csv", audit);
  CsvTable summary({"key", "value"});
  summary.add_row({"eps_minus", format_number(rep.eps_minus)});
  summary.add_row({"eps_plus", format_number(rep.eps_plus)});
  summary.add_row({"lipschitz_s", format_number(rep.lipschitz_s)});
  summary.add_row({"delta", format_number(rep.delta)});
  summary.add_row({"probes", std::to_string(probes.seeds.size())});
  ctx.emit_csv("theory/bound_summary.csv", summary);

  std::vector<double> grid;
  for (int k = 0; k <= 24; ++k) grid.push_back(-1.5 + 0.125 * k);
  const auto quad = verify_lemma_synthetic([](double t) { return std::vector<double>{t * t}; },
                                           [](double, double) { return 2.0; }, grid);
  const auto sine = verify_lemma_synthetic([](double t) { return std::vector<double>{std::sin(t)}; },
                                           [](double lo, double hi) { return std::sin(std::max(std::abs(lo), std::abs(hi))); },
                                           grid);
  CsvTable lemma({"curve", "alpha", "error", "bound"});
  double quad_gap = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    lemma.add_row({"quadratic", format_number(grid[k]), format_number(quad.errors[k]), format_number(quad.bounds[k])});
    quad_gap = std::max(quad_gap, std::abs(quad.bounds[k] - quad.errors[k]));
  }
  for (std::size_t k = 0; k < grid.size(); ++k) {
    lemma.add_row({"sine", format_number(grid[k]), format_number(sine.errors[k]), format_number(sine.bounds[k])});
  }
  ctx.emit_csv("theory/lemma.csv", lemma);

  const auto fd = finite_difference_orders(
      [](double q) { return std::vector<double>{std::sin(q), std::cos(q)}; }, {1.0, 0.0}, {0.4, 0.2, 0.1, 0.05});
  CsvTable fdt({"h", "shared_error", "directional_error"});
  for (std::size_t k = 0; k < fd.hs.size(); ++k) {
    fdt.add_row({format_number(fd.hs[k]), format_number(fd.shared_errors[k]), format_number(fd.directional_errors[k])});
  }
  ctx.emit_csv("theory/fd_orders.csv", fdt);

  const double ss = fd.shared_slope.value_or(std::nan(""));
  const double ds = fd.directional_slope.value_or(std::nan(""));
  result.checks.push_back({"bound_interior", flagged == 0,
                           std::to_string(flagged) + " interior alphas with slack below -tolerance"});
  result.checks.push_back({"bound_endpoints_exact", endpoints_exact, "slack is zero at alpha = -1, +1"});
  result.checks.push_back({"lemma_quadratic_equality", quad_gap <= 1e-12, "max |bound - error| = " + format_number(quad_gap)});
  result.checks.push_back({"lemma_sine_slack", sine.min_slack >= 0.0, "min slack = " + format_number(sine.min_slack)});
  result.checks.push_back({"fd_slopes", std::abs(ss - 2.0) <= 0.2 && std::abs(ds - 3.0) <= 0.2,
                           "shared " + format_number(ss) + ", directional " + format_number(ds)});
  CsvTable inv({"check", "passed", "detail"});
  for (const auto& c : result.checks) inv.add_row({c.name, c.passed ? "true" : "false", c.detail});
  ctx.emit_csv("theory/invariants.csv", inv);
}

// report -------------------------------------------------------------------

bool is_ood(const std::string& role) { return role == "ood-low" || role == "ood-high"; }

std::string fixed(double v, int digits = 4) {
  if (!std::isfinite(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*e", digits - 1, v);
  return buf;
}

std::string percent(double v) {
  if (!std::isfinite(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.1f%%", 100.0 * v);
  return buf;
}

void stage_report(Ctx& ctx) {
  const auto& cfg = ctx.cfg;
  const auto bank = cfg.selector.bank.build();
  const auto results = read_csv(ctx.path("evaluate/results.csv"));
  const auto regimes = read_csv(ctx.path("evaluate/regimes.csv"));
  const auto sweep = read_csv(ctx.path("sweep/alpha_sweep.csv"));

  const auto main = build_main_table(results, regimes);
  ctx.emit_csv("report/main_table.csv", main);
  const auto law = build_coordinate_law(sweep, regimes, bank.alpha_min(), bank.alpha_max());
  ctx.emit_csv("report/coordinate_law.csv", law);

  PlotSeries oracle_pts{"oracle alpha (regime)", {}, {}, false, true};
  PlotSeries coord_pts{"clip(s)", {}, {}, true, false, true};
  for (std::size_t r = 0; r < law.size(); ++r) {
    oracle_pts.x.push_back(law.number(r, "s"));
    oracle_pts.y.push_back(law.number(r, "oracle_alpha"));
  }
  std::vector<double> xs = oracle_pts.x;
  std::sort(xs.begin(), xs.end());
  for (double x : xs) {
    coord_pts.x.push_back(x);
    coord_pts.y.push_back(select_coord(x, bank.alpha_min(), bank.alpha_max()));
  }
  ctx.emit_text("report/coordinate_law.svg",
                render_line_plot({"Coordinate law: oracle alpha vs normalized coordinate", "s", "alpha",
                                  {oracle_pts, coord_pts}}));

  LinePlot sweep_plot{"Alpha sweep: future-window rollout L2 per evaluation regime", "alpha", "future L2", {}};
  for (std::size_t r = 0; r < regimes.size(); ++r) {
    const auto& name = regimes.cell(r, "regime");
    PlotSeries s{name + " (s=" + regimes.cell(r, "s") + ")", {}, {}};
    for (std::size_t k = 0; k < sweep.size(); ++k) {
      if (sweep.cell(k, "regime") != name) continue;
      s.x.push_back(sweep.number(k, "alpha"));
      s.y.push_back(sweep.number(k, "future_l2"));
    }
    sweep_plot.series.push_back(s);
  }
  ctx.emit_text("report/alpha_sweep.svg", render_line_plot(sweep_plot));

  BarPlot bars{"OOD mean future-window rollout L2 by method", "future L2", {}, {}};
  for (std::size_t r = 0; r < main.size(); ++r) {
    const auto& m = main.cell(r, "method");
    if (m.rfind("prefix-", 0) == 0) continue;
    bars.labels.push_back(m);
    bars.values.push_back(main.number(r, "ood_mean"));
  }
  ctx.emit_text("report/ood_comparison.svg", render_bar_plot(bars));

  std::string audit_text;
  if (cfg.stages.theory_audit) {
    const auto audit = read_csv(ctx.path("theory/bound_audit.csv"));
    PlotSeries measured{"measured error", {}, {}};
    PlotSeries bound{"bound (K_F + K_S)", {}, {}};
    PlotSeries bound_ke{"bound (K_E)", {}, {}, true, true, true};
    for (std::size_t r = 0; r < audit.size(); ++r) {
      const double a = audit.number(r, "alpha");
      measured.x.push_back(a);
      measured.y.push_back(audit.number(r, "measured"));
      bound.x.push_back(a);
      bound.y.push_back(audit.number(r, "bound"));
      bound_ke.x.push_back(a);
      bound_ke.y.push_back(audit.number(r, "bound_ke"));
    }
    ctx.emit_text("report/bound_audit.svg",
                  render_line_plot({"Continuation bound audit", "alpha", "rho-norm error", {measured, bound, bound_ke}}));
    int interior = 0, flagged = 0;
    double min_slack = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < audit.size(); ++r) {
      if (audit.cell(r, "interior") != "true") continue;
      ++interior;
      if (audit.cell(r, "flagged") == "true") ++flagged;
      const double a = audit.number(r, "alpha");
      if (std::abs(a) != 1.0) min_slack = std::min(min_slack, audit.number(r, "slack"));
    }
    audit_text = "Bound audit (theory/bound_audit.csv): " + std::to_string(interior - flagged) + "/" +
                 std::to_string(interior) + " interior alphas satisfy bound >= measured within tolerance; "
                 "min slack off the endpoints " + fixed(min_slack) + ".\n";
  }

  std::string s;
  s += "Experiment " + cfg.name + " (family " + to_string(cfg.family.family) + ", axis " + cfg.family.axis +
       ", seed " + std::to_string(cfg.seed) + ")\n";
  s += "config digest " + ctx.digest + "\n\n";
  s += "Metric: per-frame relative L2 ||pred - truth|| / ||truth||, averaged over frames per sample, then over\n";
  s += "samples per regime. Reported windows exclude the K = " + std::to_string(cfg.selector.prefix) +
       " calibration frames (frames " + std::to_string(cfg.selector.prefix + 1) + ".." +
       std::to_string(cfg.family.frames) + "). Interpolation and OOD columns average regime means;\n";
  s += "gains are (baseline - method) / baseline on those averages. Source: evaluate/results.csv.\n\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %12s %12s %12s %10s %10s\n", "method", "interp", "ood_mean", "ood_worst",
                "vs_base", "vs_avg");
  s += line;
  for (std::size_t r = 0; r < main.size(); ++r) {
    std::snprintf(line, sizeof line, "%-28s %12s %12s %12s %10s %10s\n", main.cell(r, "method").c_str(),
                  fixed(main.number(r, "interp_mean")).c_str(), fixed(main.number(r, "ood_mean")).c_str(),
                  fixed(main.number(r, "ood_worst")).c_str(), percent(main.number(r, "gain_vs_base_ood")).c_str(),
                  percent(main.number(r, "gain_vs_average_ood")).c_str());
    s += line;
  }
  const auto kv = read_key_values(ctx.path("calibrate/calibration.csv"));
  s += "\nCalibration (calibrate/calibration.csv): gamma = " + format_number(kv.at("gamma")) +
       ", best fixed alpha = " + format_number(kv.at("best_fixed_alpha")) + "\n";
  if (law.size() >= 3) {
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t r = 0; r < law.size(); ++r) pairs.emplace_back(law.number(r, "oracle_alpha"), law.number(r, "s"));
    try {
      s += "Coordinate law (report/coordinate_law.csv): corr(oracle alpha, s) = " +
           format_number(coordinate_correlation(pairs)) + "\n";
    } catch (const DegenerateInput&) {
      s += "Coordinate law (report/coordinate_law.csv): correlation undefined (constant oracle alpha)\n";
    }
  }
  s += audit_text;
  ctx.emit_text("report/summary.txt", s);
}

}  // namespace

CsvTable build_main_table(const CsvTable& results, const CsvTable& regimes) {
  CsvTable out({"method", "interp_mean", "ood_mean", "ood_worst", "gain_vs_base_ood", "gain_vs_average_ood",
                "gain_vs_base_interp", "gain_vs_average_interp"});
  std::map<std::string, std::string> role;
  for (std::size_t r = 0; r < regimes.size(); ++r) role[regimes.cell(r, "regime")] = regimes.cell(r, "role");
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> ood, interp;
  for (std::size_t r = 0; r < results.size(); ++r) {
    if (results.cell(r, "metric") != "future_l2") continue;
    const auto& m = results.cell(r, "method");
    if (std::find(order.begin(), order.end(), m) == order.end()) order.push_back(m);
    const auto it = role.find(results.cell(r, "regime"));
    if (it == role.end()) throw InvalidArgument("results mention unknown regime " + results.cell(r, "regime"));
    (is_ood(it->second) ? ood : interp)[m].push_back(results.number(r, "value"));
  }
  const auto worst = [](const std::vector<double>& v) {
    return v.empty() ? std::nan("") : *std::max_element(v.begin(), v.end());
  };
  const auto gain = [](double base, double method) {
    return std::isfinite(base) && base != 0.0 ? relative_gain(base, method) : std::nan("");
  };
  const double base_ood = ood.count("base") ? mean_of(ood["base"]) : std::nan("");
  const double avg_ood = ood.count("endpoint-average") ? mean_of(ood["endpoint-average"]) : std::nan("");
  const double base_in = interp.count("base") ? mean_of(interp["base"]) : std::nan("");
  const double avg_in = interp.count("endpoint-average") ? mean_of(interp["endpoint-average"]) : std::nan("");
  for (const auto& m : order) {
    const double o = mean_of(ood[m]);
    const double i = mean_of(interp[m]);
    out.add_row({m, format_number(i), format_number(o), format_number(worst(ood[m])), format_number(gain(base_ood, o)),
                 format_number(gain(avg_ood, o)), format_number(gain(base_in, i)), format_number(gain(avg_in, i))});
  }
  return out;
}

CsvTable build_coordinate_law(const CsvTable& sweep, const CsvTable& regimes, double alpha_min, double alpha_max) {
  CsvTable out({"regime", "s", "oracle_alpha", "oracle_future_l2", "coord_alpha"});
  for (std::size_t r = 0; r < regimes.size(); ++r) {
    const auto& name = regimes.cell(r, "regime");
    std::vector<double> alphas, losses;
    for (std::size_t k = 0; k < sweep.size(); ++k) {
      if (sweep.cell(k, "regime") != name) continue;
      alphas.push_back(sweep.number(k, "alpha"));
      losses.push_back(sweep.number(k, "future_l2"));
    }
    if (alphas.empty()) continue;
    const auto best = argmin_alpha(alphas, losses);
    const double s = regimes.number(r, "s");
    out.add_row({name, format_number(s), format_number(alphas[best]), format_number(losses[best]),
                 format_number(select_coord(s, alpha_min, alpha_max))});
  }
  return out;
}

StageResult run_stage(const ExperimentConfig& config, Stage stage, const RunOptions& options) {
  config.validate();
  if (options.out.empty()) throw InvalidArgument("output directory must be set");
  Ctx ctx{config, options, stage, config_digest(config), {}};
  const auto inputs = check_upstream(ctx);
  fs::create_directories(options.out);
  write_file_atomic(options.out / "config.json", config_to_json_text(config));

  StageResult result;
  result.stage = stage;
  const auto t0 = Clock::now();
  ctx.log("start");
  switch (stage) {
    case Stage::gen_data: stage_gen_data(ctx); break;
    case Stage::train_anchor: stage_train_anchor(ctx); break;
    case Stage::finetune_endpoints: stage_finetune_endpoints(ctx); break;
    case Stage::merge_sweep: stage_merge_sweep(ctx); break;
    case Stage::calibrate: stage_calibrate(ctx); break;
    case Stage::select: stage_select(ctx); break;
    case Stage::evaluate: stage_evaluate(ctx, result); break;
    case Stage::theory_audit: stage_theory_audit(ctx, result); break;
    case Stage::report: stage_report(ctx); break;
  }
  result.wall_time_s = std::chrono::duration<double>(Clock::now() - t0).count();
  result.outputs = ctx.outputs;
  write_manifests(ctx, inputs, result);
  for (const auto& c : result.checks) ctx.log(std::string(c.passed ? "PASS " : "FAIL ") + c.name + ": " + c.detail);
  ctx.log("done in " + format_number(std::round(result.wall_time_s * 10.0) / 10.0) + " s, " +
          std::to_string(result.outputs.size()) + " outputs");
  return result;
}

std::vector<StageResult> run_pipeline(const ExperimentConfig& config, const RunOptions& options) {
  std::vector<StageResult> out;
  for (Stage s : pipeline_stages()) {
    if (s == Stage::theory_audit && !config.stages.theory_audit) continue;
    out.push_back(run_stage(config, s, options));
  }
  return out;
}

VerifyResult verify_run(const fs::path& out) {
  VerifyResult v;
  const auto tpath = out / "manifest.json";
  if (!fs::exists(tpath)) throw MissingArtifact("no manifest.json in " + out.string());
  const json top = read_json(tpath);
  const std::string digest = top.at("config_digest").get<std::string>();
  std::map<std::string, std::string> all_outputs;
  for (Stage s : pipeline_stages()) {
    const auto name = to_string(s);
    if (!top.at("stages").contains(name)) continue;
    const json m = read_json(out / manifest_rel(s));
    bool ok = true;
    std::string why;
    if (m.at("config_digest").get<std::string>() != digest) {
      ok = false;
      why = "config digest differs from the top-level manifest";
    }
    std::map<std::string, std::string> outputs;
    for (const auto& [rel, d] : m.at("outputs").items()) {
      const auto p = out / rel;
      const std::string now = fs::exists(p) ? sha256_file_hex(p) : std::string("missing");
      outputs[rel] = now;
      if (now != d.get<std::string>()) {
        ok = false;
        why = rel + (now == "missing" ? " is missing" : " digest changed");
      }
    }
    if (outputs_digest(outputs) != top.at("stages").at(name).at("outputs_digest").get<std::string>() && ok) {
      ok = false;
      why = "outputs digest differs from the top-level manifest";
    }
    for (const auto& [rel, d] : m.at("inputs").items()) {
      const auto it = all_outputs.find(rel);
      if (it == all_outputs.end() || it->second != d.get<std::string>()) {
        ok = false;
        why = "input " + rel + " does not match the current upstream output";
      }
    }
    for (const auto& [rel, d] : outputs) all_outputs[rel] = d;
    v.ok = v.ok && ok;
    v.lines.push_back(name + ": " + (ok ? "ok" : "MISMATCH (" + why + ")") + " [" +
                      std::to_string(outputs.size()) + " outputs]");
  }
  return v;
}

}  // namespace ccm
