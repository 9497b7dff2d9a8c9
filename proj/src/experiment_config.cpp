#include "ccm/experiment_config.hpp"

#include <set>

#include "ccm/byte_io.hpp"
#include "ccm/digest.hpp"
#include "ccm/error.hpp"
#include "ccm/rng.hpp"
#include "json.hpp"

namespace ccm {

using json = nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InvalidArgument(where_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw InvalidArgument(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw InvalidArgument("unknown config key " + where_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json family_to_json(const FamilySpec& f) {
  json j;
  j["family"] = to_string(f.family);
  j["axis"] = f.axis;
  j["lambda_low"] = f.lambda_low;
  j["lambda_high"] = f.lambda_high;
  j["lambda_center"] = f.lambda_center ? json(*f.lambda_center) : json(nullptr);
  j["coefficients"] = f.coefficients;
  j["height"] = f.height;
  j["width"] = f.width;
  j["lx"] = f.lx;
  j["ly"] = f.ly;
  j["frames"] = f.frames;
  j["frame_dt"] = f.frame_dt;
  j["substeps"] = f.substeps;
  j["cfl"] = f.cfl;
  j["seed_bank"] = f.seed_bank;
  json regimes = json::array();
  for (const auto& r : f.regimes) {
    regimes.push_back({{"name", r.name},
                       {"lambda", r.lambda},
                       {"role", to_string(r.role)},
                       {"split", to_string(r.split)},
                       {"group", r.group}});
  }
  j["regimes"] = regimes;
  return j;
}

FamilySpec family_from_json(const json& j) {
  FamilySpec f;
  ObjectReader r(j, "family");
  std::string family = to_string(f.family);
  r.get("family", family);
  f.family = family_from_string(family);
  r.get("axis", f.axis);
  r.get("lambda_low", f.lambda_low);
  r.get("lambda_high", f.lambda_high);
  if (const json* c = r.child("lambda_center"); c && !c->is_null()) f.lambda_center = c->get<double>();
  r.get("coefficients", f.coefficients);
  r.get("height", f.height);
  r.get("width", f.width);
  r.get("lx", f.lx);
  r.get("ly", f.ly);
  r.get("frames", f.frames);
  r.get("frame_dt", f.frame_dt);
  r.get("substeps", f.substeps);
  r.get("cfl", f.cfl);
  r.get("seed_bank", f.seed_bank);
  if (const json* regs = r.child("regimes")) {
    if (!regs->is_array()) throw InvalidArgument("family.regimes must be an array");
    for (const auto& item : *regs) {
      ObjectReader rr(item, "family.regimes[]");
      RegimeDef d;
      std::string role = "support", split = "train";
      rr.get("name", d.name);
      rr.get("lambda", d.lambda);
      rr.get("role", role);
      rr.get("split", split);
      rr.get("group", d.group);
      rr.finish();
      d.role = role_from_string(role);
      d.split = split_from_string(split);
      f.regimes.push_back(d);
    }
  }
  r.finish();
  return f;
}

json train_to_json(const TrainConfig& t) {
  return {{"steps", t.steps},          {"batch", t.batch},
          {"lr", t.lr},                {"beta1", t.beta1},
          {"beta2", t.beta2},          {"eps", t.eps},
          {"schedule", t.schedule},    {"unroll", t.unroll},
          {"log_every", t.log_every},  {"monitor_every", t.monitor_every},
          {"monitor_batch", t.monitor_batch}};
}

TrainConfig train_from_json(const json& j, const std::string& where) {
  TrainConfig t;
  ObjectReader r(j, where);
  r.get("steps", t.steps);
  r.get("batch", t.batch);
  r.get("lr", t.lr);
  r.get("beta1", t.beta1);
  r.get("beta2", t.beta2);
  r.get("eps", t.eps);
  r.get("schedule", t.schedule);
  r.get("unroll", t.unroll);
  r.get("log_every", t.log_every);
  r.get("monitor_every", t.monitor_every);
  r.get("monitor_batch", t.monitor_batch);
  r.finish();
  return t;
}

json bank_to_json(const BankSpec& b) { return {{"min", b.min}, {"max", b.max}, {"step", b.step}}; }

BankSpec bank_from_json(const json& j) {
  BankSpec b;
  ObjectReader r(j, "selector.bank");
  r.get("min", b.min);
  r.get("max", b.max);
  r.get("step", b.step);
  r.finish();
  return b;
}

std::vector<std::string> objective_names(const std::vector<PrefixObjective>& v) {
  std::vector<std::string> out;
  for (auto o : v) out.push_back(to_string(o));
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (name.empty()) throw InvalidArgument("config name must be non-empty");
  family.validate();
  if (samples.train < 1 || samples.val < 0 || samples.eval < 1) {
    throw InvalidArgument("samples: train >= 1, val >= 0, eval >= 1 required");
  }
  operator_config().validate();
  anchor_training.validate();
  expert_training.validate();
  const auto bank = selector.bank.build();
  bank.validate();
  SelectorConfig sc;
  sc.prefix = selector.prefix;
  sc.validate(family.frames);
  if (selector.gamma_grid.empty()) throw InvalidArgument("selector.gamma_grid must be non-empty");
  for (double g : selector.gamma_grid) {
    if (!(g > 0.0)) throw InvalidArgument("selector.gamma_grid entries must be positive");
  }
  for (double step : selector.bank_step_ablation) {
    BankSpec b = selector.bank;
    b.step = step;
    b.build().validate();
  }
  if (!(merges.ties_trim > 0.0 && merges.ties_trim <= 1.0)) {
    throw InvalidArgument("merges.ties_trim must be in (0, 1]");
  }
  if (!(merges.dare_drop >= 0.0 && merges.dare_drop < 1.0)) {
    throw InvalidArgument("merges.dare_drop must be in [0, 1)");
  }
  if (evaluation.bootstrap_resamples < 1) throw InvalidArgument("bootstrap_resamples must be >= 1");
  if (!(evaluation.bootstrap_level > 0.0 && evaluation.bootstrap_level < 1.0)) {
    throw InvalidArgument("bootstrap_level must be in (0, 1)");
  }
  if (theory.probes < 1) throw InvalidArgument("theory.probes must be >= 1");

  int lows = 0, highs = 0, supports = 0, evals = 0;
  for (const auto& r : family.regimes) {
    if (r.role == RegimeRole::endpoint_low && r.split == Split::train) ++lows;
    if (r.role == RegimeRole::endpoint_high && r.split == Split::train) ++highs;
    if (r.role == RegimeRole::support && r.split == Split::train) ++supports;
    if (r.split == Split::eval) ++evals;
  }
  if (lows != 1 || highs != 1) {
    throw InvalidArgument("family needs exactly one training regime per endpoint");
  }
  if (supports < 1) throw InvalidArgument("family needs at least one training support regime");
  if (evals < 1) throw InvalidArgument("family needs at least one evaluation regime");
}

OperatorConfig ExperimentConfig::operator_config() const {
  OperatorConfig c = op;
  c.channels = family.channel_count();
  c.grid_h = family.height;
  c.grid_w = family.width;
  return c;
}

std::uint64_t ExperimentConfig::stream_seed(std::uint64_t stream) const {
  return mix_seed(seed, stream);
}

std::string config_to_json_text(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["family"] = family_to_json(c.family);
  j["samples"] = {{"train", c.samples.train}, {"val", c.samples.val}, {"eval", c.samples.eval}};
  j["operator"] = {{"width", c.op.width}, {"modes", c.op.modes}, {"layers", c.op.layers}};
  j["anchor_training"] = train_to_json(c.anchor_training);
  j["expert_training"] = train_to_json(c.expert_training);
  j["selector"] = {{"bank", bank_to_json(c.selector.bank)},
                   {"prefix", c.selector.prefix},
                   {"objective", to_string(c.selector.objective)},
                   {"gamma_grid", c.selector.gamma_grid},
                   {"objective_ablation", objective_names(c.selector.objective_ablation)},
                   {"bank_step_ablation", c.selector.bank_step_ablation}};
  j["merges"] = {{"ties_trim", c.merges.ties_trim},
                 {"ties_scale", c.merges.ties_scale},
                 {"dare_drop", c.merges.dare_drop},
                 {"task_arithmetic_low", c.merges.task_arithmetic_low},
                 {"task_arithmetic_high", c.merges.task_arithmetic_high}};
  j["evaluation"] = {{"bootstrap_resamples", c.evaluation.bootstrap_resamples},
                     {"bootstrap_level", c.evaluation.bootstrap_level}};
  j["theory"] = {{"probes", c.theory.probes}};
  j["stages"] = {{"theory_audit", c.stages.theory_audit}};
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  ObjectReader r(j, "config");
  r.get("name", c.name);
  r.get("seed", c.seed);
  if (const json* f = r.child("family")) c.family = family_from_json(*f);
  if (const json* s = r.child("samples")) {
    ObjectReader sr(*s, "samples");
    sr.get("train", c.samples.train);
    sr.get("val", c.samples.val);
    sr.get("eval", c.samples.eval);
    sr.finish();
  }
  if (const json* o = r.child("operator")) {
    ObjectReader orr(*o, "operator");
    orr.get("width", c.op.width);
    orr.get("modes", c.op.modes);
    orr.get("layers", c.op.layers);
    orr.finish();
  }
  if (const json* t = r.child("anchor_training")) c.anchor_training = train_from_json(*t, "anchor_training");
  if (const json* t = r.child("expert_training")) c.expert_training = train_from_json(*t, "expert_training");
  if (const json* s = r.child("selector")) {
    ObjectReader sr(*s, "selector");
    if (const json* b = sr.child("bank")) c.selector.bank = bank_from_json(*b);
    sr.get("prefix", c.selector.prefix);
    std::string objective = to_string(c.selector.objective);
    sr.get("objective", objective);
    c.selector.objective = prefix_objective_from_string(objective);
    sr.get("gamma_grid", c.selector.gamma_grid);
    std::vector<std::string> ablation = objective_names(c.selector.objective_ablation);
    sr.get("objective_ablation", ablation);
    c.selector.objective_ablation.clear();
    for (const auto& a : ablation) c.selector.objective_ablation.push_back(prefix_objective_from_string(a));
    sr.get("bank_step_ablation", c.selector.bank_step_ablation);
    sr.finish();
  }
  if (const json* m = r.child("merges")) {
    ObjectReader mr(*m, "merges");
    mr.get("ties_trim", c.merges.ties_trim);
    mr.get("ties_scale", c.merges.ties_scale);
    mr.get("dare_drop", c.merges.dare_drop);
    mr.get("task_arithmetic_low", c.merges.task_arithmetic_low);
    mr.get("task_arithmetic_high", c.merges.task_arithmetic_high);
    mr.finish();
  }
  if (const json* e = r.child("evaluation")) {
    ObjectReader er(*e, "evaluation");
    er.get("bootstrap_resamples", c.evaluation.bootstrap_resamples);
    er.get("bootstrap_level", c.evaluation.bootstrap_level);
    er.finish();
  }
  if (const json* t = r.child("theory")) {
    ObjectReader tr(*t, "theory");
    tr.get("probes", c.theory.probes);
    tr.finish();
  }
  if (const json* s = r.child("stages")) {
    ObjectReader sr(*s, "stages");
    sr.get("theory_audit", c.stages.theory_audit);
    sr.finish();
  }
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifact("config file not found: " + path.string());
  try {
    return config_from_json_text(read_file_bytes(path));
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

std::string config_digest(const ExperimentConfig& config) {
  return sha256_hex(config_to_json_text(config));
}

}  // namespace ccm
