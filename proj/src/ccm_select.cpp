#include "ccm/ccm_select.hpp"

#include <algorithm>
#include <cmath>

#include "ccm/digest.hpp"
#include "ccm/error.hpp"
#include "ccm/parallel.hpp"

namespace ccm {

void AlphaBank::validate() const {
  if (values.empty()) throw InvalidArgument("alpha bank is empty");
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!std::isfinite(values[k])) throw InvalidArgument("alpha bank entries must be finite");
    if (k > 0 && !(values[k - 1] < values[k])) {
      throw InvalidArgument("alpha bank must be strictly increasing");
    }
  }
  for (double required : {-1.0, 0.0, 1.0}) {
    if (std::find(values.begin(), values.end(), required) == values.end()) {
      throw InvalidArgument("alpha bank must contain -1, 0 and +1");
    }
  }
}

AlphaBank default_bank() { return uniform_bank(-1.5, 1.5, 0.25); }

AlphaBank uniform_bank(double lo, double hi, double step) {
  if (!(step > 0.0) || !(lo <= hi)) throw InvalidArgument("invalid uniform bank");
  AlphaBank b;
  const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  for (long k = 0; k <= n; ++k) b.values.push_back(lo + static_cast<double>(k) * step);
  b.validate();
  return b;
}

std::string to_string(SelectorMode mode) {
  switch (mode) {
    case SelectorMode::coord: return "coord";
    case SelectorMode::scale: return "scale";
    case SelectorMode::prefix: return "prefix";
    case SelectorMode::oracle: return "oracle";
    case SelectorMode::wrong_sign: return "wrong-sign";
  }
  return "unknown";
}

std::string to_string(PrefixObjective objective) {
  switch (objective) {
    case PrefixObjective::full_prefix: return "full-prefix";
    case PrefixObjective::mean_step: return "mean-step";
    case PrefixObjective::first_step: return "first-step";
    case PrefixObjective::final_step: return "final-step";
    case PrefixObjective::recency_weighted: return "recency-weighted";
  }
  return "unknown";
}

SelectorMode selector_mode_from_string(const std::string& text) {
  for (auto m : {SelectorMode::coord, SelectorMode::scale, SelectorMode::prefix,
                 SelectorMode::oracle, SelectorMode::wrong_sign}) {
    if (to_string(m) == text) return m;
  }
  throw InvalidArgument("unknown selector mode '" + text + "'");
}

PrefixObjective prefix_objective_from_string(const std::string& text) {
  for (auto o : {PrefixObjective::full_prefix, PrefixObjective::mean_step,
                 PrefixObjective::first_step, PrefixObjective::final_step,
                 PrefixObjective::recency_weighted}) {
    if (to_string(o) == text) return o;
  }
  throw InvalidArgument("unknown prefix objective '" + text + "'");
}

void SelectorConfig::validate(int frames) const {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidArgument("gamma must be positive");
  if (prefix < 1 || prefix >= frames) {
    throw InvalidArgument("prefix length K=" + std::to_string(prefix) + " must satisfy 1 <= K < T=" +
                          std::to_string(frames));
  }
}

double clip(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

double select_coord(double s, double lo, double hi) {
  if (!std::isfinite(s)) throw InvalidArgument("coordinate must be finite");
  return clip(s, lo, hi);
}

double select_scale(double s, double gamma, double lo, double hi) {
  if (!std::isfinite(s)) throw InvalidArgument("coordinate must be finite");
  return clip(gamma * s, lo, hi);
}

double wrong_sign(double s, double lo, double hi) {
  if (!std::isfinite(s)) throw InvalidArgument("coordinate must be finite");
  return clip(-s, lo, hi);
}

std::size_t argmin_alpha(const std::vector<double>& alphas, const std::vector<double>& losses) {
  if (alphas.empty() || alphas.size() != losses.size()) {
    throw InvalidArgument("argmin needs one loss per candidate");
  }
  std::size_t best = alphas.size();
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    if (std::isnan(losses[k])) continue;
    if (best == alphas.size()) {
      best = k;
      continue;
    }
    const bool better =
        losses[k] < losses[best] ||
        (losses[k] == losses[best] &&
         (std::abs(alphas[k]) < std::abs(alphas[best]) ||
          (std::abs(alphas[k]) == std::abs(alphas[best]) && alphas[k] < alphas[best])));
    if (better) best = k;
  }
  if (best == alphas.size()) throw DegenerateInput("every candidate loss is NaN");
  return best;
}

double prefix_objective(const Trajectory& pred, const Trajectory& observed,
                        PrefixObjective objective) {
  if (pred.size() != observed.size() || observed.size() < 2) {
    throw InvalidArgument("prefix objective needs matching prefixes of at least two frames");
  }
  const std::size_t k_len = observed.size() - 1;
  if (objective == PrefixObjective::full_prefix) {
    double num = 0.0, den = 0.0;
    for (std::size_t t = 1; t <= k_len; ++t) {
      if (!pred[t].same_shape(observed[t])) throw InvalidArgument("prefix frame shapes differ");
      const auto p = pred[t].values();
      const auto u = observed[t].values();
      for (std::size_t k = 0; k < u.size(); ++k) {
        num += (p[k] - u[k]) * (p[k] - u[k]);
        den += u[k] * u[k];
      }
    }
    if (den == 0.0) throw DegenerateInput("observed prefix has zero norm");
    return std::sqrt(num / den);
  }
  const auto e = frame_errors(pred, observed);
  switch (objective) {
    case PrefixObjective::mean_step: {
      double s = 0.0;
      for (std::size_t t = 1; t <= k_len; ++t) s += e[t];
      return s / static_cast<double>(k_len);
    }
    case PrefixObjective::first_step: return e[1];
    case PrefixObjective::final_step: return e[k_len];
    case PrefixObjective::recency_weighted: {
      double s = 0.0, w = 0.0;
      for (std::size_t t = 1; t <= k_len; ++t) {
        s += static_cast<double>(t) * e[t];
        w += static_cast<double>(t);
      }
      return s / w;
    }
    case PrefixObjective::full_prefix: break;
  }
  throw InvalidArgument("unknown prefix objective");
}

BankModels::BankModels(const CoordinateLine& line, AlphaBank bank) : bank_(std::move(bank)) {
  bank_.validate();
  if (bank_.alpha_min() < line.alpha_min || bank_.alpha_max() > line.alpha_max) {
    throw InvalidArgument("alpha bank exceeds the line's clip bounds");
  }
  for (double a : bank_.values) models_.push_back(to_model(compose_at(line, a)));
}

Trajectory BankModels::rollout(std::size_t index, const GridField& u0, int steps) const {
  return ccm::rollout(models_.at(index), u0, steps).frames;
}

CandidateRollout BankModels::rollout_fn() const {
  return [this](std::size_t index, const GridField& u0, int steps) {
    return rollout(index, u0, steps);
  };
}

namespace {

void digest_frames(Sha256& h, const Trajectory& frames) {
  h.update_u64(frames.size());
  for (const auto& f : frames) {
    h.update_u32(static_cast<std::uint32_t>(f.height()));
    h.update_u32(static_cast<std::uint32_t>(f.width()));
    h.update_u32(static_cast<std::uint32_t>(f.channels()));
    for (double v : f.values()) h.update_f64(v);
  }
}

std::string selection_digest(const AlphaBank& bank, const std::vector<Trajectory>& inputs,
                             const std::string& tag) {
  Sha256 h;
  h.update(tag);
  h.update_u64(bank.values.size());
  for (double a : bank.values) h.update_f64(a);
  for (const auto& t : inputs) digest_frames(h, t);
  return h.finish_hex();
}

void check_prefix(const Trajectory& prefix, int horizon) {
  const int k = static_cast<int>(prefix.size()) - 1;
  if (k < 1 || k >= horizon) {
    throw InvalidArgument("prefix length K=" + std::to_string(k) + " must satisfy 1 <= K < T=" +
                          std::to_string(horizon));
  }
  for (const auto& f : prefix) {
    if (!f.all_finite()) throw InvalidArgument("observed prefix contains non-finite values");
  }
}

std::vector<double> prefix_losses(const AlphaBank& bank, const CandidateRollout& rollout,
                                  const Trajectory& prefix, PrefixObjective objective, int jobs) {
  const int k = static_cast<int>(prefix.size()) - 1;
  std::vector<double> losses(bank.values.size());
  parallel_for(bank.values.size(), jobs, [&](std::size_t i) {
    losses[i] = prefix_objective(rollout(i, prefix.front(), k), prefix, objective);
  });
  return losses;
}

}  // namespace

SelectionResult select_prefix(const AlphaBank& bank, const CandidateRollout& rollout,
                              const Trajectory& prefix, int horizon, PrefixObjective objective,
                              int jobs) {
  bank.validate();
  check_prefix(prefix, horizon);
  SelectionResult r;
  r.candidates = bank.values;
  r.losses = prefix_losses(bank, rollout, prefix, objective, jobs);
  r.alpha = bank.values[argmin_alpha(r.candidates, r.losses)];
  r.inputs_digest = selection_digest(bank, {prefix}, "prefix:" + to_string(objective));
  return r;
}

SelectionResult select_prefix_task(const AlphaBank& bank, const CandidateRollout& rollout,
                                   const std::vector<Trajectory>& prefixes, int horizon,
                                   PrefixObjective objective, int jobs) {
  bank.validate();
  if (prefixes.empty()) throw InvalidArgument("task selection needs at least one prefix");
  SelectionResult r;
  r.candidates = bank.values;
  r.losses.assign(bank.values.size(), 0.0);
  for (const auto& p : prefixes) {
    check_prefix(p, horizon);
    const auto l = prefix_losses(bank, rollout, p, objective, jobs);
    for (std::size_t i = 0; i < l.size(); ++i) r.losses[i] += l[i];
  }
  for (double& l : r.losses) l /= static_cast<double>(prefixes.size());
  r.alpha = bank.values[argmin_alpha(r.candidates, r.losses)];
  r.inputs_digest = selection_digest(bank, prefixes, "prefix-task:" + to_string(objective));
  return r;
}

SelectionResult oracle_alpha(const AlphaBank& bank, const CandidateRollout& rollout,
                             const Trajectory& truth, const IndexSet& idx, int jobs) {
  bank.validate();
  if (truth.size() < 2) throw InvalidArgument("oracle needs a target rollout");
  const int steps = static_cast<int>(truth.size()) - 1;
  SelectionResult r;
  r.candidates = bank.values;
  r.losses.resize(bank.values.size());
  parallel_for(bank.values.size(), jobs, [&](std::size_t i) {
    r.losses[i] = rollout_l2(rollout(i, truth.front(), steps), truth, idx);
  });
  r.alpha = bank.values[argmin_alpha(r.candidates, r.losses)];
  r.inputs_digest = selection_digest(bank, {truth}, "oracle:" + to_string(idx.tag));
  return r;
}

GammaCalibration calibrate_gamma(const std::vector<double>& validation_s,
                                 const std::vector<double>& gamma_grid, double lo, double hi,
                                 const RegimeLoss& loss) {
  if (gamma_grid.empty()) throw InvalidArgument("gamma grid is empty");
  if (validation_s.empty()) throw InvalidArgument("no validation regimes");
  GammaCalibration out;
  out.grid = gamma_grid;
  for (double g : gamma_grid) {
    if (!(g > 0.0) || !std::isfinite(g)) throw InvalidArgument("gamma values must be positive");
    double sum = 0.0;
    for (std::size_t r = 0; r < validation_s.size(); ++r) {
      sum += loss(r, select_scale(validation_s[r], g, lo, hi));
    }
    out.losses.push_back(sum / static_cast<double>(validation_s.size()));
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < gamma_grid.size(); ++k) {
    if (out.losses[k] < out.losses[best] ||
        (out.losses[k] == out.losses[best] && gamma_grid[k] < gamma_grid[best])) {
      best = k;
    }
  }
  out.gamma = gamma_grid[best];
  return out;
}

}  // namespace ccm
