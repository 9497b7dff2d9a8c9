#include "ccm/merge_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ccm/error.hpp"
#include "ccm/rng.hpp"

namespace ccm {

namespace {

Lineage derived_lineage(const Checkpoint& anchor, CheckpointRole role, std::string method) {
  Lineage l;
  l.role = role;
  l.family = anchor.lineage.family;
  l.parent_hash = content_hash(anchor);
  l.anchor_hash = anchor_of(anchor);
  l.seed = anchor.lineage.seed;
  l.config_digest = anchor.lineage.config_digest;
  l.method = std::move(method);
  return l;
}

Checkpoint from_flat(const Checkpoint& like, const std::vector<double>& values, Lineage lineage) {
  Checkpoint c;
  c.weights = unflatten(values, schema_of(like.weights));
  c.lineage = std::move(lineage);
  c.config = like.config;
  c.normalizer = like.normalizer;
  return c;
}

std::vector<std::vector<double>> flat_deltas(const Checkpoint& anchor,
                                             const std::vector<WeightSet>& deltas) {
  std::vector<std::vector<double>> out;
  out.reserve(deltas.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    require_same_schema(anchor.weights, deltas[i], "delta " + std::to_string(i));
    out.push_back(flatten(deltas[i]).values);
  }
  return out;
}

}  // namespace

Decomposition decompose(const Checkpoint& anchor, const Checkpoint& expert_low,
                        const Checkpoint& expert_high) {
  assert_same_lineage(anchor, expert_low);
  assert_same_lineage(anchor, expert_high);
  assert_same_lineage(expert_low, expert_high);

  Decomposition d;
  d.anchor = anchor;
  d.expert_low = expert_low;
  d.expert_high = expert_high;
  auto f0 = flatten(anchor.weights);
  d.schema = std::move(f0.schema);
  d.theta0 = std::move(f0.values);
  d.theta_low = flatten(expert_low.weights).values;
  d.theta_high = flatten(expert_high.weights).values;

  const std::size_t n = d.theta0.size();
  d.delta_low.resize(n);
  d.delta_high.resize(n);
  d.delta_plus.resize(n);
  d.delta_minus.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    d.delta_low[k] = d.theta_low[k] - d.theta0[k];
    d.delta_high[k] = d.theta_high[k] - d.theta0[k];
    d.delta_plus[k] = (d.delta_low[k] + d.delta_high[k]) / 2.0;
    d.delta_minus[k] = (d.delta_high[k] - d.delta_low[k]) / 2.0;
  }
  return d;
}

CoordinateLine::CoordinateLine(Decomposition d, double lo, double hi)
    : parts(std::move(d)), alpha_min(lo), alpha_max(hi) {
  if (!(std::isfinite(lo) && std::isfinite(hi)) || lo > -1.0 || hi < 1.0) {
    throw InvalidArgument("alpha bounds [" + std::to_string(lo) + ", " + std::to_string(hi) +
                          "] must contain [-1, 1]");
  }
}

std::vector<double> line_point_anchor_form(const Decomposition& d, double alpha) {
  std::vector<double> out(d.theta0.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = d.theta0[k] + d.delta_plus[k] + alpha * d.delta_minus[k];
  }
  return out;
}

std::vector<double> line_point_convex_form(const Decomposition& d, double alpha) {
  const double wl = (1.0 - alpha) / 2.0;
  const double wh = (1.0 + alpha) / 2.0;
  std::vector<double> out(d.theta0.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = wl * d.theta_low[k] + wh * d.theta_high[k];
  }
  return out;
}

Checkpoint compose_at(const CoordinateLine& line, double alpha) {
  if (!std::isfinite(alpha)) throw InvalidArgument("alpha must be finite");
  const auto& d = line.parts;
  auto lineage = derived_lineage(d.anchor, CheckpointRole::merged, "coordinate-line");
  lineage.alpha = alpha;
  lineage.sources = {content_hash(d.expert_low), content_hash(d.expert_high)};
  lineage.hyperparameters = {{"alpha_min", line.alpha_min}, {"alpha_max", line.alpha_max}};
  return from_flat(d.anchor, line_point_convex_form(d, alpha), std::move(lineage));
}

Checkpoint endpoint_average(const CoordinateLine& line) { return compose_at(line, 0.0); }

Checkpoint task_arithmetic(const Checkpoint& anchor, const std::vector<WeightedDelta>& deltas) {
  std::vector<WeightSet> ws;
  for (const auto& d : deltas) ws.push_back(d.delta);
  const auto flat = flat_deltas(anchor, ws);
  auto out = flatten(anchor.weights).values;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += deltas[i].weight * flat[i][k];
  }
  auto lineage = derived_lineage(anchor, CheckpointRole::baseline, "task-arithmetic");
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    lineage.hyperparameters.emplace_back("weight_" + std::to_string(i), deltas[i].weight);
  }
  return from_flat(anchor, out, std::move(lineage));
}

Checkpoint ties_merge(const Checkpoint& anchor, const std::vector<WeightSet>& deltas,
                      double trim, double scale) {
  if (!(trim > 0.0 && trim <= 1.0)) throw InvalidArgument("ties trim fraction must be in (0, 1]");
  if (deltas.empty()) throw InvalidArgument("ties merge needs at least one delta");
  auto flat = flat_deltas(anchor, deltas);
  const std::size_t n = flat.front().size();
  const std::size_t keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(trim * static_cast<double>(n) - 1e-9)));

  std::vector<std::size_t> order(n);
  for (auto& d : flat) {
    if (keep >= n) continue;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::nth_element(order.begin(), order.begin() + static_cast<long>(keep), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       const double ma = std::abs(d[a]);
                       const double mb = std::abs(d[b]);
                       return ma != mb ? ma > mb : a < b;
                     });
    for (std::size_t r = keep; r < n; ++r) d[order[r]] = 0.0;
  }

  auto out = flatten(anchor.weights).values;
  for (std::size_t k = 0; k < n; ++k) {
    double mass = 0.0;
    for (const auto& d : flat) mass += d[k];
    if (mass == 0.0) continue;
    double sum = 0.0;
    int count = 0;
    for (const auto& d : flat) {
      if (d[k] != 0.0 && (d[k] > 0.0) == (mass > 0.0)) {
        sum += d[k];
        ++count;
      }
    }
    if (count > 0) out[k] += scale * (sum / count);
  }
  auto lineage = derived_lineage(anchor, CheckpointRole::baseline, "ties");
  lineage.hyperparameters = {{"trim", trim}, {"scale", scale}};
  return from_flat(anchor, out, std::move(lineage));
}

Checkpoint dare_merge(const Checkpoint& anchor, const std::vector<WeightedDelta>& deltas,
                      double drop, std::uint64_t seed) {
  if (!(drop >= 0.0 && drop < 1.0)) throw InvalidArgument("dare drop probability must be in [0, 1)");
  std::vector<WeightSet> ws;
  for (const auto& d : deltas) ws.push_back(d.delta);
  const auto flat = flat_deltas(anchor, ws);
  const double rescale = 1.0 / (1.0 - drop);
  auto out = flatten(anchor.weights).values;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    Rng rng(mix_seed(seed, i));
    for (std::size_t k = 0; k < out.size(); ++k) {
      if (rng.uniform() < drop) continue;
      out[k] += deltas[i].weight * (flat[i][k] * rescale);
    }
  }
  auto lineage = derived_lineage(anchor, CheckpointRole::baseline, "dare");
  lineage.seed = seed;
  lineage.hyperparameters = {{"drop", drop}};
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    lineage.hyperparameters.emplace_back("weight_" + std::to_string(i), deltas[i].weight);
  }
  return from_flat(anchor, out, std::move(lineage));
}

Trajectory output_ensemble(const std::vector<StepFunction>& experts,
                           const std::vector<double>& weights, const GridField& u0, int steps) {
  if (experts.empty() || experts.size() != weights.size()) {
    throw InvalidArgument("output ensemble needs one weight per expert");
  }
  if (steps < 0) throw InvalidArgument("output ensemble steps must be non-negative");
  Trajectory out{u0};
  out.reserve(static_cast<std::size_t>(steps) + 1);
  for (int t = 0; t < steps; ++t) {
    GridField next;
    for (std::size_t e = 0; e < experts.size(); ++e) {
      const GridField pred = experts[e](out.back());
      if (!pred.same_shape(u0)) {
        throw InvalidArgument("expert " + std::to_string(e) + " changed the state shape");
      }
      if (e == 0) {
        next = pred;
        for (double& v : next.values()) v *= weights[0];
      } else {
        auto dst = next.values();
        auto src = pred.values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += weights[e] * src[k];
      }
    }
    out.push_back(std::move(next));
  }
  return out;
}

Trajectory output_ensemble(const std::vector<OperatorModel>& experts,
                           const std::vector<double>& weights, const GridField& u0, int steps) {
  std::vector<StepFunction> fns;
  for (const auto& m : experts) {
    check_model(m);
    fns.push_back([&m](const GridField& u) { return forward_step(m, u); });
  }
  return output_ensemble(fns, weights, u0, steps);
}

}  // namespace ccm
