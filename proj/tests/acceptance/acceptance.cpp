// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--only N]... [--work DIR] [--jobs N]
//
// Criteria 6 and 10 share one DiffReact desk-preset pipeline run under the
// work directory; criterion 9 runs the tiny preset twice.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ccm/byte_io.hpp"
#include "ccm/ccm_select.hpp"
#include "ccm/digest.hpp"
#include "ccm/error.hpp"
#include "ccm/eval_metrics.hpp"
#include "ccm/merge_engine.hpp"
#include "ccm/pipeline.hpp"
#include "ccm/rng.hpp"
#include "ccm/theory_checks.hpp"
#include "json.hpp"

using namespace ccm;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// 1 -------------------------------------------------------------------------

double rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff = std::max(diff, std::abs(a[k] - b[k]));
    scale = std::max(scale, std::abs(b[k]));
  }
  return diff / std::max(scale, 1e-300);
}

Outcome merge_algebra() {
  Rng rng(101);
  const auto bank = default_bank();
  double worst = 0.0;
  int endpoint_failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Checkpoint anchor;
    const int rows = 1 + static_cast<int>(rng.uniform(0.0, 6.0));
    anchor.weights.emplace("w", Tensor({rows, 7}));
    anchor.weights.emplace("b", Tensor({3}));
    for (auto& [name, t] : anchor.weights) {
      for (double& v : t.data) v = rng.normal();
    }
    anchor.normalizer = identity_normalizer(1);
    anchor.lineage.role = CheckpointRole::anchor;
    const auto child = [&](CheckpointRole role) {
      Checkpoint c = anchor;
      for (auto& [name, t] : c.weights) {
        for (double& v : t.data) v += 0.1 * rng.normal();
      }
      c.lineage.role = role;
      c.lineage.parent_hash = content_hash(anchor);
      c.lineage.anchor_hash = anchor_of(anchor);
      return c;
    };
    const auto low = child(CheckpointRole::endpoint_low);
    const auto high = child(CheckpointRole::endpoint_high);
    const CoordinateLine line(decompose(anchor, low, high), -1.5, 1.5);

    // oracle: theta0 + delta_plus + alpha delta_minus, built here from raw weights
    const auto t0 = flatten(anchor.weights).values;
    const auto tl = flatten(low.weights).values;
    const auto th = flatten(high.weights).values;
    for (double a : bank.values) {
      std::vector<double> oracle(t0.size());
      for (std::size_t k = 0; k < t0.size(); ++k) {
        const double dl = tl[k] - t0[k], dh = th[k] - t0[k];
        oracle[k] = t0[k] + (dl + dh) / 2.0 + a * (dh - dl) / 2.0;
      }
      const auto convex = flatten(compose_at(line, a).weights).values;
      worst = std::max({worst, rel_diff(convex, oracle), rel_diff(line_point_anchor_form(line.parts, a), convex)});
    }
    std::vector<double> mid(tl.size());
    for (std::size_t k = 0; k < tl.size(); ++k) mid[k] = 0.5 * (tl[k] + th[k]);
    if (flatten(compose_at(line, -1.0).weights).values != tl) ++endpoint_failures;
    if (flatten(compose_at(line, 1.0).weights).values != th) ++endpoint_failures;
    if (flatten(compose_at(line, 0.0).weights).values != mid) ++endpoint_failures;
    if (endpoint_average(line).weights != compose_at(line, 0.0).weights) ++endpoint_failures;
  }
  return {worst <= 1e-12 && endpoint_failures == 0,
          "worst relative form gap " + num(worst) + ", inexact endpoints " + std::to_string(endpoint_failures)};
}

// 2 -------------------------------------------------------------------------

Outcome gradient_check() {
  OperatorModel m;
  m.config.channels = 2;
  m.config.width = 4;
  m.config.modes = 2;
  m.config.layers = 2;
  m.config.grid_h = m.config.grid_w = 8;
  m.normalizer = {{0.1, -0.2}, {1.5, 0.7}, {0.3, 0.05}};
  m.weights = init_weights(m.config, 202);
  Rng rng(203);
  for (auto& [name, t] : m.weights) {
    if (name.ends_with(".bias")) {
      for (double& v : t.data) v = 0.2 * rng.normal();
    }
  }
  std::vector<Transition> batch;
  for (int b = 0; b < 2; ++b) {
    GridField u(8, 8, 2);
    for (double& v : u.values()) v = rng.normal();
    Transition tr{u, {}};
    for (int j = 0; j <= b; ++j) {
      GridField next = j == 0 ? u : tr.targets.back();
      for (std::size_t k = 0; k < next.size(); ++k) next.values()[k] += m.normalizer.step_scale[k % 2] * rng.normal();
      tr.targets.push_back(next);
    }
    batch.push_back(std::move(tr));
  }
  const auto lg = loss_and_grad(m, batch);
  const double h = 1e-5;
  double worst = 0.0;
  std::size_t checked = 0;
  for (const auto& [name, t] : m.weights) {
    for (std::size_t k = 0; k < t.size(); ++k) {
      auto plus = m, minus = m;
      plus.weights.at(name).data[k] += h;
      minus.weights.at(name).data[k] -= h;
      const double fd = (loss_only(plus, batch) - loss_only(minus, batch)) / (2.0 * h);
      const double an = lg.grad.at(name).data[k];
      worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6}));
      ++checked;
    }
  }
  return {worst < 1e-4, std::to_string(checked) + " coordinates, worst relative error " + num(worst)};
}

// 3 -------------------------------------------------------------------------

std::vector<double> lemma_grid() {
  std::vector<double> g;
  for (int k = 0; k <= 24; ++k) g.push_back(-1.5 + 0.125 * k);
  return g;
}

Outcome lemma() {
  const auto grid = lemma_grid();
  const auto quad = verify_lemma_synthetic([](double t) { return std::vector<double>{t * t}; },
                                           [](double, double) { return 2.0; }, grid);
  double gap = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double exact = std::abs(grid[k] * grid[k] - 1.0);  // |a^2 - 1|, both sides
    gap = std::max({gap, std::abs(quad.errors[k] - exact), std::abs(quad.bounds[k] - exact)});
  }
  const auto sine = verify_lemma_synthetic(
      [](double t) { return std::vector<double>{std::sin(t)}; },
      [](double lo, double hi) { return std::sin(std::max(std::abs(lo), std::abs(hi))); }, grid);
  double min_slack = std::numeric_limits<double>::infinity();
  double sine_gap = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double a = grid[k];
    const double err = std::abs(std::sin(a) - a * std::sin(1.0));
    const double sup = std::sin(std::max(std::abs(std::min(a, -1.0)), std::abs(std::max(a, 1.0))));
    min_slack = std::min({min_slack, std::abs(a * a - 1.0) / 2.0 * sup - err, sine.bounds[k] - sine.errors[k]});
    sine_gap = std::max(sine_gap, std::abs(sine.errors[k] - err));
  }
  return {gap <= 1e-12 && sine_gap <= 1e-12 && min_slack >= 0.0 && sine.min_slack >= 0.0,
          "quadratic equality gap " + num(gap) + ", sine min slack " + num(min_slack)};
}

// 4 -------------------------------------------------------------------------

double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += std::log(x[k]);
    my += std::log(y[k]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (std::log(x[k]) - mx) * (std::log(y[k]) - my);
    sxx += (std::log(x[k]) - mx) * (std::log(x[k]) - mx);
  }
  return sxy / sxx;
}

Outcome fd_orders() {
  const std::vector<double> hs{0.4, 0.2, 0.1, 0.05};
  const auto fd = finite_difference_orders([](double q) { return std::vector<double>{std::sin(q), std::cos(q)}; },
                                           {1.0, 0.0}, hs);
  // closed forms: shared error 1 - cos h, directional error h - sin h
  std::vector<double> shared, directional;
  for (double h : hs) {
    shared.push_back(1.0 - std::cos(h));
    directional.push_back(h - std::sin(h));
  }
  const double s_oracle = ls_slope(hs, shared), d_oracle = ls_slope(hs, directional);
  const double s = fd.shared_slope.value_or(std::nan("")), d = fd.directional_slope.value_or(std::nan(""));
  const bool ok = std::abs(s - 2.0) <= 0.2 && std::abs(d - 3.0) <= 0.2 && std::abs(s - s_oracle) <= 1e-6 &&
                  std::abs(d - d_oracle) <= 1e-6;
  return {ok, "shared slope " + num(s) + " (closed form " + num(s_oracle) + "), signed slope " + num(d) +
                  " (closed form " + num(d_oracle) + ")"};
}

// 5 -------------------------------------------------------------------------

double field_sum(const GridField& f, int c) {
  double s = 0.0;
  for (double v : f.channel(c)) s += v;
  return s;
}

Outcome solver_physics() {
  std::string detail;
  bool ok = true;

  const auto rdb = load_config(fs::path(CCM_SOURCE_DIR) / "configs" / "rdb-high-center.json").family;
  double drift = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto traj = simulate_regime(rdb, 3.0, seed);
    const double m0 = field_sum(traj.front(), 0);
    for (const auto& f : traj) drift = std::max(drift, std::abs(field_sum(f, 0) - m0) / m0);
  }
  ok = ok && drift < 1e-6;
  detail += "rdb mass drift " + num(drift);

  const int n = 32;
  const double two_pi = 2.0 * std::numbers::pi;
  GridField ic(n, n, 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) ic.at(i, j, 0) = std::sin(two_pi * j / n) * std::sin(two_pi * i / n);
  }
  Ns2dParams p;
  p.nu = 1e-2;
  p.forcing_amplitude = 0.0;
  const TimeStepping stepping{0.05, 10};
  const auto traj = simulate_ns2d(p, ic, 20, stepping);
  double worst = 0.0;
  const double k2 = 2.0 * two_pi * two_pi;  // |k|^2 for the (1, 1) mode on the unit torus
  for (std::size_t t = 0; t < traj.size(); ++t) {
    const double expected = std::exp(-p.nu * k2 * stepping.frame_dt * static_cast<double>(t));
    for (std::size_t k = 0; k < ic.size(); ++k) {
      if (std::abs(ic.values()[k]) < 0.5) continue;
      worst = std::max(worst, std::abs(traj[t].values()[k] / ic.values()[k] - expected) / expected);
    }
  }
  ok = ok && worst <= 1e-3;
  detail += ", ns2d decay error " + num(worst);

  const auto dr = load_config(fs::path(CCM_SOURCE_DIR) / "configs" / "diffreact-dense.json").family;
  DiffReactParams zp;
  zp.du = dr.coefficient("D_u");
  zp.dv = dr.coefficient("D_v");
  zp.k = 0.0;  // u = v = 0 is stationary only without the constant source
  const auto zero = simulate_diffreact(zp, GridField(dr.height, dr.width, 2), dr.frames, {dr.frame_dt, dr.substeps});
  double zmax = 0.0;
  for (const auto& f : zero) {
    for (double v : f.values()) zmax = std::max(zmax, std::abs(v));
  }
  ok = ok && zmax <= 1e-12;
  detail += ", diffreact zero-state max " + num(zmax);
  return {ok, detail};
}

// 7 -------------------------------------------------------------------------

Outcome coordinate_law() {
  OperatorConfig cfg;
  cfg.channels = 2;
  cfg.width = 6;
  cfg.modes = 3;
  cfg.layers = 2;
  cfg.grid_h = cfg.grid_w = 16;
  OperatorModel m{cfg, {{0.0, 0.0}, {1.0, 1.0}, {0.1, 0.1}}, init_weights(cfg, 701)};
  Lineage l;
  l.role = CheckpointRole::anchor;
  const auto anchor = make_checkpoint(m, l);
  Rng rng(702);
  const auto child = [&](CheckpointRole role) {
    Checkpoint c = anchor;
    for (auto& [name, t] : c.weights) {
      for (double& v : t.data) v += 0.3 * rng.normal();
    }
    c.lineage.role = role;
    c.lineage.parent_hash = content_hash(anchor);
    c.lineage.anchor_hash = anchor_of(anchor);
    return c;
  };
  const auto lo = child(CheckpointRole::endpoint_low);
  const auto hi = child(CheckpointRole::endpoint_high);
  const CoordinateLine line(decompose(anchor, lo, hi), -1.5, 1.5);
  const BankModels models(line, default_bank());
  const int horizon = 10, prefix = 4;

  std::vector<std::pair<double, double>> pairs;
  int recovered = 0, total = 0;
  for (double s : models.bank().values) {
    const auto generator = to_model(compose_at(line, s));
    for (int k = 0; k < 8; ++k) {
      GridField u0(16, 16, 2);
      for (double& v : u0.values()) v = rng.normal();
      const auto truth = rollout(generator, u0, horizon).frames;
      const auto oracle = oracle_alpha(models.bank(), models.rollout_fn(), truth, full_indices(horizon));
      pairs.emplace_back(oracle.alpha, s);
      const Trajectory obs(truth.begin(), truth.begin() + prefix + 1);
      const auto r = select_prefix(models.bank(), models.rollout_fn(), obs, horizon, PrefixObjective::full_prefix);
      recovered += r.alpha == s ? 1 : 0;
      ++total;
    }
  }
  const double r = coordinate_correlation(pairs);
  const double rate = static_cast<double>(recovered) / total;
  return {std::abs(r - 1.0) <= 1e-6 && rate >= 0.95,
          "corr(oracle alpha, s) = " + num(r) + ", prefix recovery " + std::to_string(recovered) + "/" +
              std::to_string(total)};
}

// 8 -------------------------------------------------------------------------

Outcome future_protocol() {
  int violations = 0, pairs = 0;
  for (int t = 2; t <= 64; ++t) {
    for (int k = 1; k < t; ++k) {
      ++pairs;
      const auto p = split_protocol(t, k);
      const auto& cal = p.calibration.indices;
      const auto& fut = p.future.indices;
      bool ok = static_cast<int>(cal.size()) == k && static_cast<int>(fut.size()) == t - k;
      for (int i = 0; ok && i < k; ++i) ok = cal[static_cast<std::size_t>(i)] == i + 1;
      for (int i = 0; ok && i < t - k; ++i) ok = fut[static_cast<std::size_t>(i)] == k + 1 + i;
      std::vector<int> joined = cal;
      joined.insert(joined.end(), fut.begin(), fut.end());
      ok = ok && joined == full_indices(t).indices;
      violations += ok ? 0 : 1;
    }
  }

  // index exclusion: perturbing calibration frames after selection leaves the future metric unchanged
  Rng rng(801);
  int moved = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int t = 6 + trial % 10, k = 1 + trial % (t - 1);
    Trajectory truth, pred;
    for (int f = 0; f <= t; ++f) {
      GridField a(8, 8, 2), b(8, 8, 2);
      for (std::size_t n = 0; n < a.size(); ++n) {
        a.values()[n] = rng.normal();
        b.values()[n] = a.values()[n] + 0.3 * rng.normal();
      }
      truth.push_back(a);
      pred.push_back(b);
    }
    const auto fut = split_protocol(t, k).future;
    const double before = rollout_l2(pred, truth, fut);
    for (int f = 1; f <= k; ++f) {
      for (double& v : pred[static_cast<std::size_t>(f)].values()) v += 10.0 * rng.normal();
      for (double& v : truth[static_cast<std::size_t>(f)].values()) v -= 3.0;
    }
    if (rollout_l2(pred, truth, fut) != before) ++moved;
  }
  return {violations == 0 && moved == 0, std::to_string(pairs) + " (K, T) pairs, " + std::to_string(violations) +
                                             " violations; future metric moved in " + std::to_string(moved) +
                                             "/50 perturbations"};
}

// 6 and 10 ------------------------------------------------------------------

struct DeskRun {
  fs::path out;
  double seconds = 0.0;
  bool ran = false;
  std::string error;
};

DeskRun run_desk(const fs::path& work, int jobs) {
  DeskRun d;
  d.out = work / "diffreact-dense";
  fs::remove_all(d.out);
  const auto t0 = Clock::now();
  try {
    run_pipeline(load_config(fs::path(CCM_SOURCE_DIR) / "configs" / "diffreact-dense.json"), {d.out, jobs, &std::cerr});
    d.ran = true;
  } catch (const std::exception& e) {
    d.error = e.what();
  }
  d.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return d;
}

Outcome direction_of_effect(const DeskRun& d) {
  if (!d.ran) return {false, "pipeline failed: " + d.error};
  const auto main = read_csv(d.out / "report/main_table.csv");
  std::map<std::string, double> ood;
  for (std::size_t r = 0; r < main.size(); ++r) ood[main.cell(r, "method")] = main.number(r, "ood_mean");
  const double coord = ood.at("ccm-coord"), avg = ood.at("endpoint-average"), wrong = ood.at("wrong-sign");

  // (c) from the raw per-sample sweep: per-sample argmin against every fixed alpha
  const auto sweep = read_csv(d.out / "sweep/alpha_sweep_samples.csv");
  std::map<std::string, double> best;
  std::map<double, std::pair<double, int>> fixed;
  for (std::size_t r = 0; r < sweep.size(); ++r) {
    if (sweep.cell(r, "split") != "eval") continue;
    const double v = sweep.number(r, "future_l2");
    const auto key = sweep.cell(r, "regime") + "#" + sweep.cell(r, "sample_seed");
    best[key] = best.count(key) ? std::min(best[key], v) : v;
    auto& f = fixed[sweep.number(r, "alpha")];
    f.first += v;
    f.second += 1;
  }
  double oracle_mean = 0.0;
  for (const auto& [k, v] : best) oracle_mean += v;
  oracle_mean /= static_cast<double>(best.size());
  int beaten = 0;
  double best_fixed = std::numeric_limits<double>::infinity();
  for (const auto& [a, f] : fixed) {
    const double m = f.first / f.second;
    best_fixed = std::min(best_fixed, m);
    if (!(oracle_mean <= m)) ++beaten;
  }
  const bool a_ok = coord < avg, b_ok = wrong > coord, c_ok = beaten == 0, t_ok = d.seconds < 1800.0;
  return {a_ok && b_ok && c_ok && t_ok,
          "(a) coord " + num(coord) + " vs average " + num(avg) + (a_ok ? " ok" : " FAIL") + "; (b) wrong-sign/coord " +
              num(wrong / coord) + (b_ok ? " ok" : " FAIL") + "; (c) oracle " + num(oracle_mean) +
              " vs best fixed " + num(best_fixed) + (c_ok ? " ok" : " FAIL") + "; " + num(d.seconds) + " s"};
}

Outcome bound_audit_check(const DeskRun& d) {
  if (!d.ran) return {false, "pipeline failed: " + d.error};
  const auto audit = read_csv(d.out / "theory/bound_audit.csv");
  const auto summary = read_csv(d.out / "theory/bound_summary.csv");
  std::map<std::string, double> kv;
  for (std::size_t r = 0; r < summary.size(); ++r) kv[summary.cell(r, "key")] = summary.number(r, "value");
  const double em = kv.at("eps_minus"), ep = kv.at("eps_plus");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t r = 0; r < audit.size(); ++r) {
    lo = std::min(lo, audit.number(r, "alpha"));
    hi = std::max(hi, audit.number(r, "alpha"));
  }
  int interior = 0, holds = 0;
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < audit.size(); ++r) {
    const double a = audit.number(r, "alpha");
    if (!(a > lo && a < hi)) continue;
    ++interior;
    // recompute the computable form from the row's curvature sups
    const double bound = std::abs(1.0 - a) / 2.0 * em + std::abs(1.0 + a) / 2.0 * ep +
                         std::abs(a * a - 1.0) / 2.0 * (audit.number(r, "k_f") + audit.number(r, "k_s"));
    const double slack = bound - audit.number(r, "measured");
    const bool consistent = std::abs(bound - audit.number(r, "bound")) <= 1e-12 * std::max(1.0, bound);
    if (consistent && slack >= -audit.number(r, "tolerance")) ++holds;
    worst = std::min(worst, slack);
  }
  return {interior > 0 && holds == interior,
          std::to_string(holds) + "/" + std::to_string(interior) + " interior alphas with bound >= measured within "
              "tolerance, min slack " + num(worst)};
}

// 9 -------------------------------------------------------------------------

std::map<std::string, std::string> tree_digests(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).generic_string();
    if (rel == "manifest.json" || rel.rfind("manifests/", 0) == 0) continue;  // carry wall times
    out[rel] = sha256_file_hex(e.path());
  }
  return out;
}

std::map<std::string, std::string> manifest_digests(const fs::path& root) {
  std::map<std::string, std::string> out;
  const auto top = nlohmann::json::parse(read_file_bytes(root / "manifest.json"));
  for (const auto& [stage, v] : top.at("stages").items()) out[stage] = v.at("outputs_digest").get<std::string>();
  out["config"] = top.at("config_digest").get<std::string>();
  return out;
}

Outcome reproducibility(const fs::path& work) {
  const auto cfg = load_config(fs::path(CCM_SOURCE_DIR) / "configs" / "tiny.json");
  const auto a = work / "tiny_a", b = work / "tiny_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const auto t0 = Clock::now();
  run_pipeline(cfg, {a, 1});
  const auto first = tree_digests(a);
  const auto first_manifest = manifest_digests(a);
  // every stage again in place, and a fresh directory with more workers
  for (Stage s : pipeline_stages()) run_stage(cfg, s, {a, 1});
  run_pipeline(cfg, {b, 3});
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();

  const auto again = tree_digests(a);
  const auto other = tree_digests(b);
  int differ = 0;
  for (const auto& [rel, d] : first) {
    if (again.count(rel) == 0 || again.at(rel) != d) ++differ;
    if (other.count(rel) == 0 || other.at(rel) != d) ++differ;
  }
  differ += first.size() == again.size() && first.size() == other.size() ? 0 : 1;
  const bool manifests_equal = manifest_digests(a) == first_manifest && manifest_digests(b) == first_manifest;
  const bool verified = verify_run(a).ok && verify_run(b).ok;
  std::size_t ckpts = 0, csvs = 0;
  for (const auto& [rel, d] : first) {
    ckpts += rel.ends_with(".ckpt") ? 1 : 0;
    csvs += rel.ends_with(".csv") ? 1 : 0;
  }
  return {differ == 0 && manifests_equal && verified && secs < 600.0,
          std::to_string(first.size()) + " files (" + std::to_string(ckpts) + " checkpoints, " + std::to_string(csvs) +
              " csv) compared over 3 runs, " + std::to_string(differ) + " differ; stage digests " +
              (manifests_equal ? "equal" : "DIFFER") + "; " + num(secs) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "ccm_acceptance").string();
  int jobs = 1;
  app.add_option("--only", only, "run only these criteria (1-10)");
  app.add_option("--work", work, "scratch directory for pipeline runs");
  app.add_option("--jobs", jobs, "worker threads for pipeline runs")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const std::set<int> wanted(only.begin(), only.end());
  const auto want = [&](int c) { return wanted.empty() || wanted.count(c) > 0; };
  fs::create_directories(work);

  DeskRun desk;
  if (want(6) || want(10)) desk = run_desk(work, jobs);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"merge-algebra exactness", merge_algebra},
      {"gradient correctness", gradient_check},
      {"two-point interpolation lemma", lemma},
      {"finite-difference task-vector orders", fd_orders},
      {"solver physics", solver_physics},
      {"desk-scale direction of effect", [&] { return direction_of_effect(desk); }},
      {"coordinate law on a self-generated family", coordinate_law},
      {"future-only protocol", future_protocol},
      {"reproducibility", [&] { return reproducibility(work); }},
      {"bound audit", [&] { return bound_audit_check(desk); }},
  };
  const double budgets[] = {1.0, 60.0, 1.0, 1.0, 120.0, 1800.0, 300.0, 1.0, 600.0, 600.0};

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!want(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    // pipeline-backed criteria check their own run time inside the outcome
    const bool in_time = id == 6 || id == 9 || id == 10 || secs <= budgets[i];
    const bool pass = o.passed && in_time;
    failures += pass ? 0 : 1;
    std::cout << "criterion " << id << " [" << (pass ? "PASS" : "FAIL") << "] " << criteria[i].first << ": "
              << o.detail << (in_time ? "" : " (over the time budget)") << " (" << num(secs) << " s)" << std::endl;
  }
  std::cout << (failures == 0 ? "all selected criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
