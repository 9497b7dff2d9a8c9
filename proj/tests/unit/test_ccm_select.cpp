#include <cmath>

#include "ccm/ccm_select.hpp"
#include "ccm/error.hpp"
#include "ccm/rng.hpp"
#include "doctest.h"

using namespace ccm;

namespace {

// A small operator line whose endpoints differ enough to separate the bank.
CoordinateLine toy_line(std::uint64_t seed) {
  OperatorConfig cfg;
  cfg.channels = 1;
  cfg.width = 4;
  cfg.modes = 2;
  cfg.layers = 2;
  cfg.grid_h = cfg.grid_w = 8;
  OperatorModel m{cfg, {{0.0}, {1.0}, {0.1}}, init_weights(cfg, seed)};
  Lineage l;
  l.role = CheckpointRole::anchor;
  const auto anchor = make_checkpoint(m, l);
  Rng rng(seed + 1);
  auto child = [&](CheckpointRole role) {
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
  return CoordinateLine(decompose(anchor, lo, hi), -1.5, 1.5);
}

GridField random_ic(Rng& rng) {
  GridField f(8, 8, 1);
  for (double& v : f.values()) v = rng.normal();
  return f;
}

// Fake rollouts whose prefix loss is a chosen number per candidate.
CandidateRollout scripted(const std::vector<double>& offsets) {
  return [offsets](std::size_t i, const GridField& u0, int steps) {
    Trajectory t{u0};
    for (int k = 0; k < steps; ++k) {
      GridField f = u0;
      for (double& v : f.values()) v *= 1.0 + offsets[i];
      t.push_back(f);
    }
    return t;
  };
}

}  // namespace

TEST_CASE("alpha bank") {
  const auto b = default_bank();
  REQUIRE(b.values.size() == 13);
  CHECK(b.values.front() == -1.5);
  CHECK(b.values[6] == 0.0);
  CHECK(b.values.back() == 1.5);
  CHECK(b.alpha_min() == -1.5);
  CHECK_THROWS_AS((AlphaBank{{-1.0, 1.0}}.validate()), InvalidArgument);
  CHECK_THROWS_AS((AlphaBank{{-1.0, 0.0, 0.0, 1.0}}.validate()), InvalidArgument);
  CHECK_NOTHROW((AlphaBank{{-1.0, 0.0, 1.0}}.validate()));
  CHECK(uniform_bank(-2.0, 2.0, 0.5).values.size() == 9);
}

TEST_CASE("closed-form selectors") {
  CHECK(select_coord(0.5, -1.5, 1.5) == 0.5);
  CHECK(select_coord(2.0, -1.5, 1.5) == 1.5);
  CHECK(select_coord(-1.0, -1.5, 1.5) == -1.0);
  CHECK(select_scale(0.7, 1.0, -1.5, 1.5) == 0.7);
  CHECK(select_scale(1.0, 2.0, -1.5, 1.5) == 1.5);
  CHECK(select_scale(-0.5, 1.2, -1.5, 1.5) == doctest::Approx(-0.6));
  CHECK(wrong_sign(0.5, -1.5, 1.5) == -0.5);
  CHECK(wrong_sign(0.0, -1.5, 1.5) == 0.0);
  CHECK(wrong_sign(2.0, -1.5, 1.5) == -1.5);
  CHECK_THROWS_AS(select_coord(std::nan(""), -1.5, 1.5), InvalidArgument);

  Rng rng(1);
  for (int k = 0; k < 200; ++k) {
    const double s = rng.uniform(-1.5, 1.5);
    CHECK(wrong_sign(wrong_sign(s, -1.5, 1.5), -1.5, 1.5) == select_coord(s, -1.5, 1.5));
    CHECK(select_scale(s, 1.0, -1.5, 1.5) == select_coord(s, -1.5, 1.5));
  }

  SelectorConfig cfg;
  CHECK_NOTHROW(cfg.validate(10));
  cfg.prefix = 10;
  CHECK_THROWS_AS(cfg.validate(10), InvalidArgument);
  cfg.prefix = 4;
  cfg.gamma = 0.0;
  CHECK_THROWS_AS(cfg.validate(10), InvalidArgument);
}

TEST_CASE("argmin and tie rule") {
  CHECK(argmin_alpha({-1, 0, 1}, {0.3, 0.2, 0.5}) == 1);
  CHECK(argmin_alpha({-1, 0, 1}, {0.2, 0.2, 0.5}) == 1);
  CHECK(argmin_alpha({-1, 0, 1}, {0.2, 0.5, 0.2}) == 0);
  CHECK(argmin_alpha({-0.5, 0.5, 1.0}, {0.1, 0.1, 0.1}) == 0);
  CHECK(argmin_alpha({-1, 0, 1}, {std::nan(""), 0.9, 0.5}) == 2);
  CHECK_THROWS_AS(argmin_alpha({-1, 0}, {0.1}), InvalidArgument);

  // same rule through a prefix search with scripted candidate losses
  const AlphaBank bank{{-1.0, 0.0, 1.0}};
  Rng rng(2);
  Trajectory prefix{random_ic(rng)};
  for (int k = 0; k < 3; ++k) prefix.push_back(prefix.front());
  const auto r = select_prefix(bank, scripted({0.2, 0.2, 0.5}), prefix, 10,
                               PrefixObjective::mean_step);
  CHECK(r.alpha == 0.0);
  CHECK(r.losses[0] == doctest::Approx(0.2));
  const auto r2 = select_prefix(bank, scripted({0.3, 0.2, 0.5}), prefix, 10,
                                PrefixObjective::full_prefix);
  CHECK(r2.alpha == 0.0);
  CHECK_THROWS_AS(select_prefix(bank, scripted({0, 0, 0}), prefix, 3, PrefixObjective::mean_step),
                  InvalidArgument);
  auto bad = prefix;
  bad[1].values()[0] = std::nan("");
  CHECK_THROWS_AS(select_prefix(bank, scripted({0, 0, 0}), bad, 10, PrefixObjective::mean_step),
                  InvalidArgument);
}

TEST_CASE("prefix objectives") {
  Rng rng(3);
  Trajectory u{random_ic(rng)};
  for (int t = 0; t < 4; ++t) u.push_back(random_ic(rng));
  Trajectory p = u;
  const double e[] = {0.0, 0.1, 0.2, 0.3, 0.4};
  for (int t = 1; t <= 4; ++t) {
    for (double& v : p[t].values()) v *= 1.0 + e[t];
  }
  CHECK(prefix_objective(p, u, PrefixObjective::first_step) == doctest::Approx(0.1));
  CHECK(prefix_objective(p, u, PrefixObjective::final_step) == doctest::Approx(0.4));
  CHECK(prefix_objective(p, u, PrefixObjective::mean_step) == doctest::Approx(0.25));
  CHECK(prefix_objective(p, u, PrefixObjective::recency_weighted) ==
        doctest::Approx((0.1 + 0.4 + 0.9 + 1.6) / 10.0));
  double num = 0.0, den = 0.0;
  for (int t = 1; t <= 4; ++t) {
    for (double v : u[t].values()) {
      num += e[t] * e[t] * v * v;
      den += v * v;
    }
  }
  CHECK(prefix_objective(p, u, PrefixObjective::full_prefix) == doctest::Approx(std::sqrt(num / den)));
  CHECK(prefix_objective_from_string("recency-weighted") == PrefixObjective::recency_weighted);
  CHECK(to_string(SelectorMode::wrong_sign) == "wrong-sign");
}

TEST_CASE("self-consistent line: prefix and oracle recover the generating alpha") {
  const auto line = toy_line(5);
  const BankModels models(line, default_bank());
  const auto generator = to_model(compose_at(line, 0.75));
  Rng rng(6);
  const int horizon = 8;
  for (int sample = 0; sample < 5; ++sample) {
    const auto truth = rollout(generator, random_ic(rng), horizon).frames;
    const Trajectory prefix(truth.begin(), truth.begin() + 5);
    const auto r = select_prefix(models.bank(), models.rollout_fn(), prefix, horizon,
                                 PrefixObjective::full_prefix);
    CHECK(r.alpha == 0.75);
    CHECK(r.losses[9] == 0.0);
    const auto o = oracle_alpha(models.bank(), models.rollout_fn(), truth, full_indices(horizon));
    CHECK(o.alpha == 0.75);
    CHECK(!r.inputs_digest.empty());
  }
}

TEST_CASE("oracle dominance and bank refinement") {
  const auto line = toy_line(7);
  const auto coarse_bank = AlphaBank{{-1.5, -1.0, 0.0, 1.0, 1.5}};
  const BankModels coarse(line, coarse_bank);
  const BankModels fine(line, default_bank());
  const auto generator = to_model(compose_at(line, 0.6));
  Rng rng(8);
  const auto truth = rollout(generator, random_ic(rng), 6).frames;
  const auto idx = full_indices(6);

  const auto oc = oracle_alpha(coarse.bank(), coarse.rollout_fn(), truth, idx, 2);
  const auto of = oracle_alpha(fine.bank(), fine.rollout_fn(), truth, idx);
  const double best_coarse = *std::min_element(oc.losses.begin(), oc.losses.end());
  const double best_fine = *std::min_element(of.losses.begin(), of.losses.end());
  for (double l : of.losses) CHECK(best_fine <= l);
  CHECK(best_fine <= best_coarse);

  // per-task aggregation of identical prefixes equals the per-sample choice
  const Trajectory prefix(truth.begin(), truth.begin() + 3);
  const auto single = select_prefix(fine.bank(), fine.rollout_fn(), prefix, 6,
                                    PrefixObjective::mean_step);
  const auto task = select_prefix_task(fine.bank(), fine.rollout_fn(), {prefix, prefix}, 6,
                                       PrefixObjective::mean_step);
  CHECK(task.alpha == single.alpha);
  for (std::size_t i = 0; i < task.losses.size(); ++i) {
    CHECK(task.losses[i] == doctest::Approx(single.losses[i]).epsilon(1e-15));
  }
}

TEST_CASE("gamma calibration") {
  const std::vector<double> s{-1.0, -0.4, 0.3, 0.8, 1.1};
  // oracle alpha is exactly 1.3 s
  const RegimeLoss quadratic = [&](std::size_t r, double alpha) {
    const double d = alpha - 1.3 * s[r];
    return d * d;
  };
  const auto g = calibrate_gamma(s, {0.5, 1.0, 1.3, 1.5}, -1.5, 1.5, quadratic);
  CHECK(g.gamma == 1.3);
  CHECK(g.losses.size() == 4);
  CHECK(g.losses[2] == 0.0);

  CHECK(calibrate_gamma(s, {1.0}, -1.5, 1.5, quadratic).gamma == 1.0);
  const RegimeLoss flat = [](std::size_t, double) { return 0.25; };
  CHECK(calibrate_gamma(s, {1.5, 0.5, 1.0}, -1.5, 1.5, flat).gamma == 0.5);
  CHECK_THROWS_AS(calibrate_gamma(s, {}, -1.5, 1.5, flat), InvalidArgument);
  CHECK_THROWS_AS(calibrate_gamma({}, {1.0}, -1.5, 1.5, flat), InvalidArgument);
}

TEST_CASE("bank models respect the line bounds") {
  const auto line = toy_line(9);
  CHECK_THROWS_AS(BankModels(line, uniform_bank(-2.0, 2.0, 0.5)), InvalidArgument);
  const BankModels m(line, AlphaBank{{-1.0, 0.0, 1.0}});
  CHECK(m.model(0).weights == line.parts.expert_low.weights);
  CHECK(m.model(2).weights == line.parts.expert_high.weights);
}
