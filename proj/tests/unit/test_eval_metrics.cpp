#include <cmath>
#include <numbers>

#include "ccm/error.hpp"
#include "ccm/eval_metrics.hpp"
#include "ccm/rng.hpp"
#include "doctest.h"

using namespace ccm;

namespace {

Trajectory random_trajectory(Rng& rng, int frames, int h = 4, int w = 4, int c = 1) {
  Trajectory t;
  for (int k = 0; k <= frames; ++k) {
    GridField f(h, w, c);
    for (double& v : f.values()) v = rng.normal();
    t.push_back(f);
  }
  return t;
}

Trajectory scaled(const Trajectory& t, double c) {
  Trajectory out = t;
  for (auto& f : out) {
    for (double& v : f.values()) v *= c;
  }
  return out;
}

}  // namespace

TEST_CASE("rollout_l2 basics") {
  Rng rng(1);
  const auto truth = random_trajectory(rng, 6);
  const auto idx = full_indices(6);
  CHECK(rollout_l2(truth, truth, idx) == 0.0);
  CHECK(rollout_l2(scaled(truth, 2.0), truth, idx) == doctest::Approx(1.0).epsilon(1e-15));

  // single frame, four nonzero cells: truth (1,2,3,4), pred (1,2,3,5) -> 1/sqrt(30)
  Trajectory u{GridField(4, 4, 1), GridField(4, 4, 1)};
  Trajectory p = u;
  const double tv[] = {1, 2, 3, 4};
  const double pv[] = {1, 2, 3, 5};
  for (int k = 0; k < 4; ++k) {
    u[1].values()[k] = tv[k];
    p[1].values()[k] = pv[k];
  }
  CHECK(rollout_l2(p, u, full_indices(1)) == doctest::Approx(1.0 / std::sqrt(30.0)));

  Trajectory zero{GridField(4, 4, 1), GridField(4, 4, 1)};
  CHECK_THROWS_AS(rollout_l2(zero, zero, full_indices(1)), DegenerateInput);
  CHECK_THROWS_AS(rollout_l2(truth, truth, IndexSet{}), InvalidArgument);
  CHECK_THROWS_AS(rollout_l2(truth, truth, IndexSet{{7}, IndexTag::full}), InvalidArgument);
}

TEST_CASE("rollout_l2 is scale free and monotone in future noise") {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const auto truth = random_trajectory(rng, 8);
    auto pred = truth;
    for (auto& f : pred) {
      for (double& v : f.values()) v += 0.1 * rng.normal();
    }
    const auto idx = full_indices(8);
    const double c = rng.uniform(0.1, 10.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    CHECK(rollout_l2(scaled(pred, c), scaled(truth, c), idx) ==
          doctest::Approx(rollout_l2(pred, truth, idx)).epsilon(1e-12));

    const auto split = split_protocol(8, 3);
    const double before = rollout_l2(pred, truth, split.future);
    auto noisier = pred;
    for (int t : split.future.indices) {
      auto& f = noisier[static_cast<std::size_t>(t)];
      const auto& u = truth[static_cast<std::size_t>(t)];
      // push each value further from the truth
      for (std::size_t k = 0; k < f.size(); ++k) {
        const double e = f.values()[k] - u.values()[k];
        f.values()[k] += (e >= 0 ? 1.0 : -1.0) * 0.05 * std::abs(rng.normal());
      }
    }
    CHECK(rollout_l2(noisier, truth, split.future) >= before);
  }
}

TEST_CASE("split protocol") {
  const auto s = split_protocol(10, 4);
  CHECK(s.calibration.indices == std::vector<int>{1, 2, 3, 4});
  CHECK(s.future.indices == std::vector<int>{5, 6, 7, 8, 9, 10});
  CHECK(split_protocol(5, 1).calibration.indices == std::vector<int>{1});
  CHECK(split_protocol(5, 1).future.indices == std::vector<int>{2, 3, 4, 5});
  CHECK_THROWS_AS(split_protocol(5, 5), InvalidArgument);
  CHECK_THROWS_AS(split_protocol(5, 0), InvalidArgument);

  for (int t = 2; t <= 24; ++t) {
    for (int k = 1; k < t; ++k) {
      const auto p = split_protocol(t, k);
      std::vector<int> joined = p.calibration.indices;
      joined.insert(joined.end(), p.future.indices.begin(), p.future.indices.end());
      CHECK(joined == full_indices(t).indices);
    }
  }

  // full-window mean decomposes into the weighted split means
  Rng rng(3);
  const auto truth = random_trajectory(rng, 12);
  auto pred = truth;
  for (auto& f : pred) {
    for (double& v : f.values()) v += 0.2 * rng.normal();
  }
  const auto e = frame_errors(pred, truth);
  const auto p = split_protocol(12, 4);
  const double full = mean_over(e, full_indices(12));
  const double mix = 4.0 / 12.0 * mean_over(e, p.calibration) + 8.0 / 12.0 * mean_over(e, p.future);
  CHECK(full == doctest::Approx(mix).epsilon(1e-14));
  CHECK(mean_over(e, p.future) == rollout_l2(pred, truth, p.future));
}

TEST_CASE("summaries and gains") {
  const auto s = summarize({0.2, 0.5, 0.3});
  CHECK(s.mean == doctest::Approx(1.0 / 3.0));
  CHECK(s.worst == 0.5);
  CHECK(s.worst >= s.mean);
  CHECK(relative_gain(0.4, 0.1) == doctest::Approx(0.75));
  CHECK(relative_gain(0.4, 0.6) == doctest::Approx(-0.5));
  CHECK_THROWS_AS(relative_gain(0.0, 0.1), DegenerateInput);
}

TEST_CASE("physics diagnostics") {
  const int n = 32;
  const double L = 5.0;
  Trajectory truth;
  for (int t = 0; t <= 3; ++t) {
    GridField f(n, n, 1, L, L);
    const double radius = 1.0 + 0.2 * t;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double x = -0.5 * L + (j + 0.5) * L / n;
        const double y = -0.5 * L + (i + 0.5) * L / n;
        f.at(i, j, 0) = std::hypot(x, y) < radius ? 2.0 : 1.0;
      }
    }
    truth.push_back(f);
  }
  const auto idx = full_indices(3);

  const auto same = physics_rdb(truth, truth, idx);
  CHECK(same.metrics.at("mass_mae") == 0.0);
  CHECK(same.metrics.at("std_mae") == 0.0);
  CHECK(same.metrics.at("front_mae") == 0.0);

  auto shifted = truth;
  for (auto& f : shifted) {
    for (double& v : f.values()) v += 0.25;
  }
  const auto sh = physics_rdb(shifted, truth, idx);
  CHECK(sh.metrics.at("mass_mae") == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(sh.metrics.at("std_mae") == doctest::Approx(0.0).epsilon(1e-12));

  // step of radius r crosses within one bin of r
  for (int t = 0; t <= 3; ++t) {
    CHECK(std::abs(front_radius(truth[t], 1.0) - (1.0 + 0.2 * t)) <= L / n);
  }
  GridField flat(n, n, 1, L, L);
  for (double& v : flat.values()) v = 1.0;
  CHECK(front_radius(flat, 1.0) == 0.0);

  // unit sine mode: enstrophy 1/2, zero mean
  GridField w(64, 64, 1);
  for (int i = 0; i < 64; ++i) {
    for (int j = 0; j < 64; ++j) w.at(i, j, 0) = std::sin(2.0 * std::numbers::pi * 3 * j / 64.0);
  }
  CHECK(enstrophy(w) == doctest::Approx(0.5).epsilon(1e-14));
  const Trajectory vort{w, w};
  const auto ns = physics_ns2d(vort, vort, full_indices(1));
  CHECK(ns.metrics.at("enstrophy_mae") == 0.0);
  CHECK(ns.metrics.at("vorticity_mean_mae") == 0.0);
  CHECK(ns.metrics.at("final_enstrophy") == doctest::Approx(0.5));
}

TEST_CASE("coordinate correlation") {
  std::vector<std::pair<double, double>> same, flipped;
  for (double s : {-2.0, -0.5, 0.25, 1.0, 1.5}) {
    same.emplace_back(s, s);
    flipped.emplace_back(s, -s);
  }
  CHECK(coordinate_correlation(same) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(coordinate_correlation(flipped) == doctest::Approx(-1.0).epsilon(1e-15));

  // x = (0,1,2,3), y = (1,3,2,5): sum dx dy = 5.5, sum dx^2 = 5, sum dy^2 = 8.75
  const std::vector<std::pair<double, double>> cloud{{0, 1}, {1, 3}, {2, 2}, {3, 5}};
  CHECK(coordinate_correlation(cloud) == doctest::Approx(5.5 / std::sqrt(5.0 * 8.75)));

  CHECK_THROWS_AS(coordinate_correlation({{0, 1}, {1, 2}}), InvalidArgument);
  CHECK_THROWS_AS(coordinate_correlation({{1, 1}, {1, 2}, {1, 3}}), DegenerateInput);
}

TEST_CASE("win loss regret") {
  const auto tie = win_loss_regret({1, 2, 3}, {1, 2, 3});
  CHECK(tie.wins == 0);
  CHECK(tie.losses == 0);
  CHECK(tie.negative_regret == 0.0);

  const auto better = win_loss_regret({1, 2, 3}, {0.5, 1, 2});
  CHECK(better.wins == 3);
  CHECK(better.losses == 0);
  CHECK(better.negative_regret == 0.0);

  const auto mixed = win_loss_regret({1.0, 2.0, 3.0}, {0.5, 2.5, 3.25});
  CHECK(mixed.wins == 1);
  CHECK(mixed.losses == 2);
  CHECK(mixed.negative_regret == doctest::Approx(0.75));

  CHECK_THROWS_AS(win_loss_regret({1}, {1, 2}), InvalidArgument);
}

TEST_CASE("bootstrap intervals") {
  const auto flat = bootstrap_ci({0.3, 0.3, 0.3, 0.3}, 500, 0.95, 1);
  CHECK(flat.lo == doctest::Approx(0.3));
  CHECK(flat.hi == doctest::Approx(0.3));
  CHECK(flat.mean == doctest::Approx(0.3));

  // resampled mean of {0, 1} is Binomial(2, 1/2) / 2: P(0) = 1/4, P(1/2) = 1/2, P(1) = 1/4
  const auto two = bootstrap_ci({0.0, 1.0}, 10000, 0.95, 2);
  CHECK(std::abs(two.lo - 0.0) <= 0.02);
  CHECK(std::abs(two.hi - 1.0) <= 0.02);
  const auto mid = bootstrap_ci({0.0, 1.0}, 10000, 0.4, 2);
  CHECK(std::abs(mid.lo - 0.5) <= 0.02);
  CHECK(std::abs(mid.hi - 0.5) <= 0.02);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(10);
    for (double& x : v) x = rng.normal();
    const auto ci = bootstrap_ci(v, 2000, 0.9, trial);
    CHECK(ci.lo <= ci.mean);
    CHECK(ci.mean <= ci.hi);
    const auto again = bootstrap_ci(v, 2000, 0.9, trial);
    CHECK(again.lo == ci.lo);
    CHECK(again.hi == ci.hi);
  }
  CHECK_THROWS_AS(bootstrap_ci({1.0}, 100, 0.9, 0), InvalidArgument);
}
