#include <cmath>

#include "ccm/error.hpp"
#include "ccm/rng.hpp"
#include "ccm/theory_checks.hpp"
#include "doctest.h"

using namespace ccm;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

// a + alpha b + alpha^2 c on the given grid
CurveSamples quadratic_curve(const std::vector<double>& alphas, const std::vector<double>& a,
                             const std::vector<double>& b, const std::vector<double>& c) {
  CurveSamples out{alphas, {}};
  for (double t : alphas) {
    std::vector<double> v(a.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = a[k] + t * b[k] + t * t * c[k];
    out.values.push_back(v);
  }
  return out;
}

double rms(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

std::vector<double> minus(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] - b[k];
  return out;
}

}  // namespace

TEST_CASE("rho norm and curve grid") {
  CHECK(rho_norm({3.0, 4.0}) == doctest::Approx(std::sqrt(12.5)));
  CHECK_THROWS_AS(rho_norm({}), InvalidArgument);

  CurveSamples c{{-1.0, 0.0, 1.0}, {{1.0}, {2.0}, {3.0}}};
  CHECK_NOTHROW(c.validate());
  CHECK(c.find(0.0) == std::size_t{1});
  CHECK(!c.find(0.5));
  CHECK_THROWS_AS((CurveSamples{{-1.0, 0.0}, {{1.0}, {2.0}}}.validate()), InvalidArgument);
  CHECK_THROWS_AS((CurveSamples{{-1.0, 1.0, 0.0}, {{1.0}, {2.0}, {3.0}}}.validate()), InvalidArgument);
  CHECK_THROWS_AS((CurveSamples{{-1.0, 0.0, 1.0}, {{1.0}, {2.0, 0.0}, {3.0}}}.validate()),
                  InvalidArgument);
}

TEST_CASE("empirical curvature of polynomial curves") {
  Rng rng(1);
  const auto grid = uniform_bank(-1.5, 1.5, 0.25).values;
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_vector(rng, 12);
    const auto b = random_vector(rng, 12);
    const auto c = random_vector(rng, 12);
    const std::vector<double> zero(12, 0.0);

    const auto linear = empirical_curvature(quadratic_curve(grid, a, b, zero), 0.25);
    CHECK(linear.size() == grid.size() - 2);
    for (const auto& p : linear) CHECK(p.value <= 1e-12);

    // second difference of alpha^2 c is exactly 2 c d^2
    for (double d : {0.25, 0.5}) {
      for (const auto& p : empirical_curvature(quadratic_curve(grid, a, b, c), d)) {
        CHECK(p.value == doctest::Approx(2.0 * rms(c)).epsilon(1e-10));
      }
    }
  }

  // cubic alpha^3 v: second difference is 6 alpha d^2 v exactly
  CurveSamples cubic{grid, {}};
  for (double t : grid) cubic.values.push_back({t * t * t, 0.0});
  for (const auto& p : empirical_curvature(cubic, 0.25)) {
    CHECK(p.value == doctest::Approx(6.0 * std::abs(p.alpha) / std::sqrt(2.0)).epsilon(1e-10));
  }
  CHECK_THROWS_AS(empirical_curvature(cubic, 2.0), InvalidArgument);
  CHECK_THROWS_AS(empirical_curvature(cubic, 0.0), InvalidArgument);
}

TEST_CASE("continuation bound hand values") {
  // 0.25 * 0.1 + 0.75 * 0.2 + 0.375 * 0.5
  CHECK(continuation_bound(0.1, 0.2, 0.5, 0.5) == doctest::Approx(0.3625));
  CHECK(continuation_bound(0.1, 0.2, 0.5, 1.0) == doctest::Approx(0.2));
  CHECK(continuation_bound(0.1, 0.2, 0.5, -1.0) == doctest::Approx(0.1));
  CHECK(continuation_bound(0.1, 0.2, 0.5, 0.0) == doctest::Approx(0.15 + 0.25));
  // outside the segment: |1 - 1.5|/2 = 0.25, |1 + 1.5|/2 = 1.25, |2.25 - 1|/2 = 0.625
  CHECK(continuation_bound(0.1, 0.2, 0.5, 1.5) == doctest::Approx(0.025 + 0.25 + 0.3125));
  CHECK(continuation_bound(0.1, 0.2, 0.4, 1.5) == doctest::Approx(0.525));
  CHECK(continuation_bound(0.3, 0.3, 0.8, 0.0) == doctest::Approx(0.3 + 0.4));
  CHECK_THROWS_AS(continuation_bound(-0.1, 0.2, 0.5, 0.0), InvalidArgument);
}

TEST_CASE("interpolation lemma on synthetic curves") {
  std::vector<double> alphas;
  for (int k = 0; k <= 24; ++k) alphas.push_back(-1.5 + 0.125 * k);

  // phi(t) = t^2 e: the remainder is (t^2 - 1) e and sup ||phi''|| = 2 ||e||
  const std::vector<double> e{0.6, -0.8};
  const VectorCurve quad = [&](double t) { return std::vector<double>{t * t * e[0], t * t * e[1]}; };
  const auto rq = verify_lemma_synthetic(quad, [](double, double) { return 2.0; }, alphas);
  REQUIRE(rq.errors.size() == alphas.size());
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    const double hand = std::abs(alphas[k] * alphas[k] - 1.0);
    CHECK(std::abs(rq.errors[k] - hand) <= 1e-12);
    CHECK(std::abs(rq.bounds[k] - hand) <= 1e-12);
  }
  CHECK(rq.min_slack >= -1e-12);

  // phi(t) = sin t: |phi''| = |sin| increases on [0, pi/2], so its sup over
  // [lo, hi] is sin(max(|lo|, |hi|)) for intervals inside [-1.5, 1.5]
  const VectorCurve sine = [](double t) { return std::vector<double>{std::sin(t)}; };
  const IntervalSup sine_sup = [](double lo, double hi) {
    return std::sin(std::max(std::abs(lo), std::abs(hi)));
  };
  const auto rs = verify_lemma_synthetic(sine, sine_sup, alphas);
  CHECK(rs.min_slack >= 0.0);
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    const double t = alphas[k];
    CHECK(rs.errors[k] == doctest::Approx(std::abs(std::sin(t) - t * std::sin(1.0))).epsilon(1e-12));
    CHECK(rs.errors[k] <= rs.bounds[k]);
  }
}

TEST_CASE("finite-difference orders of endpoint deltas") {
  const std::vector<double> hs{0.2, 0.1, 0.05, 0.025};

  // U(q) = c + q d + q^2 e: shared error h^2 ||e||, directional error zero
  const VectorCurve quad = [](double q) { return std::vector<double>{1.0 + 2.0 * q + 3.0 * q * q, -q * q}; };
  const auto rq = finite_difference_orders(quad, {2.0, 0.0}, hs);
  for (std::size_t k = 0; k < hs.size(); ++k) {
    CHECK(rq.shared_errors[k] == doctest::Approx(hs[k] * hs[k] * std::sqrt(10.0)).epsilon(1e-9));
    CHECK(rq.directional_errors[k] <= 1e-14);
  }
  REQUIRE(rq.shared_slope);
  CHECK(*rq.shared_slope == doctest::Approx(2.0).epsilon(1e-6));

  // U(q) = sin(q) e1 + cos(q) e2: shared error 1 - cos h, directional error h - sin h
  const VectorCurve trig = [](double q) { return std::vector<double>{std::sin(q), std::cos(q)}; };
  const auto rt = finite_difference_orders(trig, {1.0, 0.0}, hs);
  for (std::size_t k = 0; k < hs.size(); ++k) {
    CHECK(rt.shared_errors[k] == doctest::Approx(1.0 - std::cos(hs[k])).epsilon(1e-9));
    CHECK(rt.directional_errors[k] == doctest::Approx(hs[k] - std::sin(hs[k])).epsilon(1e-6));
  }
  REQUIRE(rt.shared_slope);
  REQUIRE(rt.directional_slope);
  CHECK(std::abs(*rt.shared_slope - 2.0) < 0.02);
  CHECK(std::abs(*rt.directional_slope - 3.0) < 0.02);

  const auto wide = finite_difference_orders(trig, {1.0, 0.0}, {0.4, 0.2, 0.1, 0.05});
  CHECK(std::abs(*wide.shared_slope - 2.0) <= 0.1);
  CHECK(std::abs(*wide.directional_slope - 3.0) <= 0.1);

  CHECK(loglog_slope({1.0, 2.0, 4.0}, {3.0, 12.0, 48.0}) == doctest::Approx(2.0));
  CHECK_THROWS_AS(loglog_slope({1.0}, {1.0}), DegenerateInput);
  CHECK_THROWS_AS(loglog_slope({1.0, 2.0}, {0.0, 1.0}), DegenerateInput);
  CHECK_THROWS_AS(loglog_slope({1.0, 1.0}, {2.0, 3.0}), DegenerateInput);
}

TEST_CASE("bound audit on quadratic model and reference curves") {
  Rng rng(4);
  const auto grid = uniform_bank(-1.5, 1.5, 0.25).values;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 16;
    const auto fa = random_vector(rng, n);
    const auto fb = random_vector(rng, n);
    const auto fc = random_vector(rng, n, 0.3);
    auto sa = fa, sb = fb, sc = fc;
    const auto na = random_vector(rng, n, 0.05);
    const auto nb = random_vector(rng, n, 0.05);
    const auto nc = random_vector(rng, n, 0.05);
    for (std::size_t k = 0; k < n; ++k) {
      sa[k] += na[k];
      sb[k] += nb[k];
      sc[k] += nc[k];
    }
    const auto model = quadratic_curve(grid, fa, fb, fc);
    const auto reference = quadratic_curve(grid, sa, sb, sc);
    const auto rep = bound_audit(model, reference, 0.25);
    REQUIRE(rep.rows.size() == grid.size());

    // error curve is (fa - sa) + t (fb - sb) + t^2 (fc - sc)
    const auto e_of = [&](double t) {
      std::vector<double> v(n);
      for (std::size_t k = 0; k < n; ++k) v[k] = -(na[k] + t * nb[k] + t * t * nc[k]);
      return v;
    };
    CHECK(rep.eps_minus == doctest::Approx(rms(e_of(-1.0))).epsilon(1e-12));
    CHECK(rep.eps_plus == doctest::Approx(rms(e_of(1.0))).epsilon(1e-12));

    double lip = 0.0;
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
      lip = std::max(lip, rms(minus(reference.values[k + 1], reference.values[k])) / 0.25);
    }
    CHECK(rep.lipschitz_s == doctest::Approx(lip).epsilon(1e-12));

    for (const auto& row : rep.rows) {
      CHECK(row.measured == doctest::Approx(rms(e_of(row.alpha))).epsilon(1e-10));
      CHECK(row.k_e == doctest::Approx(2.0 * rms(nc)).epsilon(1e-8));
      CHECK(row.k_f == doctest::Approx(2.0 * rms(fc)).epsilon(1e-8));
      CHECK(row.k_s == doctest::Approx(2.0 * rms(sc)).epsilon(1e-8));
      CHECK(row.tolerance <= 1e-9);
      CHECK(row.slack >= -1e-12);
      CHECK(row.bound_ke + 1e-12 >= row.measured);
      CHECK(row.bound + 1e-12 >= row.bound_ke);
      CHECK(!row.flagged);
      if (row.alpha < 1.5) {
        CHECK(row.mismatch_measured <= row.mismatch_bound + 1e-12);
      } else {
        CHECK(std::isnan(row.mismatch_measured));
      }
      if (std::abs(row.alpha) == 1.0) {
        CHECK(row.bound == row.measured);
        CHECK(row.slack == 0.0);
      }
    }
  }
}

TEST_CASE("bound audit on affine curves reduces to endpoint interpolation") {
  Rng rng(5);
  const auto grid = uniform_bank(-1.5, 1.5, 0.25).values;
  const std::vector<double> zero(6, 0.0);
  const auto model = quadratic_curve(grid, random_vector(rng, 6), random_vector(rng, 6), zero);
  const auto reference = quadratic_curve(grid, random_vector(rng, 6), random_vector(rng, 6), zero);
  const auto rep = bound_audit(model, reference, 0.25);
  for (const auto& row : rep.rows) {
    const double interp = std::abs(1.0 - row.alpha) / 2.0 * rep.eps_minus +
                          std::abs(1.0 + row.alpha) / 2.0 * rep.eps_plus;
    CHECK(row.k_f <= 1e-12);
    CHECK(row.k_s <= 1e-12);
    CHECK(row.bound == doctest::Approx(interp).epsilon(1e-9));
    CHECK(row.slack >= -1e-12);
  }
}

TEST_CASE("bound audit on a spike curve") {
  const std::vector<double> grid{-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5};
  CurveSamples model{grid, {}};
  CurveSamples reference{grid, {}};
  for (double t : grid) {
    model.values.push_back({t == 0.0 ? 1.0 : 0.0});
    reference.values.push_back({0.0});
  }
  const auto rep = bound_audit(model, reference, 0.5);
  CHECK(rep.eps_minus == 0.0);
  CHECK(rep.eps_plus == 0.0);
  const auto& mid = rep.rows[3];
  CHECK(mid.measured == 1.0);
  CHECK(mid.k_f == doctest::Approx(8.0));  // |0 - 2 + 0| / 0.25
  CHECK(mid.bound == doctest::Approx(4.0));
  CHECK(!mid.flagged);

  CHECK_THROWS_AS(bound_audit(model, reference, 0.25), InvalidArgument);
  CurveSamples shifted = reference;
  shifted.alphas[0] = -1.75;
  CHECK_THROWS_AS(bound_audit(model, shifted, 0.5), InvalidArgument);
}

TEST_CASE("bound audit on an operator line") {
  FamilySpec spec;
  spec.family = FamilyId::diffreact;
  spec.axis = "D_u";
  spec.lambda_low = 8e-4;
  spec.lambda_high = 1.2e-3;
  spec.lambda_center = 1e-3;
  spec.coefficients = {{"D_u", 1e-3}, {"D_v", 5e-3}, {"k", 5e-3}};
  spec.height = spec.width = 8;
  spec.frames = 3;

  OperatorConfig cfg;
  cfg.channels = 2;
  cfg.width = 4;
  cfg.modes = 2;
  cfg.layers = 2;
  cfg.grid_h = cfg.grid_w = 8;
  OperatorModel m{cfg, identity_normalizer(2), init_weights(cfg, 11)};
  Lineage l;
  l.role = CheckpointRole::anchor;
  const auto anchor = make_checkpoint(m, l);
  Rng rng(12);
  auto child = [&](CheckpointRole role) {
    Checkpoint c = anchor;
    for (auto& [name, t] : c.weights) {
      for (double& v : t.data) v += 0.01 * rng.normal();
    }
    c.lineage.role = role;
    c.lineage.parent_hash = content_hash(anchor);
    c.lineage.anchor_hash = anchor_of(anchor);
    return c;
  };
  const CoordinateLine line(
      decompose(anchor, child(CheckpointRole::endpoint_low), child(CheckpointRole::endpoint_high)),
      -1.5, 1.5);

  const auto probes = make_probe_batch(spec.seed_bank, 2);
  CHECK(probes.seeds.size() == 2);
  for (auto s : probes.seeds) {
    for (auto split : {Split::train, Split::val, Split::eval}) {
      for (int i = 0; i < 1000; ++i) CHECK(s != split_seed(spec, split, i));
    }
  }

  const auto rep = bound_audit(line, spec, default_bank(), probes, 2);
  REQUIRE(rep.rows.size() == 13);
  CHECK(rep.delta == 0.25);
  for (const auto& row : rep.rows) {
    CHECK(std::isfinite(row.measured));
    CHECK(std::isfinite(row.bound));
    if (std::abs(row.alpha) == 1.0) CHECK(row.slack == 0.0);
  }
  const auto again = bound_audit(line, spec, default_bank(), probes, 1);
  for (std::size_t k = 0; k < rep.rows.size(); ++k) {
    CHECK(again.rows[k].measured == rep.rows[k].measured);
    CHECK(again.rows[k].bound == rep.rows[k].bound);
  }
  CHECK_THROWS_AS(bound_audit(line, spec, uniform_bank(-2.0, 2.0, 0.5), probes), InvalidArgument);
  CHECK_THROWS_AS(make_probe_batch(0, 0), InvalidArgument);
}
