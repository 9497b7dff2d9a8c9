#include "ccm/theory_checks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ccm/error.hpp"
#include "ccm/parallel.hpp"

namespace ccm {

namespace {

constexpr double kGridTol = 1e-12;

std::vector<double> difference(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InvalidArgument("curve samples have different lengths");
  std::vector<double> out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] - b[k];
  return out;
}

double euclid(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Largest curvature value among points inside [lo, hi].
double sup_inside(const std::vector<CurvaturePoint>& pts, double lo, double hi) {
  double best = 0.0;
  for (const auto& p : pts) {
    if (p.alpha >= lo - kGridTol && p.alpha <= hi + kGridTol) best = std::max(best, p.value);
  }
  return best;
}

// max over points in [lo, hi] present at both spacings of |K(d) - K(2d)| / 3.
double richardson_inside(const std::vector<CurvaturePoint>& fine,
                         const std::vector<CurvaturePoint>& coarse, double lo, double hi) {
  double best = 0.0;
  for (const auto& c : coarse) {
    if (c.alpha < lo - kGridTol || c.alpha > hi + kGridTol) continue;
    for (const auto& f : fine) {
      if (std::abs(f.alpha - c.alpha) <= kGridTol) {
        best = std::max(best, std::abs(f.value - c.value) / 3.0);
      }
    }
  }
  return best;
}

std::vector<CurvaturePoint> curvature_or_empty(const CurveSamples& c, double delta) {
  try {
    return empirical_curvature(c, delta);
  } catch (const InvalidArgument&) {
    return {};
  }
}

}  // namespace

void CurveSamples::validate() const {
  if (alphas.size() != values.size() || alphas.empty()) {
    throw InvalidArgument("curve needs one sample per grid alpha");
  }
  for (std::size_t k = 1; k < alphas.size(); ++k) {
    if (!(alphas[k - 1] < alphas[k])) throw InvalidArgument("curve grid must be strictly increasing");
  }
  for (const auto& v : values) {
    if (v.size() != values.front().size()) throw InvalidArgument("curve samples differ in length");
  }
  if (!find(-1.0) || !find(1.0)) throw InvalidArgument("curve grid must contain -1 and +1");
}

std::optional<std::size_t> CurveSamples::find(double alpha) const {
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    if (std::abs(alphas[k] - alpha) <= kGridTol) return k;
  }
  return std::nullopt;
}

double rho_norm(const std::vector<double>& v) {
  if (v.empty()) throw InvalidArgument("rho norm of an empty vector");
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

std::vector<CurvaturePoint> empirical_curvature(const CurveSamples& curve, double delta) {
  if (!(delta > 0.0)) throw InvalidArgument("curvature step must be positive");
  if (curve.alphas.size() != curve.values.size()) {
    throw InvalidArgument("curve needs one sample per grid alpha");
  }
  std::vector<CurvaturePoint> out;
  for (std::size_t k = 0; k < curve.alphas.size(); ++k) {
    const double a = curve.alphas[k];
    const auto lo = curve.find(a - delta);
    const auto hi = curve.find(a + delta);
    if (!lo || !hi) continue;
    const auto& fm = curve.values[*lo];
    const auto& f0 = curve.values[k];
    const auto& fp = curve.values[*hi];
    std::vector<double> d2(f0.size());
    for (std::size_t i = 0; i < f0.size(); ++i) d2[i] = fp[i] - 2.0 * f0[i] + fm[i];
    out.push_back({a, rho_norm(d2) / (delta * delta)});
  }
  if (out.empty()) throw InvalidArgument("alpha grid too coarse for curvature step");
  return out;
}

double continuation_bound(double eps_minus, double eps_plus, double k_e, double alpha) {
  if (eps_minus < 0.0 || eps_plus < 0.0 || k_e < 0.0) {
    throw InvalidArgument("continuation bound inputs must be nonnegative");
  }
  return std::abs(1.0 - alpha) / 2.0 * eps_minus + std::abs(1.0 + alpha) / 2.0 * eps_plus +
         std::abs(alpha * alpha - 1.0) / 2.0 * k_e;
}

LemmaReport verify_lemma_synthetic(const VectorCurve& phi, const IntervalSup& sup_second,
                                   const std::vector<double>& alphas) {
  LemmaReport r;
  r.min_slack = std::numeric_limits<double>::infinity();
  const auto lo_end = phi(-1.0);
  const auto hi_end = phi(1.0);
  for (double a : alphas) {
    const auto v = phi(a);
    std::vector<double> interp(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
      interp[k] = (1.0 - a) / 2.0 * lo_end[k] + (1.0 + a) / 2.0 * hi_end[k];
    }
    const double err = euclid(difference(v, interp));
    const double bound =
        std::abs(a * a - 1.0) / 2.0 * sup_second(std::min(a, -1.0), std::max(a, 1.0));
    r.alphas.push_back(a);
    r.errors.push_back(err);
    r.bounds.push_back(bound);
    r.min_slack = std::min(r.min_slack, bound - err);
  }
  return r;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DegenerateInput("slope fit needs two or more points");
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(x[k] > 0.0) || !(y[k] > 0.0)) throw DegenerateInput("slope fit needs positive values");
    mx += std::log(x[k]);
    my += std::log(y[k]);
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double dx = std::log(x[k]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(y[k]) - my);
  }
  if (sxx == 0.0) throw DegenerateInput("slope fit needs distinct abscissae");
  return sxy / sxx;
}

FdOrders finite_difference_orders(const VectorCurve& branch,
                                  const std::vector<double>& derivative_at_zero,
                                  const std::vector<double>& hs) {
  FdOrders r;
  const auto u0 = branch(0.0);
  if (derivative_at_zero.size() != u0.size()) throw InvalidArgument("derivative length mismatch");
  for (double h : hs) {
    const auto up = branch(h);
    const auto um = branch(-h);
    std::vector<double> sh(u0.size()), dir(u0.size());
    for (std::size_t k = 0; k < u0.size(); ++k) {
      sh[k] = (um[k] + up[k]) / 2.0 - u0[k];
      dir[k] = (up[k] - um[k]) / 2.0 - h * derivative_at_zero[k];
    }
    r.hs.push_back(h);
    r.shared_errors.push_back(euclid(sh));
    r.directional_errors.push_back(euclid(dir));
  }
  try {
    r.shared_slope = loglog_slope(r.hs, r.shared_errors);
  } catch (const DegenerateInput&) {
  }
  try {
    r.directional_slope = loglog_slope(r.hs, r.directional_errors);
  } catch (const DegenerateInput&) {
  }
  return r;
}

BoundReport bound_audit(const CurveSamples& model, const CurveSamples& reference, double delta) {
  model.validate();
  reference.validate();
  if (model.alphas != reference.alphas) throw InvalidArgument("model and reference grids differ");
  for (std::size_t k = 1; k < model.alphas.size(); ++k) {
    if (std::abs(model.alphas[k] - model.alphas[k - 1] - delta) > 1e-9) {
      throw InvalidArgument("bound audit needs a uniform grid with the given spacing");
    }
  }
  const std::size_t n = model.alphas.size();
  CurveSamples err{model.alphas, {}};
  for (std::size_t k = 0; k < n; ++k) err.values.push_back(difference(model.values[k], reference.values[k]));

  BoundReport rep;
  rep.delta = delta;
  rep.eps_minus = rho_norm(err.values[*err.find(-1.0)]);
  rep.eps_plus = rho_norm(err.values[*err.find(1.0)]);

  const auto ke = empirical_curvature(err, delta);
  const auto kf = empirical_curvature(model, delta);
  const auto ks = empirical_curvature(reference, delta);
  const auto kf2 = curvature_or_empty(model, 2.0 * delta);
  const auto ks2 = curvature_or_empty(reference, 2.0 * delta);

  for (std::size_t k = 0; k + 1 < n; ++k) {
    rep.lipschitz_s = std::max(
        rep.lipschitz_s, rho_norm(difference(reference.values[k + 1], reference.values[k])) / delta);
  }

  for (std::size_t k = 0; k < n; ++k) {
    const double a = model.alphas[k];
    const double lo = std::min(a, -1.0);
    const double hi = std::max(a, 1.0);
    BoundRow row;
    row.alpha = a;
    row.measured = rho_norm(err.values[k]);
    row.k_e = sup_inside(ke, lo, hi);
    row.k_f = sup_inside(kf, lo, hi);
    row.k_s = sup_inside(ks, lo, hi);
    row.bound = continuation_bound(rep.eps_minus, rep.eps_plus, row.k_f + row.k_s, a);
    row.bound_ke = continuation_bound(rep.eps_minus, rep.eps_plus, row.k_e, a);
    row.slack = row.bound - row.measured;
    row.tolerance = std::abs(a * a - 1.0) / 2.0 *
                    (richardson_inside(kf, kf2, lo, hi) + richardson_inside(ks, ks2, lo, hi));
    row.flagged = row.slack < -row.tolerance;
    if (k + 1 < n) {
      row.mismatch_measured = rho_norm(difference(model.values[k], reference.values[k + 1]));
      row.mismatch_bound = row.bound + rep.lipschitz_s * delta;
    } else {
      row.mismatch_measured = std::nan("");
      row.mismatch_bound = std::nan("");
    }
    rep.rows.push_back(row);
  }
  return rep;
}

ProbeBatch make_probe_batch(std::uint64_t seed, int count) {
  if (count < 1) throw InvalidArgument("probe batch needs at least one sample");
  ProbeBatch b;
  for (int k = 0; k < count; ++k) b.seeds.push_back(seed + 300000 + static_cast<std::uint64_t>(k));
  return b;
}

BoundReport bound_audit(const CoordinateLine& line, const FamilySpec& spec, const AlphaBank& bank,
                        const ProbeBatch& probes, int jobs) {
  bank.validate();
  if (bank.alpha_min() < line.alpha_min || bank.alpha_max() > line.alpha_max) {
    throw InvalidArgument("audit grid must stay within the line's clip bounds");
  }
  const std::size_t n = bank.values.size();
  CurveSamples model{bank.values, std::vector<std::vector<double>>(n)};
  CurveSamples reference{bank.values, std::vector<std::vector<double>>(n)};
  parallel_for(n, jobs, [&](std::size_t k) {
    const double a = bank.values[k];
    const auto op = to_model(compose_at(line, a));
    const double lambda = denormalize_coordinate(a, spec);
    for (auto seed : probes.seeds) {
      const auto ic = sample_initial_condition(spec, seed, lambda);
      const auto truth = simulate_from(spec, lambda, ic);
      const auto pred = rollout(op, ic, spec.frames).frames;
      for (int t = 1; t <= spec.frames; ++t) {
        const auto p = pred[static_cast<std::size_t>(t)].values();
        const auto u = truth[static_cast<std::size_t>(t)].values();
        model.values[k].insert(model.values[k].end(), p.begin(), p.end());
        reference.values[k].insert(reference.values[k].end(), u.begin(), u.end());
      }
    }
  });
  return bound_audit(model, reference, bank.values[1] - bank.values[0]);
}

}  // namespace ccm
