#include "ccm/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ccm/error.hpp"
#include "ccm/rng.hpp"

namespace ccm {

std::string to_string(IndexTag tag) {
  switch (tag) {
    case IndexTag::full: return "full";
    case IndexTag::calibration: return "calibration";
    case IndexTag::future: return "future";
  }
  return "unknown";
}

IndexSet full_indices(int frames) {
  if (frames < 1) throw InvalidArgument("index set needs at least one frame");
  IndexSet s{std::vector<int>(static_cast<std::size_t>(frames)), IndexTag::full};
  std::iota(s.indices.begin(), s.indices.end(), 1);
  return s;
}

ProtocolSplit split_protocol(int frames, int prefix) {
  if (prefix < 1 || prefix >= frames) {
    throw InvalidArgument("calibration prefix K=" + std::to_string(prefix) +
                          " must satisfy 1 <= K < T=" + std::to_string(frames));
  }
  ProtocolSplit out;
  out.calibration.tag = IndexTag::calibration;
  out.future.tag = IndexTag::future;
  for (int t = 1; t <= prefix; ++t) out.calibration.indices.push_back(t);
  for (int t = prefix + 1; t <= frames; ++t) out.future.indices.push_back(t);
  return out;
}

double frame_relative_l2(const GridField& pred, const GridField& truth) {
  if (!pred.same_shape(truth)) throw InvalidArgument("prediction and truth shapes differ");
  const auto p = pred.values();
  const auto u = truth.values();
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double e = p[k] - u[k];
    num += e * e;
    den += u[k] * u[k];
  }
  if (den == 0.0) throw DegenerateInput("truth frame has zero norm");
  return std::sqrt(num / den);
}

std::vector<double> frame_errors(const Trajectory& pred, const Trajectory& truth) {
  if (pred.size() != truth.size() || truth.size() < 2) {
    throw InvalidArgument("trajectories must have equal length of at least two frames (got " +
                          std::to_string(pred.size()) + " and " + std::to_string(truth.size()) +
                          ")");
  }
  std::vector<double> out(truth.size(), 0.0);
  for (std::size_t t = 1; t < truth.size(); ++t) out[t] = frame_relative_l2(pred[t], truth[t]);
  return out;
}

double mean_over(const std::vector<double>& errors, const IndexSet& idx) {
  if (idx.indices.empty()) throw InvalidArgument("empty index set");
  double sum = 0.0;
  for (int t : idx.indices) {
    if (t < 1 || static_cast<std::size_t>(t) >= errors.size()) {
      throw InvalidArgument("time index " + std::to_string(t) + " outside 1.." +
                            std::to_string(errors.size() - 1));
    }
    sum += errors[static_cast<std::size_t>(t)];
  }
  return sum / static_cast<double>(idx.indices.size());
}

double rollout_l2(const Trajectory& pred, const Trajectory& truth, const IndexSet& idx) {
  if (pred.size() != truth.size()) throw InvalidArgument("trajectory lengths differ");
  if (idx.indices.empty()) throw InvalidArgument("empty index set");
  double sum = 0.0;
  for (int t : idx.indices) {
    if (t < 1 || static_cast<std::size_t>(t) >= truth.size()) {
      throw InvalidArgument("time index " + std::to_string(t) + " outside the rollout");
    }
    sum += frame_relative_l2(pred[static_cast<std::size_t>(t)], truth[static_cast<std::size_t>(t)]);
  }
  return sum / static_cast<double>(idx.indices.size());
}

OodSummary summarize(const std::vector<double>& regime_means) {
  if (regime_means.empty()) throw InvalidArgument("no regimes to summarize");
  OodSummary s;
  s.mean = std::accumulate(regime_means.begin(), regime_means.end(), 0.0) /
           static_cast<double>(regime_means.size());
  s.worst = *std::max_element(regime_means.begin(), regime_means.end());
  return s;
}

double relative_gain(double base, double method) {
  if (base == 0.0) throw DegenerateInput("relative gain against a zero base loss");
  return (base - method) / base;
}

double spatial_mean(const GridField& f, int channel) {
  const auto v = f.channel(channel);
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double spatial_std(const GridField& f, int channel) {
  const auto v = f.channel(channel);
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

double enstrophy(const GridField& vorticity) {
  const auto v = vorticity.channel(0);
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return ss / static_cast<double>(v.size());
}

double front_radius(const GridField& height, double h_outer) {
  const int h = height.height();
  const int w = height.width();
  const double dx = height.lx() / w;
  const double dy = height.ly() / h;
  const double dr = std::min(dx, dy);
  const double rmax = 0.5 * std::min(height.lx(), height.ly());
  const auto bins = static_cast<std::size_t>(rmax / dr);
  std::vector<double> sum(bins, 0.0);
  std::vector<int> count(bins, 0);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double x = -0.5 * height.lx() + (j + 0.5) * dx;
      const double y = -0.5 * height.ly() + (i + 0.5) * dy;
      const auto b = static_cast<std::size_t>(std::hypot(x, y) / dr);
      if (b >= bins) continue;
      sum[b] += height.at(i, j, 0);
      ++count[b];
    }
  }
  std::vector<double> radius, profile;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    radius.push_back((static_cast<double>(b) + 0.5) * dr);
    profile.push_back(sum[b] / count[b]);
  }
  if (profile.size() < 2) return 0.0;
  const double level = 0.5 * (h_outer + profile.front());
  for (std::size_t b = profile.size() - 1; b-- > 0;) {
    const double a = profile[b] - level;
    const double c = profile[b + 1] - level;
    if ((a > 0.0) != (c > 0.0)) {
      const double f = a / (a - c);
      return radius[b] + f * (radius[b + 1] - radius[b]);
    }
  }
  return 0.0;
}

namespace {

void check_pair(const Trajectory& pred, const Trajectory& truth, const IndexSet& idx) {
  if (pred.size() != truth.size()) throw InvalidArgument("trajectory lengths differ");
  if (idx.indices.empty()) throw InvalidArgument("empty index set");
  for (int t : idx.indices) {
    if (t < 1 || static_cast<std::size_t>(t) >= truth.size()) {
      throw InvalidArgument("time index " + std::to_string(t) + " outside the rollout");
    }
    const auto& p = pred[static_cast<std::size_t>(t)];
    if (!p.same_shape(truth[static_cast<std::size_t>(t)])) {
      throw InvalidArgument("prediction and truth shapes differ");
    }
    if (p.channels() < 1) throw InvalidArgument("missing field channel");
  }
}

}  // namespace

PhysicsReport physics_rdb(const Trajectory& pred, const Trajectory& truth, const IndexSet& idx,
                          double h_outer) {
  check_pair(pred, truth, idx);
  double mass = 0.0, sd = 0.0, front = 0.0;
  for (int t : idx.indices) {
    const auto& p = pred[static_cast<std::size_t>(t)];
    const auto& u = truth[static_cast<std::size_t>(t)];
    mass += std::abs(spatial_mean(p) - spatial_mean(u));
    sd += std::abs(spatial_std(p) - spatial_std(u));
    front += std::abs(front_radius(p, h_outer) - front_radius(u, h_outer));
  }
  const double n = static_cast<double>(idx.indices.size());
  return {FamilyId::rdb, {{"mass_mae", mass / n}, {"std_mae", sd / n}, {"front_mae", front / n}}};
}

PhysicsReport physics_ns2d(const Trajectory& pred, const Trajectory& truth, const IndexSet& idx) {
  check_pair(pred, truth, idx);
  double mean_err = 0.0, ens_err = 0.0;
  for (int t : idx.indices) {
    const auto& p = pred[static_cast<std::size_t>(t)];
    const auto& u = truth[static_cast<std::size_t>(t)];
    mean_err += std::abs(spatial_mean(p) - spatial_mean(u));
    ens_err += std::abs(enstrophy(p) - enstrophy(u));
  }
  const double n = static_cast<double>(idx.indices.size());
  return {FamilyId::ns2d,
          {{"vorticity_mean_mae", mean_err / n},
           {"enstrophy_mae", ens_err / n},
           {"final_enstrophy", enstrophy(pred[static_cast<std::size_t>(idx.indices.back())])}}};
}

double coordinate_correlation(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.size() < 3) throw InvalidArgument("correlation needs at least three pairs");
  const double n = static_cast<double>(pairs.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : pairs) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const auto& [x, y] : pairs) {
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
    sxy += (x - mx) * (y - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateInput("correlation undefined: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

WinLossRegret win_loss_regret(const std::vector<double>& base, const std::vector<double>& method) {
  if (base.size() != method.size()) {
    throw InvalidArgument("win/loss needs matched task lists (" + std::to_string(base.size()) +
                          " vs " + std::to_string(method.size()) + ")");
  }
  WinLossRegret r;
  for (std::size_t k = 0; k < base.size(); ++k) {
    if (method[k] < base[k]) ++r.wins;
    if (method[k] > base[k]) {
      ++r.losses;
      r.negative_regret += method[k] - base[k];
    }
  }
  return r;
}

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double f = pos - static_cast<double>(lo);
  return v[lo] + f * (v[hi] - v[lo]);
}

}  // namespace

BootstrapInterval bootstrap_ci(const std::vector<double>& values, int resamples, double level,
                               std::uint64_t seed) {
  if (values.size() < 2) throw InvalidArgument("bootstrap needs at least two samples");
  if (resamples < 1) throw InvalidArgument("bootstrap needs at least one resample");
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("confidence level must be in (0, 1)");
  const std::size_t n = values.size();
  BootstrapInterval out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  Rng rng(mix_seed(seed, 0xb007));
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (double& m : means) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += values[rng.below(n)];
    m = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  out.lo = quantile_sorted(means, 0.5 * (1.0 - level));
  out.hi = quantile_sorted(means, 0.5 * (1.0 + level));
  return out;
}

}  // namespace ccm
