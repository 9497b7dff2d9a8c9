#include "ccm/pde_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ccm/byte_io.hpp"
#include "ccm/error.hpp"
#include "ccm/parallel.hpp"
#include "ccm/rng.hpp"

namespace ccm {

namespace {

constexpr double kBlowUp = 1e6;
constexpr char kTrajMagic[8] = {'C', 'C', 'M', 'T', 'R', 'A', 'J', '\0'};
constexpr std::uint32_t kTrajVersion = 1;

std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

// Physical |k|^2 (and components) for an H x W planar spectrum.
struct Wavenumbers {
  std::vector<double> kx, ky, k2;
  Wavenumbers(int h, int w, double lx, double ly)
      : kx(static_cast<std::size_t>(h) * w),
        ky(kx.size()),
        k2(kx.size()) {
    for (int i = 0; i < h; ++i) {
      const double kyi = 2.0 * std::numbers::pi * wavenumber_index(i, h) / ly;
      for (int j = 0; j < w; ++j) {
        const double kxj = 2.0 * std::numbers::pi * wavenumber_index(j, w) / lx;
        const std::size_t n = static_cast<std::size_t>(i) * w + j;
        kx[n] = kxj;
        ky[n] = kyi;
        k2[n] = kxj * kxj + kyi * kyi;
      }
    }
  }
};

void to_spectral(std::span<const double> phys, std::span<Complex> out, int h,
                 int w) {
  for (std::size_t n = 0; n < phys.size(); ++n) out[n] = Complex{phys[n], 0.0};
  fft2_inplace(out, h, w, false);
}

void to_physical(std::span<const Complex> spec, std::span<Complex> scratch,
                 std::span<double> out, int h, int w) {
  std::copy(spec.begin(), spec.end(), scratch.begin());
  fft2_inplace(scratch, h, w, true);
  const double inv_n = 1.0 / static_cast<double>(out.size());
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = scratch[n].real() * inv_n;
}

void check_stepping(int frames, const TimeStepping& st) {
  if (frames < 1) throw InvalidArgument("need at least one frame");
  if (!(st.frame_dt > 0.0) || st.substeps < 1) {
    throw InvalidArgument("frame_dt must be positive and substeps >= 1");
  }
}

void check_blowup(std::span<const double> values, const std::string& who,
                  long step) {
  for (double v : values) {
    if (!std::isfinite(v) || std::abs(v) > kBlowUp) {
      throw SimulationDiverged(who + " diverged at step " + std::to_string(step),
                               step);
    }
  }
}

std::uint64_t family_tag(FamilyId id) {
  switch (id) {
    case FamilyId::diffreact: return 0xd1ffULL;
    case FamilyId::ns2d: return 0x25d2ULL;
    case FamilyId::rdb: return 0x2db0ULL;
  }
  return 0;
}

// White noise low-pass filtered by exp(-(k l)^2 / 2), rescaled to unit std
// with zero mean.
std::vector<double> smoothed_noise(Rng& rng, int h, int w, double lx, double ly,
                                   double length) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> noise(n);
  for (auto& v : noise) v = rng.normal();
  std::vector<Complex> spec(n);
  to_spectral(noise, spec, h, w);
  Wavenumbers k(h, w, lx, ly);
  for (std::size_t m = 0; m < n; ++m) {
    spec[m] *= std::exp(-0.5 * k.k2[m] * length * length);
  }
  spec[0] = 0.0;
  std::vector<Complex> scratch(n);
  std::vector<double> out(n);
  to_physical(spec, scratch, out, h, w);
  double mean = 0.0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double& v : out) {
    v -= mean;
    var += v * v;
  }
  const double sd = std::sqrt(var / static_cast<double>(n));
  if (sd > 0.0) {
    for (double& v : out) v /= sd;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// names

std::string to_string(FamilyId id) {
  switch (id) {
    case FamilyId::diffreact: return "diffreact";
    case FamilyId::ns2d: return "ns2d";
    case FamilyId::rdb: return "rdb";
  }
  return "?";
}

std::string to_string(RegimeRole role) {
  switch (role) {
    case RegimeRole::support: return "support";
    case RegimeRole::endpoint_low: return "endpoint-low";
    case RegimeRole::endpoint_high: return "endpoint-high";
    case RegimeRole::interpolation: return "interpolation";
    case RegimeRole::ood_low: return "ood-low";
    case RegimeRole::ood_high: return "ood-high";
  }
  return "?";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::eval: return "eval";
  }
  return "?";
}

FamilyId family_from_string(const std::string& text) {
  if (text == "diffreact") return FamilyId::diffreact;
  if (text == "ns2d") return FamilyId::ns2d;
  if (text == "rdb") return FamilyId::rdb;
  throw InvalidArgument("unknown family '" + text + "'");
}

RegimeRole role_from_string(const std::string& text) {
  for (auto r : {RegimeRole::support, RegimeRole::endpoint_low,
                 RegimeRole::endpoint_high, RegimeRole::interpolation,
                 RegimeRole::ood_low, RegimeRole::ood_high}) {
    if (to_string(r) == text) return r;
  }
  throw InvalidArgument("unknown regime role '" + text + "'");
}

Split split_from_string(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "eval") return Split::eval;
  throw InvalidArgument("unknown split '" + text + "'");
}

// ---------------------------------------------------------------------------
// FamilySpec

double FamilySpec::coefficient(const std::string& key) const {
  auto it = coefficients.find(key);
  if (it == coefficients.end()) {
    throw InvalidArgument("family " + to_string(family) +
                          " is missing coefficient '" + key + "'");
  }
  return it->second;
}

double FamilySpec::coefficient(const std::string& key, double fallback) const {
  auto it = coefficients.find(key);
  return it == coefficients.end() ? fallback : it->second;
}

int FamilySpec::channel_count() const {
  return family == FamilyId::diffreact ? 2 : 1;
}

std::vector<std::string> FamilySpec::channel_names() const {
  switch (family) {
    case FamilyId::diffreact: return {"u", "v"};
    case FamilyId::ns2d: return {"vorticity"};
    case FamilyId::rdb: return {"height"};
  }
  return {};
}

namespace {

void check_lambda_valid(const FamilySpec& spec, double lambda,
                        const std::string& what) {
  if (!std::isfinite(lambda)) throw InvalidArgument(what + ": non-finite lambda");
  switch (spec.family) {
    case FamilyId::diffreact:
      if (spec.axis != "k" && !(lambda > 0.0)) {
        throw InvalidArgument(what + ": diffusivity must be positive");
      }
      break;
    case FamilyId::ns2d:
      if (!(lambda > 0.0)) throw InvalidArgument(what + ": viscosity must be positive");
      break;
    case FamilyId::rdb: {
      const double outer = spec.coefficient("h_outer", 1.0);
      if (!(lambda > outer)) {
        throw InvalidArgument(what + ": inner height " + fmt_double(lambda) +
                              " must exceed the outer height " + fmt_double(outer));
      }
      break;
    }
  }
}

}  // namespace

void FamilySpec::validate() const {
  if (!(lambda_low < lambda_high)) {
    throw InvalidArgument("family axis needs lambda_low < lambda_high");
  }
  if (lambda_center && !(lambda_low < *lambda_center && *lambda_center < lambda_high)) {
    throw InvalidArgument("axis center must lie strictly between the endpoints");
  }
  if (height < 4 || width < 4 || !is_power_of_two(height) || !is_power_of_two(width)) {
    throw InvalidArgument("family grid must be powers of two >= 4");
  }
  if (!(lx > 0.0) || !(ly > 0.0)) throw InvalidArgument("domain lengths must be positive");
  if (frames < 2) throw InvalidArgument("family horizon needs at least two frames");
  if (!(frame_dt > 0.0) || substeps < 1) {
    throw InvalidArgument("frame_dt must be positive and substeps >= 1");
  }
  if (family == FamilyId::diffreact && axis != "D_u" && axis != "D_v" && axis != "k") {
    throw InvalidArgument("diffreact axis must be D_u, D_v or k");
  }
  check_lambda_valid(*this, lambda_low, "lambda_low");
  check_lambda_valid(*this, lambda_high, "lambda_high");

  std::set<std::string> names;
  for (const auto& r : regimes) {
    if (r.name.empty()) throw InvalidArgument("regime without a name");
    if (!names.insert(r.name).second) {
      throw InvalidArgument("duplicate regime name '" + r.name + "'");
    }
    check_lambda_valid(*this, r.lambda, "regime " + r.name);
    const double s = normalize_coordinate(r.lambda, *this);
    const bool at_low = s == -1.0;
    const bool at_high = s == 1.0;
    const auto bad = [&](const std::string& why) {
      throw InvalidArgument("regime " + r.name + " (s=" + fmt_double(s) + ", role " +
                            to_string(r.role) + "): " + why);
    };
    if ((r.role == RegimeRole::endpoint_low) != at_low) bad("endpoint-low iff s = -1");
    if ((r.role == RegimeRole::endpoint_high) != at_high) bad("endpoint-high iff s = +1");
    switch (r.role) {
      case RegimeRole::support:
        if (!(std::abs(s) < 1.0)) bad("support regimes lie inside the endpoints");
        break;
      case RegimeRole::interpolation:
        if (!(std::abs(s) <= 1.0)) bad("interpolation needs |s| <= 1");
        break;
      case RegimeRole::ood_low:
        if (!(s < -1.0)) bad("ood-low needs s < -1");
        break;
      case RegimeRole::ood_high:
        if (!(s > 1.0)) bad("ood-high needs s > 1");
        break;
      default:
        break;
    }
  }
}

double normalize_coordinate(double lambda, const FamilySpec& spec) {
  const double lo = spec.lambda_low;
  const double hi = spec.lambda_high;
  if (hi == lo) throw InvalidArgument("degenerate family axis: lambda_high == lambda_low");
  if (!(lo < hi)) throw InvalidArgument("family axis needs lambda_low < lambda_high");
  if (spec.lambda_center) {
    const double c = *spec.lambda_center;
    if (lambda >= c) return (lambda - c) / (hi - c);
    return -(c - lambda) / (c - lo);
  }
  // ((lambda - lo) - (hi - lambda)) is exactly -(hi - lo) at lo and +(hi - lo)
  // at hi, so the endpoints land on -1 and +1 without rounding.
  return ((lambda - lo) - (hi - lambda)) / (hi - lo);
}

double denormalize_coordinate(double s, const FamilySpec& spec) {
  const double lo = spec.lambda_low;
  const double hi = spec.lambda_high;
  if (hi == lo) throw InvalidArgument("degenerate family axis: lambda_high == lambda_low");
  if (s == -1.0) return lo;
  if (s == 1.0) return hi;
  if (spec.lambda_center) {
    const double c = *spec.lambda_center;
    return s >= 0.0 ? c + s * (hi - c) : c + s * (c - lo);
  }
  return 0.5 * (lo + hi) + 0.5 * s * (hi - lo);
}

RegimeRole role_for_coordinate(double s) {
  if (s == -1.0) return RegimeRole::endpoint_low;
  if (s == 1.0) return RegimeRole::endpoint_high;
  if (s < -1.0) return RegimeRole::ood_low;
  if (s > 1.0) return RegimeRole::ood_high;
  return RegimeRole::interpolation;
}

RegimeTask make_task(const RegimeDef& def, const FamilySpec& spec,
                     std::vector<std::uint64_t> seeds) {
  RegimeTask t;
  t.name = def.name;
  t.lambda = def.lambda;
  t.role = def.role;
  t.split = def.split;
  t.group = def.group;
  t.s = normalize_coordinate(def.lambda, spec);
  t.seeds = std::move(seeds);
  return t;
}

// ---------------------------------------------------------------------------
// diffusion-reaction

Trajectory simulate_diffreact(const DiffReactParams& p, const GridField& ic,
                              int frames, const TimeStepping& st) {
  check_stepping(frames, st);
  if (!(p.du > 0.0) || !(p.dv > 0.0)) {
    throw InvalidArgument("diffreact diffusivities must be positive");
  }
  if (ic.channels() != 2) throw InvalidArgument("diffreact needs a 2-channel (u, v) state");
  if (!ic.all_finite()) throw InvalidArgument("diffreact initial condition is not finite");

  const int h = ic.height();
  const int w = ic.width();
  const std::size_t n = ic.cell_count();
  const double dt = st.frame_dt / st.substeps;
  const Wavenumbers k(h, w, ic.lx(), ic.ly());

  std::vector<double> u = ic.channel(0);
  std::vector<double> v = ic.channel(1);
  std::vector<Complex> uh(n), vh(n), ru(n), rv(n), ru_prev(n), rv_prev(n), scratch(n);
  to_spectral(u, uh, h, w);
  to_spectral(v, vh, h, w);

  std::vector<double> au_plus(n), au_minus(n), av_plus(n), av_minus(n);
  for (std::size_t m = 0; m < n; ++m) {
    au_plus[m] = 1.0 + 0.5 * dt * p.du * k.k2[m];
    au_minus[m] = 1.0 - 0.5 * dt * p.du * k.k2[m];
    av_plus[m] = 1.0 + 0.5 * dt * p.dv * k.k2[m];
    av_minus[m] = 1.0 - 0.5 * dt * p.dv * k.k2[m];
  }

  std::vector<double> react_u(n), react_v(n);
  Trajectory out;
  out.reserve(frames + 1);
  out.push_back(ic);
  bool have_prev = false;
  long step = 0;
  for (int f = 1; f <= frames; ++f) {
    for (int sub = 0; sub < st.substeps; ++sub) {
      ++step;
      if (p.reaction) {
        for (std::size_t m = 0; m < n; ++m) {
          react_u[m] = u[m] - u[m] * u[m] * u[m] - p.k - v[m];
          react_v[m] = u[m] - v[m];
        }
        to_spectral(react_u, ru, h, w);
        to_spectral(react_v, rv, h, w);
      } else {
        std::fill(ru.begin(), ru.end(), Complex{});
        std::fill(rv.begin(), rv.end(), Complex{});
      }
      for (std::size_t m = 0; m < n; ++m) {
        const Complex fu = have_prev ? 1.5 * ru[m] - 0.5 * ru_prev[m] : ru[m];
        const Complex fv = have_prev ? 1.5 * rv[m] - 0.5 * rv_prev[m] : rv[m];
        uh[m] = (au_minus[m] * uh[m] + dt * fu) / au_plus[m];
        vh[m] = (av_minus[m] * vh[m] + dt * fv) / av_plus[m];
      }
      std::swap(ru, ru_prev);
      std::swap(rv, rv_prev);
      have_prev = true;
      to_physical(uh, scratch, u, h, w);
      to_physical(vh, scratch, v, h, w);
      check_blowup(u, "diffreact", step);
      check_blowup(v, "diffreact", step);
    }
    GridField frame(h, w, 2, ic.lx(), ic.ly());
    frame.set_channel(0, u);
    frame.set_channel(1, v);
    out.push_back(std::move(frame));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Navier-Stokes, vorticity form

Trajectory simulate_ns2d(const Ns2dParams& p, const GridField& ic, int frames,
                         const TimeStepping& st) {
  check_stepping(frames, st);
  if (!(p.nu > 0.0)) throw InvalidArgument("ns2d viscosity must be positive");
  if (ic.channels() != 1) throw InvalidArgument("ns2d needs a 1-channel vorticity state");
  if (!ic.all_finite()) throw InvalidArgument("ns2d initial condition is not finite");

  const int h = ic.height();
  const int w = ic.width();
  const std::size_t n = ic.cell_count();
  const double dt = st.frame_dt / st.substeps;
  const double dx = ic.lx() / w;
  const double dy = ic.ly() / h;
  const Wavenumbers k(h, w, ic.lx(), ic.ly());
  const DealiasMask mask(h, w);

  std::vector<double> inv_k2(n, 0.0), d_plus(n), d_minus(n);
  for (std::size_t m = 0; m < n; ++m) {
    if (k.k2[m] > 0.0) inv_k2[m] = 1.0 / k.k2[m];
    d_plus[m] = 1.0 + 0.5 * dt * p.nu * k.k2[m];
    d_minus[m] = 1.0 - 0.5 * dt * p.nu * k.k2[m];
  }

  std::vector<double> forcing(n);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double x = j * dx / ic.lx();
      const double y = i * dy / ic.ly();
      forcing[static_cast<std::size_t>(i) * w + j] =
          p.forcing_amplitude * std::sin(2.0 * std::numbers::pi * (x + y));
    }
  }
  std::vector<Complex> fh(n);
  to_spectral(forcing, fh, h, w);
  fh[0] = 0.0;

  std::vector<Complex> wh(n), wd(n), tmp(n), nl(n), nl_prev(n), scratch(n);
  to_spectral(ic.values(), wh, h, w);

  std::vector<double> vel_u(n), vel_v(n), grad_x(n), grad_y(n), adv(n), omega(n);
  const auto derivative = [&](const std::vector<Complex>& src, const std::vector<double>& kk,
                              double sign, bool use_psi, std::vector<double>& out) {
    for (std::size_t m = 0; m < n; ++m) {
      const Complex base = use_psi ? src[m] * inv_k2[m] : src[m];
      tmp[m] = base * Complex{0.0, sign * kk[m]};
    }
    to_physical(tmp, scratch, out, h, w);
  };

  Trajectory out;
  out.reserve(frames + 1);
  out.push_back(ic);
  bool have_prev = false;
  long step = 0;
  for (int f = 1; f <= frames; ++f) {
    for (int sub = 0; sub < st.substeps; ++sub) {
      ++step;
      wd = wh;
      mask.apply(std::span<Complex>(wd));
      derivative(wd, k.ky, 1.0, true, vel_u);    // u = d psi / dy
      derivative(wd, k.kx, -1.0, true, vel_v);   // v = -d psi / dx
      derivative(wd, k.kx, 1.0, false, grad_x);
      derivative(wd, k.ky, 1.0, false, grad_y);
      double courant = 0.0;
      for (std::size_t m = 0; m < n; ++m) {
        courant = std::max(courant, std::abs(vel_u[m]) / dx + std::abs(vel_v[m]) / dy);
        adv[m] = -(vel_u[m] * grad_x[m] + vel_v[m] * grad_y[m]);
      }
      check_blowup(vel_u, "ns2d", step);
      check_blowup(vel_v, "ns2d", step);
      if (courant * dt > p.cfl_limit) {
        throw CflViolation("ns2d step " + std::to_string(step) + ": courant number " +
                           fmt_double(courant * dt) + " exceeds " +
                           fmt_double(p.cfl_limit) + "; reduce the time step");
      }
      to_spectral(adv, nl, h, w);
      mask.apply(std::span<Complex>(nl));
      nl[0] = 0.0;
      for (std::size_t m = 0; m < n; ++m) nl[m] += fh[m];
      for (std::size_t m = 0; m < n; ++m) {
        const Complex rhs = have_prev ? 1.5 * nl[m] - 0.5 * nl_prev[m] : nl[m];
        wh[m] = (d_minus[m] * wh[m] + dt * rhs) / d_plus[m];
      }
      std::swap(nl, nl_prev);
      have_prev = true;
    }
    to_physical(wh, scratch, omega, h, w);
    check_blowup(omega, "ns2d", step);
    GridField frame(h, w, 1, ic.lx(), ic.ly());
    frame.set_channel(0, omega);
    out.push_back(std::move(frame));
  }
  return out;
}

// ---------------------------------------------------------------------------
// shallow water

namespace {

struct SwState {
  std::vector<double> h, hu, hv;
};

struct Flux3 {
  double a, b, c;
};

class ShallowWaterRhs {
 public:
  ShallowWaterRhs(int h, int w, double dx, double dy, double g)
      : h_(h), w_(w), dx_(dx), dy_(dy), g_(g),
        fx_(static_cast<std::size_t>(h) * w),
        fy_(fx_.size()) {}

  // Rusanov interface fluxes; x-interface (i, j) sits between cells j and
  // j + 1 of row i, y-interface (i, j) between rows i and i + 1.
  void eval(const SwState& s, SwState& out) {
    for (int i = 0; i < h_; ++i) {
      for (int j = 0; j < w_; ++j) {
        const std::size_t l = idx(i, j);
        fx_[l] = flux_x(s, l, idx(i, (j + 1) % w_));
        fy_[l] = flux_y(s, l, idx((i + 1) % h_, j));
      }
    }
    for (int i = 0; i < h_; ++i) {
      for (int j = 0; j < w_; ++j) {
        const std::size_t c = idx(i, j);
        const Flux3& xr = fx_[c];
        const Flux3& xl = fx_[idx(i, (j + w_ - 1) % w_)];
        const Flux3& yt = fy_[c];
        const Flux3& yb = fy_[idx((i + h_ - 1) % h_, j)];
        out.h[c] = -(xr.a - xl.a) / dx_ - (yt.a - yb.a) / dy_;
        out.hu[c] = -(xr.b - xl.b) / dx_ - (yt.b - yb.b) / dy_;
        out.hv[c] = -(xr.c - xl.c) / dx_ - (yt.c - yb.c) / dy_;
      }
    }
  }

  double max_speed(const SwState& s) const {
    double a = 0.0;
    for (std::size_t c = 0; c < s.h.size(); ++c) {
      const double u = s.hu[c] / s.h[c];
      const double v = s.hv[c] / s.h[c];
      a = std::max(a, std::max(std::abs(u), std::abs(v)) + std::sqrt(g_ * s.h[c]));
    }
    return a;
  }

 private:
  std::size_t idx(int i, int j) const {
    return static_cast<std::size_t>(i) * w_ + j;
  }

  Flux3 flux_x(const SwState& s, std::size_t l, std::size_t r) const {
    const double hl = s.h[l], hr = s.h[r];
    const double ul = s.hu[l] / hl, ur = s.hu[r] / hr;
    const double vl = s.hv[l] / hl, vr = s.hv[r] / hr;
    const double a = std::max(std::abs(ul) + std::sqrt(g_ * hl),
                              std::abs(ur) + std::sqrt(g_ * hr));
    const Flux3 fl{s.hu[l], s.hu[l] * ul + 0.5 * g_ * hl * hl, s.hu[l] * vl};
    const Flux3 fr{s.hu[r], s.hu[r] * ur + 0.5 * g_ * hr * hr, s.hu[r] * vr};
    return {0.5 * (fl.a + fr.a) - 0.5 * a * (hr - hl),
            0.5 * (fl.b + fr.b) - 0.5 * a * (s.hu[r] - s.hu[l]),
            0.5 * (fl.c + fr.c) - 0.5 * a * (s.hv[r] - s.hv[l])};
  }

  Flux3 flux_y(const SwState& s, std::size_t l, std::size_t r) const {
    const double hl = s.h[l], hr = s.h[r];
    const double ul = s.hu[l] / hl, ur = s.hu[r] / hr;
    const double vl = s.hv[l] / hl, vr = s.hv[r] / hr;
    const double a = std::max(std::abs(vl) + std::sqrt(g_ * hl),
                              std::abs(vr) + std::sqrt(g_ * hr));
    const Flux3 fl{s.hv[l], s.hv[l] * ul, s.hv[l] * vl + 0.5 * g_ * hl * hl};
    const Flux3 fr{s.hv[r], s.hv[r] * ur, s.hv[r] * vr + 0.5 * g_ * hr * hr};
    return {0.5 * (fl.a + fr.a) - 0.5 * a * (hr - hl),
            0.5 * (fl.b + fr.b) - 0.5 * a * (s.hu[r] - s.hu[l]),
            0.5 * (fl.c + fr.c) - 0.5 * a * (s.hv[r] - s.hv[l])};
  }

  int h_, w_;
  double dx_, dy_, g_;
  std::vector<Flux3> fx_, fy_;
};

void check_positive(const std::vector<double>& h, long step) {
  for (double v : h) {
    if (!(v > 0.0)) {
      throw PositivityError("shallow water: non-positive height at step " +
                            std::to_string(step));
    }
  }
}

}  // namespace

Trajectory simulate_shallow_water(const ShallowWaterParams& p,
                                  const GridField& state, int frames,
                                  double frame_dt) {
  if (frames < 1) throw InvalidArgument("need at least one frame");
  if (!(frame_dt > 0.0)) throw InvalidArgument("frame_dt must be positive");
  if (!(p.gravity > 0.0) || !(p.cfl > 0.0) || p.cfl > 1.0) {
    throw InvalidArgument("shallow water needs gravity > 0 and 0 < cfl <= 1");
  }
  if (state.channels() != 3) throw InvalidArgument("shallow water state is (h, hu, hv)");
  if (!state.all_finite()) throw InvalidArgument("shallow water state is not finite");

  const int h = state.height();
  const int w = state.width();
  const std::size_t n = state.cell_count();
  const double dx = state.lx() / w;
  const double dy = state.ly() / h;
  ShallowWaterRhs rhs(h, w, dx, dy, p.gravity);

  SwState s{state.channel(0), state.channel(1), state.channel(2)};
  check_positive(s.h, 0);
  SwState k1{std::vector<double>(n), std::vector<double>(n), std::vector<double>(n)};
  SwState stage = k1, k2 = k1;

  const auto frame_of = [&](const SwState& st) {
    GridField f(h, w, 3, state.lx(), state.ly());
    f.set_channel(0, st.h);
    f.set_channel(1, st.hu);
    f.set_channel(2, st.hv);
    return f;
  };

  Trajectory out;
  out.reserve(frames + 1);
  out.push_back(state);
  long step = 0;
  double t = 0.0;
  for (int f = 1; f <= frames; ++f) {
    const double t_frame = f * frame_dt;
    while (t < t_frame) {
      ++step;
      const double speed = rhs.max_speed(s);
      double dt = p.cfl * std::min(dx, dy) / speed;
      bool last = false;
      if (t + dt >= t_frame) {
        dt = t_frame - t;
        last = true;
      }
      // SSP-RK3 (Shu-Osher)
      rhs.eval(s, k1);
      for (std::size_t c = 0; c < n; ++c) {
        stage.h[c] = s.h[c] + dt * k1.h[c];
        stage.hu[c] = s.hu[c] + dt * k1.hu[c];
        stage.hv[c] = s.hv[c] + dt * k1.hv[c];
      }
      check_positive(stage.h, step);
      rhs.eval(stage, k2);
      for (std::size_t c = 0; c < n; ++c) {
        stage.h[c] = 0.75 * s.h[c] + 0.25 * (stage.h[c] + dt * k2.h[c]);
        stage.hu[c] = 0.75 * s.hu[c] + 0.25 * (stage.hu[c] + dt * k2.hu[c]);
        stage.hv[c] = 0.75 * s.hv[c] + 0.25 * (stage.hv[c] + dt * k2.hv[c]);
      }
      check_positive(stage.h, step);
      rhs.eval(stage, k2);
      for (std::size_t c = 0; c < n; ++c) {
        s.h[c] = s.h[c] / 3.0 + 2.0 / 3.0 * (stage.h[c] + dt * k2.h[c]);
        s.hu[c] = s.hu[c] / 3.0 + 2.0 / 3.0 * (stage.hu[c] + dt * k2.hu[c]);
        s.hv[c] = s.hv[c] / 3.0 + 2.0 / 3.0 * (stage.hv[c] + dt * k2.hv[c]);
      }
      check_positive(s.h, step);
      check_blowup(s.h, "shallow water", step);
      check_blowup(s.hu, "shallow water", step);
      check_blowup(s.hv, "shallow water", step);
      t = last ? t_frame : t + dt;
    }
    out.push_back(frame_of(s));
  }
  return out;
}

Trajectory simulate_rdb(const RdbParams& p, const GridField& height_ic,
                        int frames, double frame_dt) {
  if (!(p.h_inner > p.h_outer)) {
    throw InvalidArgument("rdb inner height " + fmt_double(p.h_inner) +
                          " must exceed the outer height " + fmt_double(p.h_outer));
  }
  if (height_ic.channels() != 1) throw InvalidArgument("rdb initial condition is the height channel");
  GridField state(height_ic.height(), height_ic.width(), 3, height_ic.lx(), height_ic.ly());
  state.set_channel(0, height_ic.channel(0));
  const auto full = simulate_shallow_water({p.gravity, p.cfl}, state, frames, frame_dt);
  Trajectory out;
  out.reserve(full.size());
  for (const auto& f : full) {
    GridField hf(f.height(), f.width(), 1, f.lx(), f.ly());
    hf.set_channel(0, f.channel(0));
    out.push_back(std::move(hf));
  }
  return out;
}

// ---------------------------------------------------------------------------
// initial conditions and regimes

GridField sample_initial_condition(const FamilySpec& spec, std::uint64_t seed,
                                   double lambda) {
  Rng rng(mix_seed(seed, family_tag(spec.family)));
  const int h = spec.height;
  const int w = spec.width;
  switch (spec.family) {
    case FamilyId::diffreact: {
      const double amp = spec.coefficient("ic_amplitude", 0.5);
      const double len = spec.coefficient("ic_length", 0.05 * spec.lx);
      GridField ic(h, w, 2, spec.lx, spec.ly);
      for (int c = 0; c < 2; ++c) {
        auto plane = smoothed_noise(rng, h, w, spec.lx, spec.ly, len);
        for (double& v : plane) v *= amp;
        ic.set_channel(c, plane);
      }
      return ic;
    }
    case FamilyId::ns2d: {
      const double amp = spec.coefficient("ic_amplitude", 1.0);
      const int kmax = static_cast<int>(spec.coefficient("ic_kmax", 8.0));
      const std::size_t n = static_cast<std::size_t>(h) * w;
      std::vector<double> noise(n);
      for (auto& v : noise) v = rng.normal();
      std::vector<Complex> sp(n), scratch(n);
      to_spectral(noise, sp, h, w);
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const double ki = wavenumber_index(i, h);
          const double kj = wavenumber_index(j, w);
          const double kr = std::sqrt(ki * ki + kj * kj);
          const std::size_t m = static_cast<std::size_t>(i) * w + j;
          sp[m] = (kr >= 1.0 && kr <= kmax) ? sp[m] / kr : Complex{};
        }
      }
      std::vector<double> omega(n);
      to_physical(sp, scratch, omega, h, w);
      double ss = 0.0;
      for (double v : omega) ss += v * v;
      const double rms = std::sqrt(ss / static_cast<double>(n));
      for (double& v : omega) v *= amp / rms;
      double mean = 0.0;
      for (double v : omega) mean += v;
      mean /= static_cast<double>(n);
      for (double& v : omega) v -= mean;
      GridField ic(h, w, 1, spec.lx, spec.ly);
      ic.set_channel(0, omega);
      return ic;
    }
    case FamilyId::rdb: {
      const double outer = spec.coefficient("h_outer", 1.0);
      const double rmin = spec.coefficient("radius_min", 0.3);
      const double rmax = spec.coefficient("radius_max", 0.7);
      const double dx = spec.lx / w;
      const double dy = spec.ly / h;
      const double width = spec.coefficient("ic_length", std::min(dx, dy));
      const double radius = rng.uniform(rmin, rmax);
      GridField ic(h, w, 1, spec.lx, spec.ly);
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const double x = -0.5 * spec.lx + (j + 0.5) * dx;
          const double y = -0.5 * spec.ly + (i + 0.5) * dy;
          const double r = std::hypot(x, y);
          ic.at(i, j, 0) =
              outer + (lambda - outer) * 0.5 * (1.0 - std::tanh((r - radius) / width));
        }
      }
      return ic;
    }
  }
  throw InvalidArgument("unknown family");
}

Trajectory simulate_from(const FamilySpec& spec, double lambda, const GridField& ic) {
  const TimeStepping st{spec.frame_dt, spec.substeps};
  switch (spec.family) {
    case FamilyId::diffreact: {
      DiffReactParams p;
      p.du = spec.coefficient("D_u", 1e-3);
      p.dv = spec.coefficient("D_v", 5e-3);
      p.k = spec.coefficient("k", 5e-3);
      if (spec.axis == "D_u") p.du = lambda;
      else if (spec.axis == "D_v") p.dv = lambda;
      else p.k = lambda;
      return simulate_diffreact(p, ic, spec.frames, st);
    }
    case FamilyId::ns2d: {
      Ns2dParams p;
      p.nu = lambda;
      p.forcing_amplitude = spec.coefficient("forcing", 0.1);
      return simulate_ns2d(p, ic, spec.frames, st);
    }
    case FamilyId::rdb: {
      RdbParams p;
      p.h_inner = lambda;
      p.h_outer = spec.coefficient("h_outer", 1.0);
      p.gravity = spec.coefficient("gravity", 1.0);
      p.cfl = spec.cfl;
      return simulate_rdb(p, ic, spec.frames, spec.frame_dt);
    }
  }
  throw InvalidArgument("unknown family");
}

Trajectory simulate_regime(const FamilySpec& spec, double lambda, std::uint64_t seed) {
  return simulate_from(spec, lambda, sample_initial_condition(spec, seed, lambda));
}

std::uint64_t split_seed(const FamilySpec& spec, Split split, int index) {
  std::uint64_t offset = 0;
  switch (split) {
    case Split::train: offset = 0; break;
    case Split::val: offset = 100000; break;
    case Split::eval: offset = 200000; break;
  }
  return spec.seed_bank + offset + static_cast<std::uint64_t>(index);
}

int SampleCounts::for_split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::eval: return eval;
  }
  return 0;
}

std::map<std::string, TrajectoryDataset> build_family(const FamilySpec& spec,
                                                      int samples_per_regime,
                                                      int jobs) {
  return build_family(spec, SampleCounts{samples_per_regime, samples_per_regime,
                                         samples_per_regime},
                      jobs);
}

std::map<std::string, TrajectoryDataset> build_family(const FamilySpec& spec,
                                                      const SampleCounts& counts,
                                                      int jobs) {
  spec.validate();
  struct Work {
    std::size_t regime;
    std::size_t sample;
  };
  std::vector<TrajectoryDataset> sets;
  std::vector<Work> work;
  for (std::size_t r = 0; r < spec.regimes.size(); ++r) {
    const auto& def = spec.regimes[r];
    const int count = counts.for_split(def.split);
    if (count < 1) throw InvalidArgument("need at least one sample per regime");
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < count; ++i) seeds.push_back(split_seed(spec, def.split, i));
    TrajectoryDataset ds;
    ds.family = spec.family;
    ds.task = make_task(def, spec, seeds);
    ds.channel_names = spec.channel_names();
    ds.samples.resize(seeds.size());
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      ds.samples[i].seed = seeds[i];
      work.push_back({r, i});
    }
    sets.push_back(std::move(ds));
  }
  parallel_for(work.size(), jobs, [&](std::size_t k) {
    auto& ds = sets[work[k].regime];
    auto& sample = ds.samples[work[k].sample];
    try {
      sample.frames = simulate_regime(spec, ds.task.lambda, sample.seed);
    } catch (const SimulationDiverged& e) {
      throw SimulationDiverged("regime " + ds.task.name + ", seed " +
                                   std::to_string(sample.seed) + ": " + e.what(),
                               e.step());
    } catch (const Error& e) {
      throw Error("regime " + ds.task.name + ", seed " +
                  std::to_string(sample.seed) + ": " + e.what());
    }
  });
  std::map<std::string, TrajectoryDataset> out;
  for (auto& ds : sets) out.emplace(ds.task.name, std::move(ds));
  return out;
}

// ---------------------------------------------------------------------------
// on-disk format

void write_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
  if (traj.empty()) throw InvalidArgument("cannot write an empty trajectory");
  const auto& f0 = traj.front();
  ByteWriter wr;
  wr.put_bytes(std::string_view(kTrajMagic, sizeof kTrajMagic));
  wr.put_u32(kTrajVersion);
  wr.put_u32(static_cast<std::uint32_t>(traj.size()));
  wr.put_u32(static_cast<std::uint32_t>(f0.height()));
  wr.put_u32(static_cast<std::uint32_t>(f0.width()));
  wr.put_u32(static_cast<std::uint32_t>(f0.channels()));
  wr.put_f64(f0.lx());
  wr.put_f64(f0.ly());
  for (const auto& f : traj) {
    if (!f.same_shape(f0)) throw InvalidArgument("trajectory frames differ in shape");
    for (double v : f.values()) wr.put_f64(v);
  }
  write_file_atomic(path, wr.bytes());
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  ByteReader<CorruptCheckpoint> rd(bytes);
  if (rd.get_bytes(sizeof kTrajMagic) != std::string_view(kTrajMagic, sizeof kTrajMagic)) {
    throw CorruptCheckpoint(path.string() + ": not a trajectory file");
  }
  const auto version = rd.get_u32();
  if (version != kTrajVersion) {
    throw VersionMismatch(path.string() + ": unsupported trajectory version " +
                          std::to_string(version));
  }
  const auto nf = rd.get_u32();
  const auto h = static_cast<int>(rd.get_u32());
  const auto w = static_cast<int>(rd.get_u32());
  const auto c = static_cast<int>(rd.get_u32());
  const double lx = rd.get_f64();
  const double ly = rd.get_f64();
  const std::size_t per = static_cast<std::size_t>(h) * w * c;
  if (rd.remaining() != per * nf * 8) {
    throw CorruptCheckpoint(path.string() + ": payload size does not match header");
  }
  Trajectory traj;
  traj.reserve(nf);
  for (std::uint32_t t = 0; t < nf; ++t) {
    GridField f(h, w, c, lx, ly);
    for (double& v : f.values()) v = rd.get_f64();
    traj.push_back(std::move(f));
  }
  return traj;
}

void save_dataset(const TrajectoryDataset& ds, const FamilySpec& spec,
                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["format"] = "ccm-dataset-v1";
  m["family"] = to_string(ds.family);
  m["axis"] = spec.axis;
  m["regime"] = ds.task.name;
  m["lambda"] = ds.task.lambda;
  m["s"] = ds.task.s;
  m["role"] = to_string(ds.task.role);
  m["split"] = to_string(ds.task.split);
  m["group"] = ds.task.group;
  m["seeds"] = ds.task.seeds;
  m["grid"] = {spec.height, spec.width};
  m["domain"] = {spec.lx, spec.ly};
  m["frames"] = spec.frames;
  m["frame_dt"] = spec.frame_dt;
  m["channels"] = ds.channel_names;
  nlohmann::json files = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    const std::string name = "sample_" + std::to_string(s.seed) + ".traj";
    write_trajectory(s.frames, dir / name);
    files.push_back(name);
  }
  m["files"] = files;
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

TrajectoryDataset load_dataset(const std::filesystem::path& dir) {
  const auto text = read_file_bytes(dir / "manifest.json");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint((dir / "manifest.json").string() + ": " + e.what());
  }
  TrajectoryDataset ds;
  ds.family = family_from_string(m.at("family").get<std::string>());
  ds.task.name = m.at("regime").get<std::string>();
  ds.task.lambda = m.at("lambda").get<double>();
  ds.task.s = m.at("s").get<double>();
  ds.task.role = role_from_string(m.at("role").get<std::string>());
  ds.task.split = split_from_string(m.at("split").get<std::string>());
  ds.task.group = m.at("group").get<std::string>();
  ds.task.seeds = m.at("seeds").get<std::vector<std::uint64_t>>();
  ds.channel_names = m.at("channels").get<std::vector<std::string>>();
  const auto files = m.at("files").get<std::vector<std::string>>();
  if (files.size() != ds.task.seeds.size()) {
    throw CorruptCheckpoint(dir.string() + ": manifest seeds and files disagree");
  }
  for (std::size_t i = 0; i < files.size(); ++i) {
    ds.samples.push_back({ds.task.seeds[i], read_trajectory(dir / files[i])});
  }
  return ds;
}

}  // namespace ccm
