#include "ccm/neural_operator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "ccm/error.hpp"

namespace ccm {

namespace {

std::string layer_name(const char* kind, int l, const char* part) {
  return std::string(kind) + "." + std::to_string(l) + "." + part;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)) +
         x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

// Flat spectral indices of the retained modes.
std::vector<std::size_t> mode_indices(int h, int w, int m) {
  std::vector<int> rows;
  for (int i = 0; i < m; ++i) rows.push_back(i);
  for (int i = h - m; i < h; ++i) {
    if (i >= m) rows.push_back(i);
  }
  std::vector<std::size_t> idx;
  for (int i : rows) {
    for (int j = 0; j < m; ++j) idx.push_back(static_cast<std::size_t>(i) * w + j);
  }
  return idx;
}

int mode_count(const OperatorConfig& c) {
  return static_cast<int>(mode_indices(c.grid_h, c.grid_w, c.modes).size());
}

// Planar (channel-major) copies of interleaved GridField data.
std::vector<double> to_planar(const GridField& f) {
  const std::size_t n = f.cell_count();
  const int c = f.channels();
  std::vector<double> out(n * c);
  const auto v = f.values();
  for (std::size_t k = 0; k < n; ++k) {
    for (int ch = 0; ch < c; ++ch) out[ch * n + k] = v[k * c + ch];
  }
  return out;
}

void from_planar(const std::vector<double>& planar, GridField& f) {
  const std::size_t n = f.cell_count();
  const int c = f.channels();
  auto v = f.values();
  for (std::size_t k = 0; k < n; ++k) {
    for (int ch = 0; ch < c; ++ch) v[k * c + ch] = planar[ch * n + k];
  }
}

struct StepCache {
  std::vector<double> z;                  // C x N normalized input
  std::vector<std::vector<double>> a;     // L + 1 activations, width x N
  std::vector<std::vector<double>> pre;   // L pre-activations, width x N
  std::vector<std::vector<Complex>> x;    // L retained spectra, width x Ms
  std::vector<double> out;                // C x N projection output
};

// Holds raw views of one model's tensors plus scratch space, so repeated
// steps do not reallocate.
class Engine {
 public:
  explicit Engine(const OperatorModel& model)
      : model_(model),
        c_(model.config.channels),
        wd_(model.config.width),
        l_(model.config.layers),
        h_(model.config.grid_h),
        w_(model.config.grid_w),
        n_(static_cast<std::size_t>(h_) * w_),
        modes_(mode_indices(h_, w_, model.config.modes)),
        ms_(modes_.size()),
        buf_(n_) {
    check_model(model);
    const auto& ws = model.weights;
    lift_w_ = ws.at("lift.weight").data.data();
    lift_b_ = ws.at("lift.bias").data.data();
    proj_w_ = ws.at("project.weight").data.data();
    proj_b_ = ws.at("project.bias").data.data();
    for (int l = 0; l < l_; ++l) {
      spec_re_.push_back(ws.at(layer_name("spectral", l, "real")).data.data());
      spec_im_.push_back(ws.at(layer_name("spectral", l, "imag")).data.data());
      byp_w_.push_back(ws.at(layer_name("bypass", l, "weight")).data.data());
      byp_b_.push_back(ws.at(layer_name("bypass", l, "bias")).data.data());
    }
  }

  std::size_t cells() const { return n_; }
  int channels() const { return c_; }

  void check_input(const GridField& u) const {
    if (u.height() != h_ || u.width() != w_ || u.channels() != c_) {
      throw InvalidArgument("operator expects a " + std::to_string(h_) + "x" +
                            std::to_string(w_) + "x" + std::to_string(c_) +
                            " field, got " + std::to_string(u.height()) + "x" +
                            std::to_string(u.width()) + "x" +
                            std::to_string(u.channels()));
    }
  }

  // Computes the projection output N(z) for planar input u into cache.out.
  void forward(const std::vector<double>& u, StepCache& cache) {
    const auto& nz = model_.normalizer;
    cache.z.resize(c_ * n_);
    for (int c = 0; c < c_; ++c) {
      const double mu = nz.mean[c];
      const double inv = 1.0 / nz.std[c];
      for (std::size_t k = 0; k < n_; ++k) cache.z[c * n_ + k] = (u[c * n_ + k] - mu) * inv;
    }
    cache.a.assign(l_ + 1, {});
    cache.pre.assign(l_, {});
    cache.x.assign(l_, {});

    auto& a0 = cache.a[0];
    a0.assign(wd_ * n_, 0.0);
    for (int o = 0; o < wd_; ++o) {
      double* row = a0.data() + o * n_;
      const double b = lift_b_[o];
      for (std::size_t k = 0; k < n_; ++k) row[k] = b;
      for (int c = 0; c < c_; ++c) {
        const double wgt = lift_w_[o * c_ + c];
        const double* zc = cache.z.data() + c * n_;
        for (std::size_t k = 0; k < n_; ++k) row[k] += wgt * zc[k];
      }
    }

    std::vector<Complex> acc(ms_);
    const double inv_n = 1.0 / static_cast<double>(n_);
    for (int l = 0; l < l_; ++l) {
      const auto& a = cache.a[l];
      auto& x = cache.x[l];
      x.resize(wd_ * ms_);
      for (int i = 0; i < wd_; ++i) {
        for (std::size_t k = 0; k < n_; ++k) buf_[k] = Complex{a[i * n_ + k], 0.0};
        fft2_inplace(buf_, h_, w_, false);
        for (std::size_t k = 0; k < ms_; ++k) x[i * ms_ + k] = buf_[modes_[k]];
      }
      auto& pre = cache.pre[l];
      pre.assign(wd_ * n_, 0.0);
      const double* re = spec_re_[l];
      const double* im = spec_im_[l];
      const double* bw = byp_w_[l];
      const double* bb = byp_b_[l];
      for (int o = 0; o < wd_; ++o) {
        std::fill(acc.begin(), acc.end(), Complex{});
        for (int i = 0; i < wd_; ++i) {
          const std::size_t base = (static_cast<std::size_t>(o) * wd_ + i) * ms_;
          const Complex* xi = x.data() + i * ms_;
          for (std::size_t k = 0; k < ms_; ++k) {
            acc[k] += Complex{re[base + k], im[base + k]} * xi[k];
          }
        }
        std::fill(buf_.begin(), buf_.end(), Complex{});
        for (std::size_t k = 0; k < ms_; ++k) buf_[modes_[k]] = acc[k];
        fft2_inplace(buf_, h_, w_, true);
        double* row = pre.data() + o * n_;
        const double b = bb[o];
        for (std::size_t k = 0; k < n_; ++k) row[k] = buf_[k].real() * inv_n + b;
        for (int i = 0; i < wd_; ++i) {
          const double wgt = bw[o * wd_ + i];
          const double* ai = a.data() + i * n_;
          for (std::size_t k = 0; k < n_; ++k) row[k] += wgt * ai[k];
        }
      }
      auto& next = cache.a[l + 1];
      next.resize(wd_ * n_);
      const bool last = l == l_ - 1;
      for (std::size_t k = 0; k < next.size(); ++k) {
        next[k] = last ? pre[k] : gelu(pre[k]);
        if (!std::isfinite(next[k])) {
          throw NonFiniteActivation("non-finite activation in layer " +
                                    std::to_string(l) + " (spectral." +
                                    std::to_string(l) + ", bypass." + std::to_string(l) + ")");
        }
      }
    }

    const auto& al = cache.a[l_];
    cache.out.assign(c_ * n_, 0.0);
    for (int c = 0; c < c_; ++c) {
      double* row = cache.out.data() + c * n_;
      const double b = proj_b_[c];
      for (std::size_t k = 0; k < n_; ++k) row[k] = b;
      for (int o = 0; o < wd_; ++o) {
        const double wgt = proj_w_[c * wd_ + o];
        const double* ao = al.data() + o * n_;
        for (std::size_t k = 0; k < n_; ++k) row[k] += wgt * ao[k];
      }
      for (std::size_t k = 0; k < n_; ++k) {
        if (!std::isfinite(row[k])) {
          throw NonFiniteActivation("non-finite activation in project");
        }
      }
    }
  }

  // Increment step_scale * N(z), planar.
  std::vector<double> increment(const StepCache& cache) const {
    std::vector<double> inc(c_ * n_);
    for (int c = 0; c < c_; ++c) {
      const double s = model_.normalizer.step_scale[c];
      for (std::size_t k = 0; k < n_; ++k) inc[c * n_ + k] = s * cache.out[c * n_ + k];
    }
    return inc;
  }

  // Given dL/du_next, accumulates parameter gradients into `grad` and returns
  // dL/du (through both the skip path and the network).
  std::vector<double> backward(const StepCache& cache, const std::vector<double>& g_next,
                               WeightSet& grad) {
    const auto& nz = model_.normalizer;
    double* d_lift_w = grad.at("lift.weight").data.data();
    double* d_lift_b = grad.at("lift.bias").data.data();
    double* d_proj_w = grad.at("project.weight").data.data();
    double* d_proj_b = grad.at("project.bias").data.data();

    std::vector<double> g_out(c_ * n_);
    for (int c = 0; c < c_; ++c) {
      const double s = nz.step_scale[c];
      for (std::size_t k = 0; k < n_; ++k) g_out[c * n_ + k] = g_next[c * n_ + k] * s;
    }

    const auto& al = cache.a[l_];
    std::vector<double> g_a(wd_ * n_, 0.0);
    for (int c = 0; c < c_; ++c) {
      const double* gc = g_out.data() + c * n_;
      double sb = 0.0;
      for (std::size_t k = 0; k < n_; ++k) sb += gc[k];
      d_proj_b[c] += sb;
      for (int o = 0; o < wd_; ++o) {
        const double* ao = al.data() + o * n_;
        double s = 0.0;
        for (std::size_t k = 0; k < n_; ++k) s += gc[k] * ao[k];
        d_proj_w[c * wd_ + o] += s;
        const double wgt = proj_w_[c * wd_ + o];
        double* ga = g_a.data() + o * n_;
        for (std::size_t k = 0; k < n_; ++k) ga[k] += wgt * gc[k];
      }
    }

    const double inv_n = 1.0 / static_cast<double>(n_);
    std::vector<double> g_pre(wd_ * n_);
    std::vector<double> g_prev(wd_ * n_);
    std::vector<Complex> gspec(wd_ * ms_);
    std::vector<Complex> dx(ms_);
    for (int l = l_ - 1; l >= 0; --l) {
      const auto& pre = cache.pre[l];
      const auto& a = cache.a[l];
      const auto& x = cache.x[l];
      const bool last = l == l_ - 1;
      for (std::size_t k = 0; k < g_pre.size(); ++k) {
        g_pre[k] = last ? g_a[k] : g_a[k] * gelu_grad(pre[k]);
      }

      double* d_bw = grad.at(layer_name("bypass", l, "weight")).data.data();
      double* d_bb = grad.at(layer_name("bypass", l, "bias")).data.data();
      double* d_re = grad.at(layer_name("spectral", l, "real")).data.data();
      double* d_im = grad.at(layer_name("spectral", l, "imag")).data.data();
      const double* bw = byp_w_[l];
      const double* re = spec_re_[l];
      const double* im = spec_im_[l];

      std::fill(g_prev.begin(), g_prev.end(), 0.0);
      for (int o = 0; o < wd_; ++o) {
        const double* go = g_pre.data() + o * n_;
        double sb = 0.0;
        for (std::size_t k = 0; k < n_; ++k) sb += go[k];
        d_bb[o] += sb;
        for (int i = 0; i < wd_; ++i) {
          const double* ai = a.data() + i * n_;
          double s = 0.0;
          for (std::size_t k = 0; k < n_; ++k) s += go[k] * ai[k];
          d_bw[o * wd_ + i] += s;
          const double wgt = bw[o * wd_ + i];
          double* gp = g_prev.data() + i * n_;
          for (std::size_t k = 0; k < n_; ++k) gp[k] += wgt * go[k];
        }
        for (std::size_t k = 0; k < n_; ++k) buf_[k] = Complex{go[k], 0.0};
        fft2_inplace(buf_, h_, w_, false);
        for (std::size_t k = 0; k < ms_; ++k) gspec[o * ms_ + k] = buf_[modes_[k]] * inv_n;
      }
      for (int o = 0; o < wd_; ++o) {
        for (int i = 0; i < wd_; ++i) {
          const std::size_t base = (static_cast<std::size_t>(o) * wd_ + i) * ms_;
          for (std::size_t k = 0; k < ms_; ++k) {
            const Complex d = gspec[o * ms_ + k] * std::conj(x[i * ms_ + k]);
            d_re[base + k] += d.real();
            d_im[base + k] += d.imag();
          }
        }
      }
      for (int i = 0; i < wd_; ++i) {
        std::fill(dx.begin(), dx.end(), Complex{});
        for (int o = 0; o < wd_; ++o) {
          const std::size_t base = (static_cast<std::size_t>(o) * wd_ + i) * ms_;
          for (std::size_t k = 0; k < ms_; ++k) {
            dx[k] += std::conj(Complex{re[base + k], im[base + k]}) * gspec[o * ms_ + k];
          }
        }
        std::fill(buf_.begin(), buf_.end(), Complex{});
        for (std::size_t k = 0; k < ms_; ++k) buf_[modes_[k]] = dx[k];
        fft2_inplace(buf_, h_, w_, true);
        double* gp = g_prev.data() + i * n_;
        for (std::size_t k = 0; k < n_; ++k) gp[k] += buf_[k].real();
      }
      std::swap(g_a, g_prev);
    }

    std::vector<double> g_u(g_next);
    for (int c = 0; c < c_; ++c) {
      const double inv_std = 1.0 / nz.std[c];
      const double* zc = cache.z.data() + c * n_;
      double* gu = g_u.data() + c * n_;
      for (int o = 0; o < wd_; ++o) {
        const double* ga = g_a.data() + o * n_;
        double s = 0.0;
        for (std::size_t k = 0; k < n_; ++k) s += ga[k] * zc[k];
        d_lift_w[o * c_ + c] += s;
        const double wgt = lift_w_[o * c_ + c] * inv_std;
        for (std::size_t k = 0; k < n_; ++k) gu[k] += wgt * ga[k];
      }
    }
    for (int o = 0; o < wd_; ++o) {
      const double* ga = g_a.data() + o * n_;
      double s = 0.0;
      for (std::size_t k = 0; k < n_; ++k) s += ga[k];
      d_lift_b[o] += s;
    }
    return g_u;
  }

 private:
  const OperatorModel& model_;
  int c_, wd_, l_, h_, w_;
  std::size_t n_;
  std::vector<std::size_t> modes_;
  std::size_t ms_;
  std::vector<Complex> buf_;
  const double* lift_w_ = nullptr;
  const double* lift_b_ = nullptr;
  const double* proj_w_ = nullptr;
  const double* proj_b_ = nullptr;
  std::vector<const double*> spec_re_, spec_im_, byp_w_, byp_b_;
};

double frame_norm(const GridField& f) {
  double s = 0.0;
  for (double v : f.values()) s += v * v;
  return std::sqrt(s);
}

// Returns the summed squared scaled error of one window and, when grad is
// non-null, accumulates d(sum * weight)/d(theta) into it.
double window_loss(Engine& eng, const OperatorModel& model, const Transition& tr,
                   double weight, WeightSet* grad) {
  const std::size_t n = eng.cells();
  const int c_count = eng.channels();
  const std::size_t steps = tr.targets.size();
  std::vector<StepCache> caches(steps);
  std::vector<std::vector<double>> g_step(steps);
  std::vector<double> u = to_planar(tr.input);
  double total = 0.0;
  for (std::size_t j = 0; j < steps; ++j) {
    eng.forward(u, caches[j]);
    const auto inc = eng.increment(caches[j]);
    const auto target = to_planar(tr.targets[j]);
    g_step[j].resize(c_count * n);
    for (int c = 0; c < c_count; ++c) {
      const double s = model.normalizer.step_scale[c];
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = c * n + k;
        u[idx] += inc[idx];
        const double e = (u[idx] - target[idx]) / s;
        total += e * e;
        g_step[j][idx] = 2.0 * e / s * weight;
      }
    }
    if (grad == nullptr && j + 1 < steps) caches[j] = StepCache{};
  }
  if (grad != nullptr) {
    std::vector<double> g = g_step[steps - 1];
    for (std::size_t j = steps; j-- > 0;) {
      auto g_in = eng.backward(caches[j], g, *grad);
      if (j == 0) break;
      for (std::size_t k = 0; k < g_in.size(); ++k) g_in[k] += g_step[j - 1][k];
      g = std::move(g_in);
    }
  }
  return total;
}

double batch_denominator(const OperatorModel& model, const std::vector<Transition>& batch) {
  if (batch.empty()) throw InvalidArgument("loss needs a non-empty batch");
  double count = 0.0;
  const auto& c = model.config;
  for (const auto& tr : batch) {
    if (tr.targets.empty()) throw InvalidArgument("transition without targets");
    count += static_cast<double>(tr.targets.size()) * c.grid_h * c.grid_w * c.channels;
  }
  return count;
}

double lr_at(const TrainConfig& tc, int step) {
  if (tc.schedule == "cosine") {
    const double frac = static_cast<double>(step - 1) / std::max(1, tc.steps);
    return tc.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  }
  return tc.lr;
}

TrainResult run_training(OperatorModel model, const TrainConfig& tc,
                         const std::vector<const TrajectoryDataset*>& data,
                         bool track_best) {
  tc.validate();
  if (data.empty()) throw InvalidArgument("training needs at least one dataset");
  TrainResult result;
  Rng batch_rng(mix_seed(tc.seed, 0xba7c4));
  std::vector<Transition> monitor;
  double best = std::numeric_limits<double>::infinity();
  WeightSet best_weights = model.weights;
  if (track_best) {
    Rng monitor_rng(mix_seed(tc.seed, 0x3017));
    monitor = sample_windows(data, tc.monitor_batch, tc.unroll, monitor_rng);
    best = loss_only(model, monitor);
  }
  AdamState adam{zeros_like(model.weights), zeros_like(model.weights), 0};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int step = 1; step <= tc.steps; ++step) {
    const double lr = lr_at(tc, step);
    const auto batch = sample_windows(data, tc.batch, tc.unroll, batch_rng);
    auto lg = loss_and_grad(model, batch);
    if (!std::isfinite(lg.loss) || !all_finite(lg.grad)) {
      throw TrainingDiverged("non-finite training loss at step " + std::to_string(step),
                             step);
    }
    adam_update(model.weights, lg.grad, adam, {lr, tc.beta1, tc.beta2, tc.eps});
    LogRow row{step, lg.loss, lr, nan};
    bool emit = step == 1 || step == tc.steps || step % tc.log_every == 0;
    if (track_best && (step % tc.monitor_every == 0 || step == tc.steps)) {
      const double ml = loss_only(model, monitor);
      row.monitor_loss = ml;
      emit = true;
      if (ml < best) {
        best = ml;
        best_weights = model.weights;
        result.best_step = step;
      }
    }
    if (emit) result.log.push_back(row);
  }
  if (track_best) {
    model.weights = std::move(best_weights);
    result.best_monitor_loss = best;
  } else {
    result.best_step = tc.steps;
  }
  result.model = std::move(model);
  return result;
}

}  // namespace

void OperatorConfig::validate() const {
  if (channels < 1 || width < 1 || layers < 1 || modes < 1) {
    throw InvalidArgument("operator channels, width, layers and modes must be >= 1");
  }
  if (!is_power_of_two(grid_h) || !is_power_of_two(grid_w) || grid_h < 4 || grid_w < 4) {
    throw InvalidArgument("operator grid must be powers of two >= 4");
  }
  if (2 * modes > grid_h || 2 * modes > grid_w) {
    throw InvalidArgument("retained modes " + std::to_string(modes) +
                          " exceed the grid Nyquist limit");
  }
}

void TrainConfig::validate() const {
  if (steps < 0 || batch < 1) throw InvalidArgument("train steps >= 0 and batch >= 1 required");
  if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (unroll < 1 || unroll > 4) throw InvalidArgument("unroll must be in 1..4");
  if (schedule != "constant" && schedule != "cosine") {
    throw InvalidArgument("unknown lr schedule '" + schedule + "'");
  }
  if (log_every < 1 || monitor_every < 1 || monitor_batch < 1) {
    throw InvalidArgument("log/monitor cadence must be >= 1");
  }
}

Normalizer identity_normalizer(int channels) {
  return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0),
          std::vector<double>(channels, 1.0)};
}

Normalizer fit_normalizer(const std::vector<const TrajectoryDataset*>& data) {
  if (data.empty()) throw InvalidArgument("normalizer needs data");
  int channels = -1;
  std::vector<double> sum, sum_sq, inc_sq;
  double cells = 0.0, inc_cells = 0.0;
  for (const auto* ds : data) {
    for (const auto& sample : ds->samples) {
      for (std::size_t t = 0; t < sample.frames.size(); ++t) {
        const auto& f = sample.frames[t];
        if (channels < 0) {
          channels = f.channels();
          sum.assign(channels, 0.0);
          sum_sq.assign(channels, 0.0);
          inc_sq.assign(channels, 0.0);
        }
        if (f.channels() != channels) throw InvalidArgument("datasets disagree on channels");
        const auto v = f.values();
        for (std::size_t k = 0; k < v.size(); ++k) {
          sum[k % channels] += v[k];
          sum_sq[k % channels] += v[k] * v[k];
        }
        cells += static_cast<double>(f.cell_count());
        if (t > 0) {
          const auto p = sample.frames[t - 1].values();
          for (std::size_t k = 0; k < v.size(); ++k) {
            const double d = v[k] - p[k];
            inc_sq[k % channels] += d * d;
          }
          inc_cells += static_cast<double>(f.cell_count());
        }
      }
    }
  }
  if (channels < 0 || inc_cells == 0.0) {
    throw DegenerateInput("normalizer needs trajectories with at least two frames");
  }
  Normalizer nz;
  for (int c = 0; c < channels; ++c) {
    const double mean = sum[c] / cells;
    const double var = std::max(0.0, sum_sq[c] / cells - mean * mean);
    const double step = std::sqrt(inc_sq[c] / inc_cells);
    if (!(var > 0.0) || !(step > 0.0)) {
      throw DegenerateInput("channel " + std::to_string(c) + " has no variation to normalize");
    }
    nz.mean.push_back(mean);
    nz.std.push_back(std::sqrt(var));
    nz.step_scale.push_back(step);
  }
  return nz;
}

Schema operator_schema(const OperatorConfig& config) {
  config.validate();
  const int ms = mode_count(config);
  const int w = config.width;
  Schema s;
  s.push_back({"lift.weight", {w, config.channels}});
  s.push_back({"lift.bias", {w}});
  for (int l = 0; l < config.layers; ++l) {
    s.push_back({layer_name("spectral", l, "real"), {w, w, ms}});
    s.push_back({layer_name("spectral", l, "imag"), {w, w, ms}});
    s.push_back({layer_name("bypass", l, "weight"), {w, w}});
    s.push_back({layer_name("bypass", l, "bias"), {w}});
  }
  s.push_back({"project.weight", {config.channels, w}});
  s.push_back({"project.bias", {config.channels}});
  std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return s;
}

WeightSet init_weights(const OperatorConfig& config, std::uint64_t seed) {
  const auto schema = operator_schema(config);
  Rng rng(mix_seed(seed, 0x1417));
  WeightSet ws;
  for (const auto& e : schema) {
    Tensor t(e.shape);
    double bound = 0.0;
    if (e.name.ends_with(".bias")) {
      bound = 0.0;
    } else if (e.name.starts_with("spectral.")) {
      bound = 1.0 / config.width;
    } else {
      bound = 1.0 / std::sqrt(static_cast<double>(e.shape[1]));
    }
    for (double& v : t.data) v = bound == 0.0 ? 0.0 : rng.uniform(-bound, bound);
    ws.emplace(e.name, std::move(t));
  }
  return ws;
}

void check_model(const OperatorModel& model) {
  const auto& c = model.config;
  c.validate();
  const auto& nz = model.normalizer;
  const auto ch = static_cast<std::size_t>(c.channels);
  if (nz.mean.size() != ch || nz.std.size() != ch || nz.step_scale.size() != ch) {
    throw SchemaMismatch("normalizer channel count does not match the operator");
  }
  for (std::size_t k = 0; k < ch; ++k) {
    if (!(nz.std[k] > 0.0) || !(nz.step_scale[k] > 0.0) || !std::isfinite(nz.mean[k])) {
      throw InvalidArgument("normalizer scales must be positive and finite");
    }
  }
  if (schema_of(model.weights) != operator_schema(c)) {
    throw SchemaMismatch("weights do not match the operator configuration (schema " +
                         schema_hash(model.weights) + " vs " +
                         schema_hash(operator_schema(c)) + ")");
  }
}

GridField forward_increment(const OperatorModel& model, const GridField& u) {
  Engine eng(model);
  eng.check_input(u);
  StepCache cache;
  eng.forward(to_planar(u), cache);
  GridField out(u.height(), u.width(), u.channels(), u.lx(), u.ly());
  from_planar(eng.increment(cache), out);
  return out;
}

GridField forward_step(const OperatorModel& model, const GridField& u) {
  Engine eng(model);
  eng.check_input(u);
  StepCache cache;
  auto planar = to_planar(u);
  eng.forward(planar, cache);
  const auto inc = eng.increment(cache);
  for (std::size_t k = 0; k < planar.size(); ++k) planar[k] += inc[k];
  GridField out(u.height(), u.width(), u.channels(), u.lx(), u.ly());
  from_planar(planar, out);
  return out;
}

RolloutResult rollout(const OperatorModel& model, const GridField& u0, int steps) {
  if (steps < 0) throw InvalidArgument("rollout steps must be >= 0");
  Engine eng(model);
  eng.check_input(u0);
  RolloutResult r;
  r.frames.reserve(steps + 1);
  r.frames.push_back(u0);
  r.norms.push_back(frame_norm(u0));
  auto planar = to_planar(u0);
  StepCache cache;
  for (int t = 1; t <= steps; ++t) {
    try {
      eng.forward(planar, cache);
    } catch (const NonFiniteActivation& e) {
      throw NonFiniteActivation("rollout step " + std::to_string(t) + ": " + e.what());
    }
    const auto inc = eng.increment(cache);
    for (std::size_t k = 0; k < planar.size(); ++k) planar[k] += inc[k];
    GridField f(u0.height(), u0.width(), u0.channels(), u0.lx(), u0.ly());
    from_planar(planar, f);
    r.norms.push_back(frame_norm(f));
    r.frames.push_back(std::move(f));
  }
  return r;
}

LossAndGrad loss_and_grad(const OperatorModel& model, const std::vector<Transition>& batch,
                          double loss_scale) {
  const double denom = batch_denominator(model, batch) / loss_scale;
  Engine eng(model);
  LossAndGrad out;
  out.grad = zeros_like(model.weights);
  double total = 0.0;
  for (const auto& tr : batch) {
    eng.check_input(tr.input);
    total += window_loss(eng, model, tr, 1.0 / denom, &out.grad);
  }
  out.loss = total / denom;
  return out;
}

double loss_only(const OperatorModel& model, const std::vector<Transition>& batch) {
  const double denom = batch_denominator(model, batch);
  Engine eng(model);
  double total = 0.0;
  for (const auto& tr : batch) {
    eng.check_input(tr.input);
    total += window_loss(eng, model, tr, 1.0, nullptr);
  }
  return total / denom;
}

void adam_update(WeightSet& weights, const WeightSet& grad, AdamState& state,
                 const AdamHyper& hyper) {
  require_same_schema(weights, grad, "adam");
  if (state.m.empty()) {
    state.m = zeros_like(weights);
    state.v = zeros_like(weights);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  auto ig = grad.begin();
  auto im = state.m.begin();
  auto iv = state.v.begin();
  for (auto& [name, w] : weights) {
    const auto& g = (ig++)->second.data;
    auto& m = (im++)->second.data;
    auto& v = (iv++)->second.data;
    for (std::size_t k = 0; k < w.data.size(); ++k) {
      m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
      v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
      const double mh = m[k] / bc1;
      const double vh = v[k] / bc2;
      w.data[k] -= hyper.lr * mh / (std::sqrt(vh) + hyper.eps);
    }
  }
}

std::vector<Transition> sample_windows(const std::vector<const TrajectoryDataset*>& data,
                                       int count, int unroll, Rng& rng) {
  if (data.empty()) throw InvalidArgument("no datasets to sample from");
  std::vector<Transition> out;
  out.reserve(count);
  for (int b = 0; b < count; ++b) {
    const auto* ds = data[rng.below(data.size())];
    if (ds->samples.empty()) throw InvalidArgument("dataset " + ds->task.name + " is empty");
    const auto& traj = ds->samples[rng.below(ds->samples.size())].frames;
    const int horizon = static_cast<int>(traj.size()) - 1;
    if (horizon < unroll) throw InvalidArgument("trajectory shorter than the unroll length");
    const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(horizon - unroll + 1)));
    Transition tr{traj[t], {}};
    for (int j = 1; j <= unroll; ++j) tr.targets.push_back(traj[t + j]);
    out.push_back(std::move(tr));
  }
  return out;
}

TrainResult train_anchor(const OperatorConfig& config, const TrainConfig& train,
                         const std::vector<const TrajectoryDataset*>& support) {
  if (support.empty()) throw InvalidArgument("anchor training needs at least one support regime");
  OperatorModel model{config, fit_normalizer(support), init_weights(config, train.seed)};
  check_model(model);
  return run_training(std::move(model), train, support, true);
}

TrainResult finetune_endpoint(const OperatorModel& anchor, const TrainConfig& train,
                              const TrajectoryDataset& endpoint) {
  check_model(anchor);
  return run_training(anchor, train, {&endpoint}, false);
}

std::string training_log_csv(const std::vector<LogRow>& log) {
  std::string out = "step,loss,lr,monitor_loss\n";
  char buf[128];
  for (const auto& r : log) {
    if (std::isnan(r.monitor_loss)) {
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,\n", r.step, r.loss, r.lr);
    } else {
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", r.step, r.loss, r.lr,
                    r.monitor_loss);
    }
    out += buf;
  }
  return out;
}

}  // namespace ccm
