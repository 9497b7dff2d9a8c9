#include "ccm/field_grid.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <string>
#include <tuple>

#include "ccm/error.hpp"

namespace ccm {

namespace {

void check_grid_dims(int height, int width, int channels) {
  if (height < 4 || width < 4 || !is_power_of_two(height) ||
      !is_power_of_two(width)) {
    throw InvalidArgument("grid dimensions must be powers of two >= 4, got " +
                          std::to_string(height) + "x" + std::to_string(width));
  }
  if (channels < 1) {
    throw InvalidArgument("grid field needs at least one channel");
  }
}

// FFTW planning is not thread-safe, execution with new-array execute is.
// Plans are created once per (H, W, direction) with FFTW_UNALIGNED so they can
// be applied to any std::complex buffer, and FFTW_ESTIMATE so the chosen
// algorithm (and therefore every bit of the output) is deterministic.
class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  fftw_plan get(int height, int width, bool inverse) {
    const auto key = std::make_tuple(height, width, inverse);
    std::lock_guard lock(mutex_);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<Complex> scratch(static_cast<std::size_t>(height) * width);
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    fftw_plan plan = fftw_plan_dft_2d(height, width, buf, buf,
                                      inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                      FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (plan == nullptr) throw Error("fftw failed to create a plan");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<int, int, bool>, fftw_plan> plans_;
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

}  // namespace

bool is_power_of_two(int n) noexcept { return n > 0 && (n & (n - 1)) == 0; }

GridField::GridField(int height, int width, int channels, double lx, double ly)
    : h_(height), w_(width), c_(channels), lx_(lx), ly_(ly) {
  check_grid_dims(height, width, channels);
  if (!(lx > 0.0) || !(ly > 0.0)) {
    throw InvalidArgument("domain lengths must be positive");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, 0.0);
}

std::vector<double> GridField::channel(int c) const {
  std::vector<double> plane(cell_count());
  for (std::size_t n = 0; n < plane.size(); ++n) plane[n] = data_[n * c_ + c];
  return plane;
}

void GridField::set_channel(int c, std::span<const double> plane) {
  if (plane.size() != cell_count()) {
    throw InvalidArgument("channel plane has wrong size");
  }
  for (std::size_t n = 0; n < plane.size(); ++n) data_[n * c_ + c] = plane[n];
}

bool GridField::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

SpectralField::SpectralField(int height, int width, int channels, double lx,
                             double ly)
    : h_(height), w_(width), c_(channels), lx_(lx), ly_(ly) {
  check_grid_dims(height, width, channels);
  data_.assign(static_cast<std::size_t>(height) * width * channels,
               Complex{0.0, 0.0});
}

std::span<Complex> SpectralField::plane(int c) noexcept {
  const std::size_t n = static_cast<std::size_t>(h_) * w_;
  return std::span<Complex>(data_).subspan(n * c, n);
}

std::span<const Complex> SpectralField::plane(int c) const noexcept {
  const std::size_t n = static_cast<std::size_t>(h_) * w_;
  return std::span<const Complex>(data_).subspan(n * c, n);
}

double SpectralField::ky(int i) const noexcept {
  return 2.0 * std::numbers::pi * wavenumber_index(i, h_) / ly_;
}

double SpectralField::kx(int j) const noexcept {
  return 2.0 * std::numbers::pi * wavenumber_index(j, w_) / lx_;
}

void fft2_inplace(std::span<Complex> plane, int height, int width,
                  bool inverse) {
  if (plane.size() != static_cast<std::size_t>(height) * width) {
    throw InvalidArgument("fft buffer size does not match dimensions");
  }
  fftw_plan plan = plan_cache().get(height, width, inverse);
  auto* buf = reinterpret_cast<fftw_complex*>(plane.data());
  fftw_execute_dft(plan, buf, buf);
}

SpectralField dft2(const GridField& field) {
  if (!field.all_finite()) {
    throw InvalidArgument("dft2: input field contains non-finite values");
  }
  SpectralField out(field.height(), field.width(), field.channels(), field.lx(),
                    field.ly());
  const auto values = field.values();
  const int nc = field.channels();
  for (int c = 0; c < nc; ++c) {
    auto plane = out.plane(c);
    for (std::size_t n = 0; n < plane.size(); ++n) {
      plane[n] = Complex{values[n * nc + c], 0.0};
    }
    fft2_inplace(plane, field.height(), field.width(), false);
  }
  return out;
}

GridField idft2(const SpectralField& spectrum) {
  GridField out(spectrum.height(), spectrum.width(), spectrum.channels(),
                spectrum.lx(), spectrum.ly());
  const int nc = spectrum.channels();
  const double inv_n = 1.0 / static_cast<double>(out.cell_count());
  std::vector<Complex> work(out.cell_count());
  auto values = out.values();
  for (int c = 0; c < nc; ++c) {
    const auto src = spectrum.plane(c);
    std::copy(src.begin(), src.end(), work.begin());
    fft2_inplace(work, spectrum.height(), spectrum.width(), true);
    for (std::size_t n = 0; n < work.size(); ++n) {
      values[n * nc + c] = work[n].real() * inv_n;
    }
  }
  return out;
}

GridField spectral_gradient(const GridField& field, Axis axis) {
  SpectralField spec = dft2(field);
  const int h = field.height();
  const int w = field.width();
  for (int c = 0; c < field.channels(); ++c) {
    auto plane = spec.plane(c);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        Complex& v = plane[static_cast<std::size_t>(i) * w + j];
        const bool nyquist =
            axis == Axis::x ? (j == w / 2) : (i == h / 2);
        if (nyquist) {
          v = 0.0;
          continue;
        }
        const double k = axis == Axis::x ? spec.kx(j) : spec.ky(i);
        v *= Complex{0.0, k};
      }
    }
  }
  return idft2(spec);
}

DealiasMask::DealiasMask(int height, int width) : h_(height), w_(width) {
  check_grid_dims(height, width, 1);
  const int cut_y = height / 3;
  const int cut_x = width / 3;
  keep_.assign(static_cast<std::size_t>(height) * width, 0);
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const bool ok = std::abs(wavenumber_index(i, height)) <= cut_y &&
                      std::abs(wavenumber_index(j, width)) <= cut_x;
      keep_[static_cast<std::size_t>(i) * width + j] = ok ? 1 : 0;
    }
  }
}

void DealiasMask::apply(std::span<Complex> plane) const noexcept {
  for (std::size_t n = 0; n < plane.size() && n < keep_.size(); ++n) {
    if (!keep_[n]) plane[n] = 0.0;
  }
}

void DealiasMask::apply(SpectralField& spectrum) const {
  if (spectrum.height() != h_ || spectrum.width() != w_) {
    throw InvalidArgument("dealias mask shape does not match spectrum");
  }
  for (int c = 0; c < spectrum.channels(); ++c) apply(spectrum.plane(c));
}

DealiasMask dealias_mask(int height, int width) {
  return DealiasMask(height, width);
}

}  // namespace ccm
