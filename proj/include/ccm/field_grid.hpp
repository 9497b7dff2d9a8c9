#pragma once

// Dense periodic 2D fields and the spectral primitives shared by the
// simulators and the operator model.
//
// Conventions:
//   * values are stored H x W x C, row-major (row = y index, column = x index);
//   * the forward transform is unnormalized, the inverse carries 1/(H*W);
//   * wavenumber index n on an axis of length N maps to n for n < N/2 and to
//     n - N otherwise, so the Nyquist index is -N/2.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ccm {

using Complex = std::complex<double>;

class GridField {
 public:
  GridField() = default;
  GridField(int height, int width, int channels, double lx = 1.0,
            double ly = 1.0);

  int height() const noexcept { return h_; }
  int width() const noexcept { return w_; }
  int channels() const noexcept { return c_; }
  double lx() const noexcept { return lx_; }
  double ly() const noexcept { return ly_; }
  std::size_t cell_count() const noexcept {
    return static_cast<std::size_t>(h_) * static_cast<std::size_t>(w_);
  }
  std::size_t size() const noexcept { return data_.size(); }

  double& at(int i, int j, int c) noexcept {
    return data_[(static_cast<std::size_t>(i) * w_ + j) * c_ + c];
  }
  double at(int i, int j, int c) const noexcept {
    return data_[(static_cast<std::size_t>(i) * w_ + j) * c_ + c];
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  // Planar copy of one channel (H*W values, row-major).
  std::vector<double> channel(int c) const;
  void set_channel(int c, std::span<const double> plane);

  bool all_finite() const noexcept;
  bool same_shape(const GridField& other) const noexcept {
    return h_ == other.h_ && w_ == other.w_ && c_ == other.c_;
  }

  bool operator==(const GridField& other) const = default;

 private:
  int h_ = 0;
  int w_ = 0;
  int c_ = 0;
  double lx_ = 1.0;
  double ly_ = 1.0;
  std::vector<double> data_;
};

using Trajectory = std::vector<GridField>;

class SpectralField {
 public:
  SpectralField() = default;
  SpectralField(int height, int width, int channels, double lx, double ly);

  int height() const noexcept { return h_; }
  int width() const noexcept { return w_; }
  int channels() const noexcept { return c_; }
  double lx() const noexcept { return lx_; }
  double ly() const noexcept { return ly_; }

  // Planar coefficients of channel c (H*W entries, row = ky index).
  std::span<Complex> plane(int c) noexcept;
  std::span<const Complex> plane(int c) const noexcept;

  Complex& at(int i, int j, int c) noexcept {
    return data_[(static_cast<std::size_t>(c) * h_ + i) * w_ + j];
  }
  Complex at(int i, int j, int c) const noexcept {
    return data_[(static_cast<std::size_t>(c) * h_ + i) * w_ + j];
  }

  // Physical angular wavenumbers of row i / column j.
  double ky(int i) const noexcept;
  double kx(int j) const noexcept;

 private:
  int h_ = 0;
  int w_ = 0;
  int c_ = 0;
  double lx_ = 1.0;
  double ly_ = 1.0;
  std::vector<Complex> data_;
};

enum class Axis { x, y };

// Signed wavenumber index of position n on an axis of length len.
constexpr int wavenumber_index(int n, int len) noexcept {
  return n < len / 2 ? n : n - len;
}

bool is_power_of_two(int n) noexcept;

SpectralField dft2(const GridField& field);
// Real part of the inverse transform; the imaginary residue is discarded.
GridField idft2(const SpectralField& spectrum);

GridField spectral_gradient(const GridField& field, Axis axis);

// Two-thirds rule: keeps modes whose signed index magnitude is at most
// floor(N/3) on both axes.
class DealiasMask {
 public:
  DealiasMask(int height, int width);

  int height() const noexcept { return h_; }
  int width() const noexcept { return w_; }
  bool keeps(int i, int j) const noexcept {
    return keep_[static_cast<std::size_t>(i) * w_ + j] != 0;
  }
  void apply(std::span<Complex> plane) const noexcept;
  void apply(SpectralField& spectrum) const;

 private:
  int h_;
  int w_;
  std::vector<std::uint8_t> keep_;
};

DealiasMask dealias_mask(int height, int width);

// In-place 2D complex FFT on a planar H x W buffer. forward = exp(-i k x)
// without normalization; the inverse applies exp(+i k x) and also leaves the
// data unnormalized (callers divide by H*W where needed).
void fft2_inplace(std::span<Complex> plane, int height, int width,
                  bool inverse);

}  // namespace ccm
