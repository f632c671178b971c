#pragma once

// Square RGB rasters in HWC layout plus bilinear resampling and its adjoint.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "errors.hpp"

namespace clens {

inline constexpr int kChannels = 3;

struct Raster {
  int size = 0;
  std::vector<double> data;  // size * size * 3, row-major, channels innermost

  Raster() = default;
  explicit Raster(int s, double fill = 0.0) : size(s), data(static_cast<std::size_t>(s) * s * kChannels, fill) {
    if (s <= 0) throw InputError("raster size must be positive");
  }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * size + x) * kChannels + c;
  }
  double& at(int y, int x, int c) { return data[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data[index(y, x, c)]; }
  std::size_t numel() const { return data.size(); }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }
  bool within_unit_range() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
  }

  Raster& operator+=(const Raster& o) {
    if (o.size != size) throw InputError("raster size mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }

  friend bool operator==(const Raster&, const Raster&) = default;
};

using Image = Raster;

// One output sample of a 1-D bilinear resampler: out = (1-w)*in[lo] + w*in[hi].
struct LinearTap {
  int lo = 0;
  int hi = 0;
  double w = 0.0;
};

// Half-pixel-centre bilinear weights (the align_corners=false convention),
// clamping the source coordinate at the borders.
inline std::vector<LinearTap> bilinear_taps(int in, int out) {
  std::vector<LinearTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    int lo = static_cast<int>(std::floor(src));
    int hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {lo, hi, src - lo};
  }
  return taps;
}

// Precomputed separable resize between two square sizes.
class Resizer {
 public:
  Resizer(int in, int out) : in_(in), out_(out), taps_(bilinear_taps(in, out)) {
    if (in <= 0 || out <= 0) throw InputError("resize sizes must be positive");
  }

  int in_size() const { return in_; }
  int out_size() const { return out_; }

  // dst += resize(src)
  void accumulate(const Raster& src, Raster& dst) const {
    check(src.size == in_ && dst.size == out_);
    for (int y = 0; y < out_; ++y) {
      const LinearTap& ty = taps_[static_cast<std::size_t>(y)];
      for (int x = 0; x < out_; ++x) {
        const LinearTap& tx = taps_[static_cast<std::size_t>(x)];
        for (int c = 0; c < kChannels; ++c) {
          double top = (1.0 - tx.w) * src.at(ty.lo, tx.lo, c) + tx.w * src.at(ty.lo, tx.hi, c);
          double bot = (1.0 - tx.w) * src.at(ty.hi, tx.lo, c) + tx.w * src.at(ty.hi, tx.hi, c);
          dst.at(y, x, c) += (1.0 - ty.w) * top + ty.w * bot;
        }
      }
    }
  }

  Raster apply(const Raster& src) const {
    Raster dst(out_);
    accumulate(src, dst);
    return dst;
  }

  // grad_src += resize^T(grad_dst)
  void accumulate_adjoint(const Raster& grad_dst, Raster& grad_src) const {
    check(grad_dst.size == out_ && grad_src.size == in_);
    for (int y = 0; y < out_; ++y) {
      const LinearTap& ty = taps_[static_cast<std::size_t>(y)];
      for (int x = 0; x < out_; ++x) {
        const LinearTap& tx = taps_[static_cast<std::size_t>(x)];
        for (int c = 0; c < kChannels; ++c) {
          double g = grad_dst.at(y, x, c);
          if (g == 0.0) continue;
          double gt = (1.0 - ty.w) * g;
          double gb = ty.w * g;
          grad_src.at(ty.lo, tx.lo, c) += (1.0 - tx.w) * gt;
          grad_src.at(ty.lo, tx.hi, c) += tx.w * gt;
          grad_src.at(ty.hi, tx.lo, c) += (1.0 - tx.w) * gb;
          grad_src.at(ty.hi, tx.hi, c) += tx.w * gb;
        }
      }
    }
  }

 private:
  static void check(bool ok) {
    if (!ok) throw InputError("raster size does not match resizer");
  }

  int in_;
  int out_;
  std::vector<LinearTap> taps_;
};

inline Raster resize_bilinear(const Raster& src, int out) {
  if (src.size == out) return src;
  return Resizer(src.size, out).apply(src);
}

// Resize a non-square HWC buffer (e.g. a decoded PNG) to a square raster.
inline Raster resize_bilinear(std::span<const double> hwc, int height, int width, int out) {
  if (static_cast<std::size_t>(height) * width * kChannels != hwc.size())
    throw InputError("buffer size does not match dimensions");
  auto ty = bilinear_taps(height, out);
  auto tx = bilinear_taps(width, out);
  auto px = [&](int y, int x, int c) { return hwc[(static_cast<std::size_t>(y) * width + x) * kChannels + c]; };
  Raster dst(out);
  for (int y = 0; y < out; ++y) {
    const auto& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out; ++x) {
      const auto& b = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < kChannels; ++c) {
        double top = (1.0 - b.w) * px(a.lo, b.lo, c) + b.w * px(a.lo, b.hi, c);
        double bot = (1.0 - b.w) * px(a.hi, b.lo, c) + b.w * px(a.hi, b.hi, c);
        dst.at(y, x, c) = (1.0 - a.w) * top + a.w * bot;
      }
    }
  }
  return dst;
}

}  // namespace clens
