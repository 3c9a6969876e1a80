#pragma once

// Test-only reference implementations, independent of the library's
// compute paths. Used to cross-check the production kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "freetrain/tensor.hpp"

namespace oracles {

// Naive direct convolution: nested loops, zero padding, no tricks.
// x [B,Ci,H,W], w [Co,Ci,kh,kw], bias [Co] (empty = none).
inline freetrain::Tensor conv2d_naive(const freetrain::Tensor& x,
                                      const freetrain::Tensor& w,
                                      const std::vector<float>& bias,
                                      int stride, int padding) {
  const std::size_t b_n = x.shape[0], ci = x.shape[1], h = x.shape[2],
                    wd = x.shape[3];
  const std::size_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - kw) / stride + 1;
  freetrain::Tensor out = freetrain::Tensor::zeros({b_n, co, ho, wo});
  for (std::size_t b = 0; b < b_n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long iy = static_cast<long>(oy) * stride +
                                static_cast<long>(ky) - padding;
                const long ix = static_cast<long>(ox) * stride +
                                static_cast<long>(kx) - padding;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) ||
                    ix >= static_cast<long>(wd))
                  continue;
                acc += static_cast<double>(
                           x.data[((b * ci + c) * h + iy) * wd + ix]) *
                       static_cast<double>(
                           w.data[((o * ci + c) * kh + ky) * kw + kx]);
              }
          out.data[((b * co + o) * ho + oy) * wo + ox] =
              static_cast<float>(acc);
        }
  return out;
}

// Exhaustive maximum of a scalar loss over the 2^d corners of the
// l-inf ball of radius eps around x (d = x.numel(), d <= ~20).
// Corners are clamped to [lo, hi] exactly as the attacks clamp.
struct CornerMax {
  float loss;
  freetrain::Tensor point;
};

inline CornerMax corner_enumeration_max(
    const std::function<float(const freetrain::Tensor&)>& loss,
    const freetrain::Tensor& x, float eps, float lo, float hi) {
  const std::size_t d = x.numel();
  CornerMax best{-std::numeric_limits<float>::infinity(), x};
  for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
    freetrain::Tensor corner = x;
    for (std::size_t i = 0; i < d; ++i) {
      const float s = (mask >> i) & 1 ? 1.0f : -1.0f;
      corner.data[i] = std::clamp(x.data[i] + s * eps, lo, hi);
    }
    const float l = loss(corner);
    if (l > best.loss) {
      best.loss = l;
      best.point = corner;
    }
  }
  return best;
}

// Mean and standard deviation of a sample, double accumulation.
inline std::pair<double, double> mean_std(const std::vector<float>& v) {
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (float x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return {mean, std::sqrt(var)};
}

}  // namespace oracles
