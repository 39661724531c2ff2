#pragma once

// Direct-summation grouped convolution, independent of the im2col kernel.

#include "rdl/tensor.hpp"

namespace rdl::testing {

template <typename T>
tg::Tensor<T> direct_conv(const tg::Tensor<T> &x, const tg::Tensor<T> &w, int stride, int pad, int groups) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int n = w.dim(0), k = w.dim(2);
  const int cg = C / groups, ng = n / groups;
  const int Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  tg::Tensor<T> y({N, n, Ho, Wo});
  for (int b = 0; b < N; ++b)
    for (int o = 0; o < n; ++o) {
      const int g = o / ng;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          double acc = 0;
          for (int c = 0; c < cg; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += static_cast<double>(x.at(b, g * cg + c, iy, ix)) * w.at(o, c, ky, kx);
              }
          y.at(b, o, oy, ox) = static_cast<T>(acc);
        }
    }
  return y;
}

template <typename T>
double max_rel_diff(const tg::Tensor<T> &a, const tg::Tensor<T> &b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - b[i]);
    const double s = std::max({std::abs(static_cast<double>(a[i])), std::abs(static_cast<double>(b[i])), 1e-8});
    worst = std::max(worst, d / s);
  }
  return worst;
}

}  // namespace rdl::testing
