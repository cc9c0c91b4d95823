#pragma once

// Independent straight-loop reference implementations used as test oracles.
// Everything here is written directly from the operation definitions, in
// double precision, with no calls into the library's compute paths.

#include <algorithm>
#include <cmath>
#include <vector>

#include <aidn/tensor.hpp>

namespace oracle {

// same-padding (edge replicate) convolution, plain sextuple loop
template <typename T>
aidn::TensorD conv2d(const aidn::Tensor<T>& in, const aidn::Tensor<T>& kernel,
                     const aidn::Tensor<T>& bias) {
  const int H = in.shape[0], W = in.shape[1], Cin = in.shape[2];
  const int k = kernel.shape[0], Cout = kernel.shape[3], r = k / 2;
  aidn::TensorD out({H, W, Cout});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int co = 0; co < Cout; ++co) {
        double acc = bias[static_cast<std::size_t>(co)];
        for (int u = 0; u < k; ++u)
          for (int v = 0; v < k; ++v)
            for (int ci = 0; ci < Cin; ++ci) {
              const int sy = std::clamp(y + u - r, 0, H - 1);
              const int sx = std::clamp(x + v - r, 0, W - 1);
              const double iv = in.at(sy, sx, ci);
              const double wv = kernel.data[((static_cast<std::size_t>(u) * k + v) * Cin + ci) * Cout + co];
              acc += iv * wv;
            }
        out.at(y, x, co) = acc;
      }
  return out;
}

template <typename T>
aidn::TensorD fully_connected(const aidn::Tensor<T>& v, const aidn::Tensor<T>& w,
                              const aidn::Tensor<T>& b) {
  const int m = w.shape[0], n = w.shape[1];
  aidn::TensorD out({m});
  for (int i = 0; i < m; ++i) {
    double acc = b[static_cast<std::size_t>(i)];
    for (int j = 0; j < n; ++j)
      acc += static_cast<double>(w.data[static_cast<std::size_t>(i) * n + j]) * static_cast<double>(v[static_cast<std::size_t>(j)]);
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

inline double cubic_kernel(double d, double a = -0.5) {
  d = std::abs(d);
  if (d <= 1.0) return (a + 2.0) * d * d * d - (a + 3.0) * d * d + 1.0;
  if (d < 2.0) return a * d * d * d - 5.0 * a * d * d + 8.0 * a * d - 4.0 * a;
  return 0.0;
}

// direct (non-separable) 2D cubic convolution on the half-pixel grid
template <typename T>
aidn::TensorD bicubic_resize(const aidn::Tensor<T>& in, int outH, int outW) {
  const int H = in.shape[0], W = in.shape[1], C = in.shape[2];
  const double ry = static_cast<double>(outH) / H, rx = static_cast<double>(outW) / W;
  aidn::TensorD out({outH, outW, C});
  for (int oy = 0; oy < outH; ++oy) {
    const double sy = (oy + 0.5) / ry - 0.5;
    const int by = static_cast<int>(std::floor(sy));
    for (int ox = 0; ox < outW; ++ox) {
      const double sx = (ox + 0.5) / rx - 0.5;
      const int bx = static_cast<int>(std::floor(sx));
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int m = -1; m <= 2; ++m)
          for (int n = -1; n <= 2; ++n) {
            const int py = std::clamp(by + m, 0, H - 1);
            const int px = std::clamp(bx + n, 0, W - 1);
            acc += cubic_kernel(sy - (by + m)) * cubic_kernel(sx - (bx + n)) *
                   static_cast<double>(in.at(py, px, c));
          }
        out.at(oy, ox, c) = acc;
      }
    }
  }
  return out;
}

inline double bilinear_at(const aidn::TensorD& f, double x, double y, int c) {
  const int H = f.shape[0], W = f.shape[1];
  const double xc = std::clamp(x, 0.0, static_cast<double>(W - 1));
  const double yc = std::clamp(y, 0.0, static_cast<double>(H - 1));
  const int x0 = std::clamp(static_cast<int>(std::floor(xc)), 0, std::max(0, W - 2));
  const int y0 = std::clamp(static_cast<int>(std::floor(yc)), 0, std::max(0, H - 2));
  const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const double fx = xc - x0, fy = yc - y0;
  return (1 - fy) * ((1 - fx) * f.at(y0, x0, c) + fx * f.at(y0, x1, c)) +
         fy * ((1 - fx) * f.at(y1, x0, c) + fx * f.at(y1, x1, c));
}

// per-pixel PSNR/SSIM references

template <typename T>
double mse(const aidn::Tensor<T>& a, const aidn::Tensor<T>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

template <typename T>
double psnr(const aidn::Tensor<T>& a, const aidn::Tensor<T>& b) {
  return 10.0 * std::log10(1.0 / mse(a, b));
}

// direct sliding-window SSIM: 11x11 Gaussian sigma 1.5, valid windows only,
// per channel then averaged
template <typename T>
double ssim(const aidn::Tensor<T>& a, const aidn::Tensor<T>& b) {
  const int H = a.shape[0], W = a.shape[1], C = a.shape[2];
  double win[11][11];
  double wsum = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      const double dy = i - 5, dx = j - 5;
      win[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      wsum += win[i][j];
    }
  for (auto& row : win)
    for (double& v : row) v /= wsum;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  double total = 0.0;
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    int count = 0;
    for (int y = 0; y + 11 <= H; ++y)
      for (int x = 0; x + 11 <= W; ++x) {
        double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double va = a.at(y + i, x + j, c), vb = b.at(y + i, x + j, c);
            ma += win[i][j] * va;
            mb += win[i][j] * vb;
            maa += win[i][j] * va * va;
            mbb += win[i][j] * vb * vb;
            mab += win[i][j] * va * vb;
          }
        const double var_a = maa - ma * ma, var_b = mbb - mb * mb, cov = mab - ma * mb;
        acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        ++count;
      }
    total += acc / count;
  }
  return total / C;
}

// helpers

template <typename T>
double max_abs_diff(const aidn::Tensor<T>& a, const aidn::TensorD& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

template <typename T>
double max_rel_diff(const aidn::Tensor<T>& a, const aidn::TensorD& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - b[i]);
    m = std::max(m, d / std::max(1.0, std::abs(b[i])));
  }
  return m;
}

}  // namespace oracle
