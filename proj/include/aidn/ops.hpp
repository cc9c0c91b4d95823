#pragma once

// Differentiable primitive kernels. Forward functions are pure; each has a
// matching *_backward that accumulates (+=) into caller-provided gradient
// tensors so one tensor can feed several consumers.
//
// Boundary policy everywhere: edge replication (clamp), both for convolution
// padding and for sampling. Coordinates follow the half-pixel convention:
// output index i maps to input coordinate (i + 0.5) / rate - 0.5 with
// rate = out_extent / in_extent, and pixel centers sit at integers.

#include <algorithm>
#include <cmath>
#include <type_traits>

#include "aidn/simd.hpp"
#include "aidn/tensor.hpp"

namespace aidn {

template <typename T>
inline T relu(T x) {
  return x > T(0) ? x : T(0);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = relu(x[i]);
  return out;
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& gout, Tensor<T>& gx) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > T(0)) gx[i] += gout[i];
}

// ---------------------------------------------------------------------------
// conv2d: H x W x Cin (*) k x k x Cin x Cout -> H x W x Cout, same padding by
// edge replication, k odd.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
inline void conv2d_check(const Tensor<T>& in, const Tensor<T>& kernel, const Tensor<T>& bias) {
  if (in.shape.rank != 3) throw ShapeError("conv2d: input rank " + std::to_string(in.shape.rank) + ", expected H x W x C");
  if (kernel.shape.rank != 4) throw ShapeError("conv2d: kernel rank " + std::to_string(kernel.shape.rank) + ", expected k x k x Cin x Cout");
  const int k = kernel.shape[0];
  if (kernel.shape[1] != k)
    throw ShapeError("conv2d: kernel spatial axes disagree (" + std::to_string(k) + " vs " + std::to_string(kernel.shape[1]) + ")");
  if (k % 2 == 0) throw ShapeError("conv2d: kernel size " + std::to_string(k) + " must be odd");
  if (kernel.shape[2] != in.shape[2])
    throw ShapeError("conv2d: kernel Cin axis is " + std::to_string(kernel.shape[2]) + " but input has " + std::to_string(in.shape[2]) + " channels");
  if (bias.shape.rank != 1 || bias.shape[0] != kernel.shape[3])
    throw ShapeError("conv2d: bias axis is " + bias.shape.str() + " but kernel Cout is " + std::to_string(kernel.shape[3]));
}

}  // namespace detail

namespace detail {

// Straightforward body, any channel counts. The hot float shapes go through
// the vf16 microkernels below instead.
template <typename T>
void conv2d_body_generic(const T* __restrict inp, const T* __restrict kp, const T* __restrict bias,
                         T* __restrict outp, int H, int W, int Cin, int Cout, int k) {
  const int r = k / 2;
  std::vector<T> accbuf(static_cast<std::size_t>(Cout));
  T* __restrict acc = accbuf.data();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int co = 0; co < Cout; ++co) acc[co] = bias[co];
      for (int u = 0; u < k; ++u) {
        const int sy = std::clamp(y + u - r, 0, H - 1);
        for (int v = 0; v < k; ++v) {
          const int sx = std::clamp(x + v - r, 0, W - 1);
          const T* __restrict ip = inp + (static_cast<std::size_t>(sy) * W + sx) * Cin;
          const T* __restrict wp = kp + ((static_cast<std::size_t>(u) * k + v) * Cin) * Cout;
          for (int ci = 0; ci < Cin; ++ci) {
            const T iv = ip[ci];
            const T* __restrict wq = wp + static_cast<std::size_t>(ci) * Cout;
            for (int co = 0; co < Cout; ++co) acc[co] += iv * wq[co];
          }
        }
      }
      T* __restrict op = outp + (static_cast<std::size_t>(y) * W + x) * Cout;
      for (int co = 0; co < Cout; ++co) op[co] = acc[co];
    }
  }
}

template <typename T>
void conv2d_backward_body_generic(const T* __restrict inp, const T* __restrict kt,
                                  const T* __restrict goutp, T* __restrict ginp, T* __restrict gkp,
                                  T* __restrict gbias, int H, int W, int Cin, int Cout, int k) {
  const int r = k / 2;
  std::vector<T> daccbuf(static_cast<std::size_t>(Cin));
  T* __restrict dacc = daccbuf.data();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const T* __restrict g = goutp + (static_cast<std::size_t>(y) * W + x) * Cout;
      for (int co = 0; co < Cout; ++co) gbias[co] += g[co];
      for (int u = 0; u < k; ++u) {
        const int sy = std::clamp(y + u - r, 0, H - 1);
        for (int v = 0; v < k; ++v) {
          const int sx = std::clamp(x + v - r, 0, W - 1);
          const std::size_t ibase = (static_cast<std::size_t>(sy) * W + sx) * Cin;
          const T* __restrict ip = inp + ibase;
          const std::size_t wbase = ((static_cast<std::size_t>(u) * k + v) * Cin) * Cout;
          for (int ci = 0; ci < Cin; ++ci) {
            const T iv = ip[ci];
            T* __restrict dwq = gkp + wbase + static_cast<std::size_t>(ci) * Cout;
            for (int co = 0; co < Cout; ++co) dwq[co] += iv * g[co];
          }
          const T* __restrict wt = kt + (static_cast<std::size_t>(u) * k + v) * Cin * Cout;
          for (int ci = 0; ci < Cin; ++ci) dacc[ci] = T(0);
          for (int co = 0; co < Cout; ++co) {
            const T gv = g[co];
            const T* __restrict wrow = wt + static_cast<std::size_t>(co) * Cin;
            for (int ci = 0; ci < Cin; ++ci) dacc[ci] += gv * wrow[ci];
          }
          T* __restrict dip = ginp + ibase;
          for (int ci = 0; ci < Cin; ++ci) dip[ci] += dacc[ci];
        }
      }
    }
  }
}

#ifdef AIDN_SIMD_VF16

// Cout == 16: one vf16 accumulator per output pixel, four pixels per block
// so the FMA chains overlap and each weight row load serves four pixels.
inline void conv2d_f32_co16(const float* __restrict inp, const float* __restrict kp,
                            const float* __restrict bias, float* __restrict outp, int H, int W,
                            int Cin, int k) {
  using simd::vf16;
  const int r = k / 2;
  const vf16 b = simd::load16(bias);
  for (int y = 0; y < H; ++y) {
    int x = 0;
    for (; x + 4 <= W; x += 4) {
      vf16 a0 = b, a1 = b, a2 = b, a3 = b;
      for (int u = 0; u < k; ++u) {
        const int sy = std::clamp(y + u - r, 0, H - 1);
        const float* __restrict row = inp + static_cast<std::size_t>(sy) * W * Cin;
        for (int v = 0; v < k; ++v) {
          const float* __restrict ip0 = row + static_cast<std::size_t>(std::clamp(x + 0 + v - r, 0, W - 1)) * Cin;
          const float* __restrict ip1 = row + static_cast<std::size_t>(std::clamp(x + 1 + v - r, 0, W - 1)) * Cin;
          const float* __restrict ip2 = row + static_cast<std::size_t>(std::clamp(x + 2 + v - r, 0, W - 1)) * Cin;
          const float* __restrict ip3 = row + static_cast<std::size_t>(std::clamp(x + 3 + v - r, 0, W - 1)) * Cin;
          const float* __restrict wp = kp + ((static_cast<std::size_t>(u) * k + v) * Cin) * 16;
          for (int ci = 0; ci < Cin; ++ci) {
            const vf16 w = simd::load16(wp + static_cast<std::size_t>(ci) * 16);
            a0 += w * ip0[ci];
            a1 += w * ip1[ci];
            a2 += w * ip2[ci];
            a3 += w * ip3[ci];
          }
        }
      }
      float* __restrict op = outp + (static_cast<std::size_t>(y) * W + x) * 16;
      simd::store16(op, a0);
      simd::store16(op + 16, a1);
      simd::store16(op + 32, a2);
      simd::store16(op + 48, a3);
    }
    for (; x < W; ++x) {
      vf16 a0 = b;
      for (int u = 0; u < k; ++u) {
        const int sy = std::clamp(y + u - r, 0, H - 1);
        const float* __restrict row = inp + static_cast<std::size_t>(sy) * W * Cin;
        for (int v = 0; v < k; ++v) {
          const float* __restrict ip = row + static_cast<std::size_t>(std::clamp(x + v - r, 0, W - 1)) * Cin;
          const float* __restrict wp = kp + ((static_cast<std::size_t>(u) * k + v) * Cin) * 16;
          for (int ci = 0; ci < Cin; ++ci) a0 += simd::load16(wp + static_cast<std::size_t>(ci) * 16) * ip[ci];
        }
      }
      simd::store16(outp + (static_cast<std::size_t>(y) * W + x) * 16, a0);
    }
  }
}

// Cin == 16, small Cout (the tail convs): per-output-channel vf16 partial
// products over the 16 input lanes, one horizontal sum per pixel and channel.
inline void conv2d_f32_ci16_small_cout(const float* __restrict inp, const float* __restrict kp,
                                       const float* __restrict bias, float* __restrict outp, int H,
                                       int W, int Cout, int k) {
  using simd::vf16;
  const int r = k / 2;
  const int kk = k * k;
  // transposed tap weights: [t][co][ci]
  std::vector<float> wt(static_cast<std::size_t>(kk) * Cout * 16);
  for (int t = 0; t < kk; ++t)
    for (int ci = 0; ci < 16; ++ci)
      for (int co = 0; co < Cout; ++co)
        wt[(static_cast<std::size_t>(t) * Cout + co) * 16 + ci] =
            kp[(static_cast<std::size_t>(t) * 16 + ci) * Cout + co];

  constexpr int kMaxCout = 8;
  vf16 pacc[kMaxCout];
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int co = 0; co < Cout; ++co) pacc[co] = vf16{};
      for (int u = 0; u < k; ++u) {
        const int sy = std::clamp(y + u - r, 0, H - 1);
        for (int v = 0; v < k; ++v) {
          const int sx = std::clamp(x + v - r, 0, W - 1);
          const vf16 iv = simd::load16(inp + (static_cast<std::size_t>(sy) * W + sx) * 16);
          const float* __restrict wrow = wt.data() + (static_cast<std::size_t>(u) * k + v) * Cout * 16;
          for (int co = 0; co < Cout; ++co)
            pacc[co] += iv * simd::load16(wrow + static_cast<std::size_t>(co) * 16);
        }
      }
      float* __restrict op = outp + (static_cast<std::size_t>(y) * W + x) * Cout;
      for (int co = 0; co < Cout; ++co) op[co] = bias[co] + simd::hsum16(pacc[co]);
    }
  }
}

// Cout == 16 backward. d(input): per-pixel tap accumulators interleaved over
// co, scattered through the clamped indices (border collisions resolve as
// sequential read-modify-writes). d(kernel): one sweep per tap with the
// gradient block in vf16 registers. d(bias): column sums.
inline void conv2d_bwd_f32_co16(const float* __restrict inp, const float* __restrict kt,
                                const float* __restrict goutp, float* __restrict ginp,
                                float* __restrict gkp, float* __restrict gbias, int H, int W,
                                int Cin, int k) {
  using simd::vf16;
  const int r = k / 2;
  const int kk = k * k;

  if (Cin == 16) {
    constexpr int kMaxTaps = 9;
    if (kk <= kMaxTaps) {
      vf16 dacc[kMaxTaps];
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const float* __restrict g = goutp + (static_cast<std::size_t>(y) * W + x) * 16;
          for (int t = 0; t < kk; ++t) dacc[t] = vf16{};
          for (int co = 0; co < 16; ++co) {
            const float gv = g[co];
            for (int t = 0; t < kk; ++t)
              dacc[t] += simd::load16(kt + (static_cast<std::size_t>(t) * 16 + co) * 16) * gv;
          }
          for (int u = 0; u < k; ++u) {
            const int sy = std::clamp(y + u - r, 0, H - 1);
            for (int v = 0; v < k; ++v) {
              const int sx = std::clamp(x + v - r, 0, W - 1);
              float* __restrict dip = ginp + (static_cast<std::size_t>(sy) * W + sx) * 16;
              simd::store16(dip, simd::load16(dip) + dacc[u * k + v]);
            }
          }
        }
      }
    } else {
      std::vector<float> zero_bias_sink;  // fall back for oversized kernels
      conv2d_backward_body_generic<float>(inp, kt, goutp, ginp, gkp, gbias, H, W, Cin, 16, k);
      return;
    }
  } else {
    // small Cin: scalar gather per tap
    std::vector<float> dacc(static_cast<std::size_t>(Cin));
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const float* __restrict g = goutp + (static_cast<std::size_t>(y) * W + x) * 16;
        for (int u = 0; u < k; ++u) {
          const int sy = std::clamp(y + u - r, 0, H - 1);
          for (int v = 0; v < k; ++v) {
            const int sx = std::clamp(x + v - r, 0, W - 1);
            const float* __restrict wt = kt + (static_cast<std::size_t>(u) * k + v) * Cin * 16;
            for (int ci = 0; ci < Cin; ++ci) dacc[static_cast<std::size_t>(ci)] = 0.0f;
            for (int co = 0; co < 16; ++co) {
              const float gv = g[co];
              const float* __restrict wrow = wt + static_cast<std::size_t>(co) * Cin;
              for (int ci = 0; ci < Cin; ++ci) dacc[static_cast<std::size_t>(ci)] += gv * wrow[ci];
            }
            float* __restrict dip = ginp + (static_cast<std::size_t>(sy) * W + sx) * Cin;
            for (int ci = 0; ci < Cin; ++ci) dip[ci] += dacc[static_cast<std::size_t>(ci)];
          }
        }
      }
    }
  }

  {
    vf16 bacc = vf16{};
    const std::size_t n = static_cast<std::size_t>(H) * W;
    for (std::size_t p = 0; p < n; ++p) bacc += simd::load16(goutp + p * 16);
    simd::store16(gbias, simd::load16(gbias) + bacc);
  }

  for (int u = 0; u < k; ++u) {
    for (int v = 0; v < k; ++v) {
      constexpr int kMaxCin = 32;
      vf16 dw[kMaxCin];
      if (Cin > kMaxCin) continue;  // unreachable for supported shapes
      for (int ci = 0; ci < Cin; ++ci) dw[ci] = vf16{};
      for (int y = 0; y < H; ++y) {
        const int sy = std::clamp(y + u - r, 0, H - 1);
        const float* __restrict irow = inp + static_cast<std::size_t>(sy) * W * Cin;
        const float* __restrict grow = goutp + static_cast<std::size_t>(y) * W * 16;
        for (int x = 0; x < W; ++x) {
          const int sx = std::clamp(x + v - r, 0, W - 1);
          const float* __restrict ip = irow + static_cast<std::size_t>(sx) * Cin;
          const vf16 g = simd::load16(grow + static_cast<std::size_t>(x) * 16);
          for (int ci = 0; ci < Cin; ++ci) dw[ci] += g * ip[ci];
        }
      }
      float* __restrict dwq = gkp + ((static_cast<std::size_t>(u) * k + v) * Cin) * 16;
      for (int ci = 0; ci < Cin; ++ci)
        simd::store16(dwq + static_cast<std::size_t>(ci) * 16,
                      simd::load16(dwq + static_cast<std::size_t>(ci) * 16) + dw[ci]);
    }
  }
}

// Cin == 16, small Cout backward: vf16 over the input lanes.
inline void conv2d_bwd_f32_ci16_small_cout(const float* __restrict inp, const float* __restrict kt,
                                           const float* __restrict goutp, float* __restrict ginp,
                                           float* __restrict gkp, float* __restrict gbias, int H,
                                           int W, int Cout, int k) {
  using simd::vf16;
  const int r = k / 2;
  const int kk = k * k;
  constexpr int kMaxTaps = 9, kMaxCout = 8;
  if (kk > kMaxTaps || Cout > kMaxCout) {
    conv2d_backward_body_generic<float>(inp, kt, goutp, ginp, gkp, gbias, H, W, 16, Cout, k);
    return;
  }

  vf16 dacc[kMaxTaps];
  std::vector<float> bsum(static_cast<std::size_t>(Cout), 0.0f);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const float* __restrict g = goutp + (static_cast<std::size_t>(y) * W + x) * Cout;
      for (int co = 0; co < Cout; ++co) bsum[static_cast<std::size_t>(co)] += g[co];
      for (int t = 0; t < kk; ++t) dacc[t] = vf16{};
      for (int co = 0; co < Cout; ++co) {
        const float gv = g[co];
        for (int t = 0; t < kk; ++t)
          dacc[t] += simd::load16(kt + (static_cast<std::size_t>(t) * Cout + co) * 16) * gv;
      }
      for (int u = 0; u < k; ++u) {
        const int sy = std::clamp(y + u - r, 0, H - 1);
        for (int v = 0; v < k; ++v) {
          const int sx = std::clamp(x + v - r, 0, W - 1);
          float* __restrict dip = ginp + (static_cast<std::size_t>(sy) * W + sx) * 16;
          simd::store16(dip, simd::load16(dip) + dacc[u * k + v]);
        }
      }
    }
  }
  for (int co = 0; co < Cout; ++co) gbias[co] += bsum[static_cast<std::size_t>(co)];

  for (int u = 0; u < k; ++u) {
    for (int v = 0; v < k; ++v) {
      vf16 dwT[kMaxCout];
      for (int co = 0; co < Cout; ++co) dwT[co] = vf16{};
      for (int y = 0; y < H; ++y) {
        const int sy = std::clamp(y + u - r, 0, H - 1);
        const float* __restrict irow = inp + static_cast<std::size_t>(sy) * W * 16;
        const float* __restrict grow = goutp + static_cast<std::size_t>(y) * W * Cout;
        for (int x = 0; x < W; ++x) {
          const int sx = std::clamp(x + v - r, 0, W - 1);
          const vf16 iv = simd::load16(irow + static_cast<std::size_t>(sx) * 16);
          const float* __restrict g = grow + static_cast<std::size_t>(x) * Cout;
          for (int co = 0; co < Cout; ++co) dwT[co] += iv * g[co];
        }
      }
      // back into the [ci][co] layout
      float tmp[16];
      float* __restrict dwq = gkp + ((static_cast<std::size_t>(u) * k + v) * 16) * Cout;
      for (int co = 0; co < Cout; ++co) {
        std::memcpy(tmp, &dwT[co], sizeof tmp);
        for (int ci = 0; ci < 16; ++ci) dwq[static_cast<std::size_t>(ci) * Cout + co] += tmp[ci];
      }
    }
  }
}

#endif  // AIDN_SIMD_VF16

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& in, const Tensor<T>& kernel, const Tensor<T>& bias) {
  detail::conv2d_check(in, kernel, bias);
  const int H = in.shape[0], W = in.shape[1], Cin = in.shape[2];
  const int k = kernel.shape[0], Cout = kernel.shape[3];

  Tensor<T> out({H, W, Cout});
#ifdef AIDN_SIMD_VF16
  if constexpr (std::is_same_v<T, float>) {
    if (Cout == 16) {
      detail::conv2d_f32_co16(in.ptr(), kernel.ptr(), bias.ptr(), out.ptr(), H, W, Cin, k);
      return out;
    }
    if (Cin == 16 && Cout <= 8) {
      detail::conv2d_f32_ci16_small_cout(in.ptr(), kernel.ptr(), bias.ptr(), out.ptr(), H, W, Cout, k);
      return out;
    }
  }
#endif
  detail::conv2d_body_generic<T>(in.ptr(), kernel.ptr(), bias.ptr(), out.ptr(), H, W, Cin, Cout, k);
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& in, const Tensor<T>& kernel, const Tensor<T>& gout,
                     Tensor<T>& gin, Tensor<T>& gkernel, Tensor<T>& gbias) {
  const int H = in.shape[0], W = in.shape[1], Cin = in.shape[2];
  const int k = kernel.shape[0], Cout = kernel.shape[3];

  // kernel transposed to [u][v][co][ci] so the d(input) accumulation runs
  // broadcast FMAs over contiguous ci
  std::vector<T> ktbuf(kernel.size());
  {
    T* __restrict kt = ktbuf.data();
    const T* __restrict kp = kernel.ptr();
    for (int t = 0; t < k * k; ++t)
      for (int ci = 0; ci < Cin; ++ci)
        for (int co = 0; co < Cout; ++co)
          kt[(static_cast<std::size_t>(t) * Cout + co) * Cin + ci] =
              kp[(static_cast<std::size_t>(t) * Cin + ci) * Cout + co];
  }

#ifdef AIDN_SIMD_VF16
  if constexpr (std::is_same_v<T, float>) {
    if (Cout == 16 && Cin <= 32 && k * k <= 9) {
      detail::conv2d_bwd_f32_co16(in.ptr(), ktbuf.data(), gout.ptr(), gin.ptr(), gkernel.ptr(),
                                  gbias.ptr(), H, W, Cin, k);
      return;
    }
    if (Cin == 16 && Cout <= 8 && k * k <= 9) {
      detail::conv2d_bwd_f32_ci16_small_cout(in.ptr(), ktbuf.data(), gout.ptr(), gin.ptr(),
                                             gkernel.ptr(), gbias.ptr(), H, W, Cout, k);
      return;
    }
  }
#endif
  detail::conv2d_backward_body_generic<T>(in.ptr(), ktbuf.data(), gout.ptr(), gin.ptr(),
                                          gkernel.ptr(), gbias.ptr(), H, W, Cin, Cout, k);
}

// ---------------------------------------------------------------------------
// fully_connected: weights (m x n) . v (n) + bias (m)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& v, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (v.shape.rank != 1) throw ShapeError("fully_connected: input rank " + std::to_string(v.shape.rank) + ", expected vector");
  if (weights.shape.rank != 2)
    throw ShapeError("fully_connected: weights rank " + std::to_string(weights.shape.rank) + ", expected m x n");
  const int m = weights.shape[0], n = weights.shape[1];
  if (v.shape[0] != n)
    throw ShapeError("fully_connected: weights n axis is " + std::to_string(n) + " but input has " + std::to_string(v.shape[0]) + " elements");
  if (bias.shape.rank != 1 || bias.shape[0] != m)
    throw ShapeError("fully_connected: bias axis is " + bias.shape.str() + " but weights m is " + std::to_string(m));

  Tensor<T> out({m});
  for (int i = 0; i < m; ++i) {
    const T* w = &weights.data[static_cast<std::size_t>(i) * n];
    T acc = bias[static_cast<std::size_t>(i)];
    for (int j = 0; j < n; ++j) acc += w[j] * v[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

template <typename T>
void fully_connected_backward(const Tensor<T>& v, const Tensor<T>& weights, const Tensor<T>& gout,
                              Tensor<T>& gv, Tensor<T>& gweights, Tensor<T>& gbias) {
  const int m = weights.shape[0], n = weights.shape[1];
  for (int i = 0; i < m; ++i) {
    const T g = gout[static_cast<std::size_t>(i)];
    gbias[static_cast<std::size_t>(i)] += g;
    const T* w = &weights.data[static_cast<std::size_t>(i) * n];
    T* dw = &gweights.data[static_cast<std::size_t>(i) * n];
    for (int j = 0; j < n; ++j) {
      gv[static_cast<std::size_t>(j)] += w[j] * g;
      dw[j] += v[static_cast<std::size_t>(j)] * g;
    }
  }
}

// ---------------------------------------------------------------------------
// softmax, stabilized by max subtraction
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& v) {
  if (v.shape.rank != 1 || v.shape[0] < 1) throw ShapeError("softmax: expected non-empty vector");
  Tensor<T> out(v.shape);
  T mx = v[0];
  for (std::size_t i = 1; i < v.size(); ++i) mx = std::max(mx, v[i]);
  T sum = T(0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (std::size_t i = 0; i < v.size(); ++i) out[i] /= sum;
  return out;
}

template <typename T>
void softmax_backward(const Tensor<T>& out, const Tensor<T>& gout, Tensor<T>& gv) {
  T dot = T(0);
  for (std::size_t i = 0; i < out.size(); ++i) dot += gout[i] * out[i];
  for (std::size_t i = 0; i < out.size(); ++i) gv[i] += out[i] * (gout[i] - dot);
}

// ---------------------------------------------------------------------------
// bilinear sampling at a real coordinate, edge-clamped
// ---------------------------------------------------------------------------

/// Resolved corner indices and weights for one bilinear query. `dx_active`
/// is false when x fell outside the pixel-center range and was clamped, in
/// which case the derivative w.r.t. x is zero (same for y).
template <typename T>
struct BilinearTap {
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  T fx = 0, fy = 0;
  bool dx_active = false, dy_active = false;
};

template <typename T>
BilinearTap<T> make_bilinear_tap(int H, int W, double x, double y) {
  BilinearTap<T> t;
  const double xc = std::clamp(x, 0.0, static_cast<double>(W - 1));
  const double yc = std::clamp(y, 0.0, static_cast<double>(H - 1));
  if (W > 1) {
    t.x0 = std::min(static_cast<int>(std::floor(xc)), W - 2);
    t.x1 = t.x0 + 1;
    t.fx = static_cast<T>(xc - t.x0);
    t.dx_active = x > 0.0 && x < static_cast<double>(W - 1);
  }
  if (H > 1) {
    t.y0 = std::min(static_cast<int>(std::floor(yc)), H - 2);
    t.y1 = t.y0 + 1;
    t.fy = static_cast<T>(yc - t.y0);
    t.dy_active = y > 0.0 && y < static_cast<double>(H - 1);
  }
  return t;
}

/// Two nested lerps rather than four explicit corner weights: constants and
/// lattice points come back exactly (the differences vanish, no weight
/// renormalization dust).
template <typename T>
inline void bilinear_sample_raw(const Tensor<T>& F, const BilinearTap<T>& t, T* out) {
  const int W = F.shape[1], C = F.shape[2];
  const T* p00 = &F.data[(static_cast<std::size_t>(t.y0) * W + t.x0) * C];
  const T* p01 = &F.data[(static_cast<std::size_t>(t.y0) * W + t.x1) * C];
  const T* p10 = &F.data[(static_cast<std::size_t>(t.y1) * W + t.x0) * C];
  const T* p11 = &F.data[(static_cast<std::size_t>(t.y1) * W + t.x1) * C];
#ifdef AIDN_SIMD_VF16
  if constexpr (std::is_same_v<T, float>) {
    if (C == 16) {
      using simd::vf16;
      const vf16 a = simd::load16(p00), b = simd::load16(p01);
      const vf16 c = simd::load16(p10), d = simd::load16(p11);
      const vf16 top = a + (b - a) * t.fx;
      const vf16 bot = c + (d - c) * t.fx;
      simd::store16(out, top + (bot - top) * t.fy);
      return;
    }
  }
#endif
  for (int c = 0; c < C; ++c) {
    const T top = p00[c] + t.fx * (p01[c] - p00[c]);
    const T bot = p10[c] + t.fx * (p11[c] - p10[c]);
    out[c] = top + t.fy * (bot - top);
  }
}

/// Weighted average of the 4 nearest pixel centers; exact at integer
/// coordinates. Returns the C-vector at (x, y).
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& F, double x, double y) {
  if (F.shape.rank != 3) throw ShapeError("bilinear_sample: expected H x W x C map");
  const auto t = make_bilinear_tap<T>(F.shape[0], F.shape[1], x, y);
  Tensor<T> out({F.shape[2]});
  bilinear_sample_raw(F, t, out.ptr());
  return out;
}

/// Scatters gout back through one bilinear query; also accumulates the
/// derivatives w.r.t. the (x, y) coordinate (zero where clamped).
template <typename T>
void bilinear_sample_backward(const Tensor<T>& F, const BilinearTap<T>& t, const T* gout,
                              Tensor<T>& gF, T& gx, T& gy) {
  const int W = F.shape[1], C = F.shape[2];
  const T w00 = (T(1) - t.fy) * (T(1) - t.fx), w01 = (T(1) - t.fy) * t.fx;
  const T w10 = t.fy * (T(1) - t.fx), w11 = t.fy * t.fx;
  const std::size_t i00 = (static_cast<std::size_t>(t.y0) * W + t.x0) * C;
  const std::size_t i01 = (static_cast<std::size_t>(t.y0) * W + t.x1) * C;
  const std::size_t i10 = (static_cast<std::size_t>(t.y1) * W + t.x0) * C;
  const std::size_t i11 = (static_cast<std::size_t>(t.y1) * W + t.x1) * C;
#ifdef AIDN_SIMD_VF16
  if constexpr (std::is_same_v<T, float>) {
    if (C == 16) {
      // corner updates stay sequential: the indices coincide when clamped
      using simd::vf16;
      const vf16 g = simd::load16(gout);
      float* gp = gF.ptr();
      simd::store16(gp + i00, simd::load16(gp + i00) + g * w00);
      simd::store16(gp + i01, simd::load16(gp + i01) + g * w01);
      simd::store16(gp + i10, simd::load16(gp + i10) + g * w10);
      simd::store16(gp + i11, simd::load16(gp + i11) + g * w11);
      const vf16 a = simd::load16(&F.data[i00]), b = simd::load16(&F.data[i01]);
      const vf16 c = simd::load16(&F.data[i10]), d = simd::load16(&F.data[i11]);
      if (t.dx_active) gx += simd::hsum16(g * ((b - a) * (1.0f - t.fy) + (d - c) * t.fy));
      if (t.dy_active) gy += simd::hsum16(g * ((c - a) * (1.0f - t.fx) + (d - b) * t.fx));
      return;
    }
  }
#endif
  const T* p00 = &F.data[i00];
  const T* p01 = &F.data[i01];
  const T* p10 = &F.data[i10];
  const T* p11 = &F.data[i11];
  T* g00 = &gF.data[i00];
  T* g01 = &gF.data[i01];
  T* g10 = &gF.data[i10];
  T* g11 = &gF.data[i11];
  T ax = T(0), ay = T(0);
  for (int c = 0; c < C; ++c) {
    const T g = gout[c];
    g00[c] += w00 * g;
    g01[c] += w01 * g;
    g10[c] += w10 * g;
    g11[c] += w11 * g;
    ax += g * ((T(1) - t.fy) * (p01[c] - p00[c]) + t.fy * (p11[c] - p10[c]));
    ay += g * ((T(1) - t.fx) * (p10[c] - p00[c]) + t.fx * (p11[c] - p01[c]));
  }
  if (t.dx_active) gx += ax;
  if (t.dy_active) gy += ay;
}

// ---------------------------------------------------------------------------
// bicubic resize (cubic convolution, a = -0.5), separable, half-pixel grid
// ---------------------------------------------------------------------------

namespace detail {

inline double cubic_weight(double d) {
  d = std::abs(d);
  if (d <= 1.0) return (1.5 * d - 2.5) * d * d + 1.0;
  if (d < 2.0) return ((-0.5 * d + 2.5) * d - 4.0) * d + 2.0;
  return 0.0;
}

/// Per-output-index taps for one axis: 4 clamped source indices + weights.
struct CubicAxis {
  std::vector<int> idx;     // out * 4
  std::vector<double> w;    // out * 4
};

inline CubicAxis make_cubic_axis(int in_extent, int out_extent) {
  CubicAxis ax;
  ax.idx.resize(static_cast<std::size_t>(out_extent) * 4);
  ax.w.resize(static_cast<std::size_t>(out_extent) * 4);
  const double rate = static_cast<double>(out_extent) / static_cast<double>(in_extent);
  for (int i = 0; i < out_extent; ++i) {
    const double src = (i + 0.5) / rate - 0.5;
    const int base = static_cast<int>(std::floor(src));
    for (int m = 0; m < 4; ++m) {
      const int tap = base - 1 + m;
      ax.idx[static_cast<std::size_t>(i) * 4 + m] = std::clamp(tap, 0, in_extent - 1);
      ax.w[static_cast<std::size_t>(i) * 4 + m] = cubic_weight(src - tap);
    }
  }
  return ax;
}

}  // namespace detail

/// Cubic-convolution resampling to outH x outW. Linear in F; identity when
/// the output size equals the input size. Accumulates in double so constant
/// inputs survive exactly.
template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& F, int outH, int outW) {
  if (F.shape.rank != 3) throw ShapeError("bicubic_resize: expected H x W x C map");
  if (outH < 1 || outW < 1) throw ShapeError("bicubic_resize: non-positive output extent");
  const int H = F.shape[0], W = F.shape[1], C = F.shape[2];
  const auto ay = detail::make_cubic_axis(H, outH);
  const auto axx = detail::make_cubic_axis(W, outW);

  // horizontal pass: H x outW x C
  std::vector<double> tmp(static_cast<std::size_t>(H) * outW * C);
  for (int y = 0; y < H; ++y) {
    const T* row = &F.data[static_cast<std::size_t>(y) * W * C];
    for (int ox = 0; ox < outW; ++ox) {
      double* out = &tmp[(static_cast<std::size_t>(y) * outW + ox) * C];
      std::fill(out, out + C, 0.0);
      for (int m = 0; m < 4; ++m) {
        const int sx = axx.idx[static_cast<std::size_t>(ox) * 4 + m];
        const double w = axx.w[static_cast<std::size_t>(ox) * 4 + m];
        const T* p = row + static_cast<std::size_t>(sx) * C;
        for (int c = 0; c < C; ++c) out[c] += w * static_cast<double>(p[c]);
      }
    }
  }
  // vertical pass
  Tensor<T> out({outH, outW, C});
  std::vector<double> acc(static_cast<std::size_t>(C));
  for (int oy = 0; oy < outH; ++oy) {
    for (int ox = 0; ox < outW; ++ox) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int m = 0; m < 4; ++m) {
        const int sy = ay.idx[static_cast<std::size_t>(oy) * 4 + m];
        const double w = ay.w[static_cast<std::size_t>(oy) * 4 + m];
        const double* p = &tmp[(static_cast<std::size_t>(sy) * outW + ox) * C];
        for (int c = 0; c < C; ++c) acc[static_cast<std::size_t>(c)] += w * p[c];
      }
      T* op = &out.data[(static_cast<std::size_t>(oy) * outW + ox) * C];
      for (int c = 0; c < C; ++c) op[c] = static_cast<T>(acc[static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

/// Exact transpose of the forward resize: the same per-axis weights applied
/// as a scatter, in reverse pass order.
template <typename T>
void bicubic_resize_backward(Shape in_shape, const Tensor<T>& gout, Tensor<T>& gF) {
  const int H = in_shape[0], W = in_shape[1], C = in_shape[2];
  const int outH = gout.shape[0], outW = gout.shape[1];
  const auto ay = detail::make_cubic_axis(H, outH);
  const auto axx = detail::make_cubic_axis(W, outW);

  // transpose of the vertical pass: H x outW x C
  std::vector<double> tmp(static_cast<std::size_t>(H) * outW * C, 0.0);
  for (int oy = 0; oy < outH; ++oy) {
    for (int ox = 0; ox < outW; ++ox) {
      const T* g = &gout.data[(static_cast<std::size_t>(oy) * outW + ox) * C];
      for (int m = 0; m < 4; ++m) {
        const int sy = ay.idx[static_cast<std::size_t>(oy) * 4 + m];
        const double w = ay.w[static_cast<std::size_t>(oy) * 4 + m];
        double* p = &tmp[(static_cast<std::size_t>(sy) * outW + ox) * C];
        for (int c = 0; c < C; ++c) p[c] += w * static_cast<double>(g[c]);
      }
    }
  }
  // transpose of the horizontal pass
  for (int y = 0; y < H; ++y) {
    for (int ox = 0; ox < outW; ++ox) {
      const double* g = &tmp[(static_cast<std::size_t>(y) * outW + ox) * C];
      for (int m = 0; m < 4; ++m) {
        const int sx = axx.idx[static_cast<std::size_t>(ox) * 4 + m];
        const double w = axx.w[static_cast<std::size_t>(ox) * 4 + m];
        T* p = &gF.data[(static_cast<std::size_t>(y) * W + sx) * C];
        for (int c = 0; c < C; ++c) p[c] += static_cast<T>(w * g[c]);
      }
    }
  }
}

}  // namespace aidn
