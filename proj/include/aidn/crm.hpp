#pragma once

// Conditional resampling: maps a feature map to an arbitrary target
// resolution. For every output location the sampling offset and the mixing
// weights over a bank of expert kernels are predicted from (scale factor,
// per-axis phase, local feature vector), so the resampling adapts to both
// scale and content.
//
// Coordinate math. With rate = out_extent / in_extent, output index sigma
// projects to the input-grid coordinate
//     I(sigma) = (sigma + 0.5) / rate - 0.5
// and the phase relative to the containing input cell is
//     R(sigma) = I(sigma) - floor((sigma + 0.5) / rate),  in [-0.5, 0.5).
// One formula serves both directions: upscaling has rate > 1, downscaling
// rate < 1.
//
// Per output location (x, y):
//   1. project to (ix, iy); compute phases (Rx, Ry)
//   2. center = bilinear(F, ix, iy)
//   3. [s, Rx, Ry, center] -> FC -> ReLU -> FC -> ReLU -> two heads:
//      offset head -> tanh -> (dx, dy), bounded to (-1, 1) input pixels;
//      routing head -> softmax -> mixture weights w over n_experts
//   4. K = sum_i w[i] * experts[i], a depthwise k x k x C kernel
//   5. gather a k x k neighborhood of bilinear samples at unit input-pixel
//      spacing centered on (ix + dx, iy + dy)
//   6. out[x, y, c] = sum_taps K[tap][c] * patch[tap][c] + patch[center][c]
//
// With zero-initialized heads and a zero expert bank this reduces exactly to
// bilinear resizing on the projected grid.

#include <array>
#include <cmath>
#include <vector>

#include "aidn/autograd.hpp"
#include "aidn/ops.hpp"
#include "aidn/tensor.hpp"

namespace aidn {

enum class ResampleDirection { Downscale, Upscale };

/// Nominal scale factor plus the exact per-axis output/input extent ratios.
/// The nominal s feeds the conditioning network; the exact rates drive the
/// coordinate projection.
struct ResampleRate {
  double nominal_s = 1.0;               // in (1, 4]
  double rate_x = 1.0, rate_y = 1.0;    // out/in per axis
  ResampleDirection direction = ResampleDirection::Downscale;
};

inline double project_coordinate(int sigma, double rate) {
  return (sigma + 0.5) / rate - 0.5;
}

inline double relative_offset(int sigma, double rate) {
  const double u = (sigma + 0.5) / rate;
  return (u - 0.5) - std::floor(u);
}

template <typename T>
struct CrmParams {
  Tensor<T> fc1_w, fc1_b;          // hidden x (C+3), hidden
  Tensor<T> fc2_w, fc2_b;          // hidden x hidden
  Tensor<T> offset_w, offset_b;    // 2 x hidden, 2
  Tensor<T> routing_w, routing_b;  // n_experts x hidden, n_experts
  Tensor<T> experts;               // n_experts x k x k x C

  int channels() const { return experts.shape[3]; }
  int kernel_size() const { return experts.shape[1]; }
  int n_experts() const { return experts.shape[0]; }
  int hidden() const { return fc1_w.shape[0]; }

  static CrmParams zeros(int C, int hidden, int n_experts, int k) {
    if (k % 2 == 0) throw ShapeError("CrmParams: kernel size must be odd");
    CrmParams p;
    p.fc1_w = Tensor<T>({hidden, C + 3});
    p.fc1_b = Tensor<T>({hidden});
    p.fc2_w = Tensor<T>({hidden, hidden});
    p.fc2_b = Tensor<T>({hidden});
    p.offset_w = Tensor<T>({2, hidden});
    p.offset_b = Tensor<T>({2});
    p.routing_w = Tensor<T>({n_experts, hidden});
    p.routing_b = Tensor<T>({n_experts});
    p.experts = Tensor<T>({n_experts, k, k, C});
    return p;
  }
};

template <typename T>
struct CrmConditionOut {
  std::array<T, 2> delta;  // (dx, dy), each in (-1, 1)
  Tensor<T> weights;       // n_experts, probability vector
};

namespace detail {

// Reused per-pixel buffers for the fused resample loops, plus transposed
// copies of the FC weights so the per-pixel matvecs run as broadcast FMAs
// over a contiguous output row instead of per-row reductions.
template <typename T>
struct CrmScratch {
  std::vector<T> v, h1, h2, off, rout, w;
  std::vector<T> kern;                       // mixed kernel, k*k*C
  std::vector<T> taps;                       // gathered samples, k*k*C
  std::vector<BilinearTap<T>> tap_geom;      // k*k
  std::vector<T> fc1_wt, fc2_wt, rout_wt;    // transposed weights
  // backward-only
  std::vector<T> dkern, dtaps, dw, drout, dh2, da2, dh1, da1, dv;

  void resize(int C, int hidden, int nE, int k) {
    v.resize(static_cast<std::size_t>(C) + 3);
    h1.resize(static_cast<std::size_t>(hidden));
    h2.resize(static_cast<std::size_t>(hidden));
    off.resize(2);
    rout.resize(static_cast<std::size_t>(nE));
    w.resize(static_cast<std::size_t>(nE));
    kern.resize(static_cast<std::size_t>(k) * k * C);
    taps.resize(static_cast<std::size_t>(k) * k * C);
    tap_geom.resize(static_cast<std::size_t>(k) * k);
    fc1_wt.resize((static_cast<std::size_t>(C) + 3) * hidden);
    fc2_wt.resize(static_cast<std::size_t>(hidden) * hidden);
    rout_wt.resize(static_cast<std::size_t>(hidden) * nE);
    dkern.resize(kern.size());
    dtaps.resize(taps.size());
    dw.resize(w.size());
    drout.resize(rout.size());
    dh2.resize(h2.size());
    da2.resize(h2.size());
    dh1.resize(h1.size());
    da1.resize(h1.size());
    dv.resize(v.size());
  }

  void load(const CrmParams<T>& p) {
    resize(p.channels(), p.hidden(), p.n_experts(), p.kernel_size());
    auto transpose = [](const Tensor<T>& m, std::vector<T>& out) {
      const int rows = m.shape[0], cols = m.shape[1];
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
          out[static_cast<std::size_t>(j) * rows + i] = m.data[static_cast<std::size_t>(i) * cols + j];
    };
    transpose(p.fc1_w, fc1_wt);
    transpose(p.fc2_w, fc2_wt);
    transpose(p.routing_w, rout_wt);
  }
};

// out = bias + Wt^T-form matvec: for each input j, one FMA stream over the
// contiguous out row of the transposed weights.
template <typename T>
inline void fc_fwd_t(const T* __restrict wt, const Tensor<T>& b, const T* __restrict in, T* __restrict out,
                     int n_in, int n_out) {
  for (int i = 0; i < n_out; ++i) out[i] = b[static_cast<std::size_t>(i)];
  for (int j = 0; j < n_in; ++j) {
    const T iv = in[j];
    const T* __restrict wrow = wt + static_cast<std::size_t>(j) * n_out;
    for (int i = 0; i < n_out; ++i) out[i] += iv * wrow[i];
  }
}

template <typename T>
inline void fc_raw(const Tensor<T>& w, const Tensor<T>& b, const T* in, T* out) {
  const int m = w.shape[0], n = w.shape[1];
  for (int i = 0; i < m; ++i) {
    const T* row = &w.data[static_cast<std::size_t>(i) * n];
    T acc = b[static_cast<std::size_t>(i)];
    for (int j = 0; j < n; ++j) acc += row[j] * in[j];
    out[i] = acc;
  }
}

// gin += w^T . g ; gw += g (x) in ; gb += g
template <typename T>
inline void fc_raw_backward(const Tensor<T>& w, const T* __restrict in, const T* __restrict g,
                            T* __restrict gin, Tensor<T>& gw, Tensor<T>& gb) {
  const int m = w.shape[0], n = w.shape[1];
  const T* __restrict wp = w.ptr();
  T* __restrict gwp = gw.ptr();
  for (int i = 0; i < m; ++i) {
    const T gi = g[i];
    gb[static_cast<std::size_t>(i)] += gi;
    const T* __restrict row = wp + static_cast<std::size_t>(i) * n;
    T* __restrict grow = gwp + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      gin[j] += row[j] * gi;
      grow[j] += in[j] * gi;
    }
  }
}

template <typename T>
inline void softmax_raw(const T* in, T* out, int n) {
  T mx = in[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  T sum = T(0);
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - mx);
    sum += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= sum;
}

/// Runs the conditioning network for one location into scratch buffers.
/// Expects sc.v prefilled with [s, rx, ry, center feature]; scratch.h1/h2
/// hold post-ReLU activations, scratch.off the pre-tanh head output,
/// scratch.w the routing weights. Returns (dx, dy).
template <typename T>
inline std::array<T, 2> crm_condition_from_v(const CrmParams<T>& p, CrmScratch<T>& sc) {
  const int nE = p.n_experts(), hidden = p.hidden(), C = p.channels();
  fc_fwd_t(sc.fc1_wt.data(), p.fc1_b, sc.v.data(), sc.h1.data(), C + 3, hidden);
  for (int i = 0; i < hidden; ++i) sc.h1[static_cast<std::size_t>(i)] = relu(sc.h1[static_cast<std::size_t>(i)]);
  fc_fwd_t(sc.fc2_wt.data(), p.fc2_b, sc.h1.data(), sc.h2.data(), hidden, hidden);
  for (int i = 0; i < hidden; ++i) sc.h2[static_cast<std::size_t>(i)] = relu(sc.h2[static_cast<std::size_t>(i)]);
  fc_raw(p.offset_w, p.offset_b, sc.h2.data(), sc.off.data());
  fc_fwd_t(sc.rout_wt.data(), p.routing_b, sc.h2.data(), sc.rout.data(), hidden, nE);
  softmax_raw(sc.rout.data(), sc.w.data(), nE);
  return {std::tanh(sc.off[0]), std::tanh(sc.off[1])};
}

}  // namespace detail

/// Conditioning for one output location: offset in (-1, 1) input pixels and
/// softmax routing weights. center_feat must have C entries.
template <typename T>
CrmConditionOut<T> crm_condition(T s, T rx, T ry, const Tensor<T>& center_feat,
                                 const CrmParams<T>& p) {
  if (center_feat.shape.rank != 1 || center_feat.shape[0] != p.channels())
    throw ShapeError("crm_condition: center feature is " + center_feat.shape.str() +
                     ", expected " + std::to_string(p.channels()) + " channels");
  detail::CrmScratch<T> sc;
  sc.load(p);
  sc.v[0] = s;
  sc.v[1] = rx;
  sc.v[2] = ry;
  for (int c = 0; c < p.channels(); ++c) sc.v[static_cast<std::size_t>(3 + c)] = center_feat[static_cast<std::size_t>(c)];
  CrmConditionOut<T> out;
  out.delta = detail::crm_condition_from_v(p, sc);
  out.weights = Tensor<T>({p.n_experts()});
  for (int i = 0; i < p.n_experts(); ++i) out.weights[static_cast<std::size_t>(i)] = sc.w[static_cast<std::size_t>(i)];
  return out;
}

/// K = sum_i weights[i] * experts[i]; linear in both arguments.
template <typename T>
Tensor<T> mix_experts(const Tensor<T>& weights, const Tensor<T>& experts) {
  if (experts.shape.rank != 4) throw ShapeError("mix_experts: experts rank " + std::to_string(experts.shape.rank) + ", expected nE x k x k x C");
  if (weights.shape.rank != 1 || weights.shape[0] != experts.shape[0])
    throw ShapeError("mix_experts: weights axis " + weights.shape.str() + " vs " + std::to_string(experts.shape[0]) + " experts");
  const int nE = experts.shape[0];
  const std::size_t sz = experts.size() / static_cast<std::size_t>(nE);
  Tensor<T> k({experts.shape[1], experts.shape[2], experts.shape[3]});
  for (int i = 0; i < nE; ++i) {
    const T wi = weights[static_cast<std::size_t>(i)];
    const T* e = &experts.data[static_cast<std::size_t>(i) * sz];
    for (std::size_t j = 0; j < sz; ++j) k[j] += wi * e[j];
  }
  return k;
}

namespace detail {

template <typename T>
inline void crm_check(const Tensor<T>& F, const ResampleRate& rate, int outH, int outW,
                      const CrmParams<T>& p) {
  if (F.shape.rank != 3) throw ShapeError("crm_resample: expected H x W x C input");
  if (outH < 1 || outW < 1)
    throw ShapeError("crm_resample: non-positive output dims " + std::to_string(outH) + "x" + std::to_string(outW));
  if (rate.rate_x <= 0.0 || rate.rate_y <= 0.0) throw ShapeError("crm_resample: rates must be positive");
  if (p.channels() != F.shape[2])
    throw ShapeError("crm_resample: expert bank has " + std::to_string(p.channels()) +
                     " channels but input has " + std::to_string(F.shape[2]));
}

// Gathers the k x k neighborhood (unit input-pixel spacing) around
// (cx, cy) into sc.taps and records tap geometry for the backward pass.
template <typename T>
inline void gather_taps(const Tensor<T>& F, double cx, double cy, int k, CrmScratch<T>& sc) {
  const int C = F.shape[2];
  const int r = k / 2;
  for (int tu = 0; tu < k; ++tu) {
    for (int tv = 0; tv < k; ++tv) {
      const std::size_t t = static_cast<std::size_t>(tu) * k + tv;
      const auto tap = make_bilinear_tap<T>(F.shape[0], F.shape[1], cx + (tv - r), cy + (tu - r));
      sc.tap_geom[t] = tap;
      bilinear_sample_raw(F, tap, &sc.taps[t * static_cast<std::size_t>(C)]);
    }
  }
}

}  // namespace detail

/// Resamples F to outH x outW. Pure; per-output-pixel sums run in a fixed
/// order so results do not depend on traversal.
template <typename T>
Tensor<T> crm_resample(const Tensor<T>& F, const ResampleRate& rate, int outH, int outW,
                       const CrmParams<T>& p) {
  detail::crm_check(F, rate, outH, outW, p);
  const int C = F.shape[2], k = p.kernel_size(), nE = p.n_experts();
  const int kk = k * k, center_tap = (k / 2) * k + (k / 2);
  const T s = static_cast<T>(rate.nominal_s);

  detail::CrmScratch<T> sc;
  sc.load(p);
  const std::size_t esz = static_cast<std::size_t>(kk) * C;

  Tensor<T> out({outH, outW, C});
  for (int oy = 0; oy < outH; ++oy) {
    const double iy = project_coordinate(oy, rate.rate_y);
    const T ry = static_cast<T>(relative_offset(oy, rate.rate_y));
    for (int ox = 0; ox < outW; ++ox) {
      const double ix = project_coordinate(ox, rate.rate_x);
      const T rx = static_cast<T>(relative_offset(ox, rate.rate_x));

      const auto ctap = make_bilinear_tap<T>(F.shape[0], F.shape[1], ix, iy);
      sc.v[0] = s;
      sc.v[1] = rx;
      sc.v[2] = ry;
      bilinear_sample_raw(F, ctap, sc.v.data() + 3);
      const auto delta = detail::crm_condition_from_v(p, sc);

      T* __restrict kern = sc.kern.data();
      for (std::size_t j = 0; j < esz; ++j) kern[j] = T(0);
      for (int i = 0; i < nE; ++i) {
        const T wi = sc.w[static_cast<std::size_t>(i)];
        const T* __restrict e = &p.experts.data[static_cast<std::size_t>(i) * esz];
        for (std::size_t j = 0; j < esz; ++j) kern[j] += wi * e[j];
      }

      detail::gather_taps(F, ix + delta[0], iy + delta[1], k, sc);

      T* __restrict op = &out.data[(static_cast<std::size_t>(oy) * outW + ox) * C];
      const T* __restrict taps = sc.taps.data();
      for (int c = 0; c < C; ++c) op[c] = taps[static_cast<std::size_t>(center_tap) * C + c];
      for (int t = 0; t < kk; ++t) {
        const T* __restrict kr = kern + static_cast<std::size_t>(t) * C;
        const T* __restrict tr = taps + static_cast<std::size_t>(t) * C;
        for (int c = 0; c < C; ++c) op[c] += kr[c] * tr[c];
      }
    }
  }
  return out;
}

/// Mutable bindings for the parameter gradients of one CRM.
template <typename T>
struct CrmParamGrads {
  Tensor<T>&fc1_w, &fc1_b, &fc2_w, &fc2_b, &offset_w, &offset_b, &routing_w, &routing_b, &experts;
};

/// Reverse pass of crm_resample. Recomputes the per-pixel forward quantities
/// instead of storing them, then scatters into gF and the parameter grads.
template <typename T>
void crm_resample_backward(const Tensor<T>& F, const ResampleRate& rate, const CrmParams<T>& p,
                           const Tensor<T>& gout, Tensor<T>& gF, CrmParamGrads<T> gp) {
  detail::crm_check(F, rate, gout.shape[0], gout.shape[1], p);
  const int C = F.shape[2], k = p.kernel_size(), nE = p.n_experts(), hidden = p.hidden();
  const int kk = k * k, center_tap = (k / 2) * k + (k / 2);
  const int outH = gout.shape[0], outW = gout.shape[1];
  const T s = static_cast<T>(rate.nominal_s);
  const std::size_t esz = static_cast<std::size_t>(kk) * C;

  detail::CrmScratch<T> sc;
  sc.load(p);

  for (int oy = 0; oy < outH; ++oy) {
    const double iy = project_coordinate(oy, rate.rate_y);
    const T ry = static_cast<T>(relative_offset(oy, rate.rate_y));
    for (int ox = 0; ox < outW; ++ox) {
      const double ix = project_coordinate(ox, rate.rate_x);
      const T rx = static_cast<T>(relative_offset(ox, rate.rate_x));
      const T* g = &gout.data[(static_cast<std::size_t>(oy) * outW + ox) * C];

      // recompute forward state for this pixel
      const auto ctap = make_bilinear_tap<T>(F.shape[0], F.shape[1], ix, iy);
      sc.v[0] = s;
      sc.v[1] = rx;
      sc.v[2] = ry;
      bilinear_sample_raw(F, ctap, sc.v.data() + 3);
      const auto delta = detail::crm_condition_from_v(p, sc);
      for (std::size_t j = 0; j < esz; ++j) sc.kern[j] = T(0);
      for (int i = 0; i < nE; ++i) {
        const T wi = sc.w[static_cast<std::size_t>(i)];
        const T* e = &p.experts.data[static_cast<std::size_t>(i) * esz];
        for (std::size_t j = 0; j < esz; ++j) sc.kern[j] += wi * e[j];
      }
      detail::gather_taps(F, ix + delta[0], iy + delta[1], k, sc);

      // d(out) -> d(kern), d(taps)
      for (int t = 0; t < kk; ++t) {
        const std::size_t b = static_cast<std::size_t>(t) * C;
        for (int c = 0; c < C; ++c) {
          sc.dkern[b + c] = g[c] * sc.taps[b + c];
          sc.dtaps[b + c] = sc.kern[b + c] * g[c];
        }
      }
      {
        const std::size_t b = static_cast<std::size_t>(center_tap) * C;
        for (int c = 0; c < C; ++c) sc.dtaps[b + c] += g[c];
      }

      // kernel mixing: dw and dexperts
      for (int i = 0; i < nE; ++i) {
        const T* __restrict e = &p.experts.data[static_cast<std::size_t>(i) * esz];
        T* __restrict ge = &gp.experts.data[static_cast<std::size_t>(i) * esz];
        const T* __restrict dk = sc.dkern.data();
        const T wi = sc.w[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < esz; ++j) ge[j] += wi * dk[j];
        T a0 = T(0), a1 = T(0), a2 = T(0), a3 = T(0);
        std::size_t j = 0;
        for (; j + 4 <= esz; j += 4) {
          a0 += dk[j] * e[j];
          a1 += dk[j + 1] * e[j + 1];
          a2 += dk[j + 2] * e[j + 2];
          a3 += dk[j + 3] * e[j + 3];
        }
        for (; j < esz; ++j) a0 += dk[j] * e[j];
        sc.dw[static_cast<std::size_t>(i)] = (a0 + a1) + (a2 + a3);
      }

      // taps: scatter into gF, collect coordinate grads -> delta
      T gdx = T(0), gdy = T(0);
      for (int t = 0; t < kk; ++t)
        bilinear_sample_backward(F, sc.tap_geom[static_cast<std::size_t>(t)],
                                 &sc.dtaps[static_cast<std::size_t>(t) * C], gF, gdx, gdy);

      // routing head (softmax backward), offset head (tanh backward)
      T dot = T(0);
      for (int i = 0; i < nE; ++i) dot += sc.dw[static_cast<std::size_t>(i)] * sc.w[static_cast<std::size_t>(i)];
      for (int i = 0; i < nE; ++i)
        sc.drout[static_cast<std::size_t>(i)] = sc.w[static_cast<std::size_t>(i)] * (sc.dw[static_cast<std::size_t>(i)] - dot);
      const T doff0 = (T(1) - delta[0] * delta[0]) * gdx;
      const T doff1 = (T(1) - delta[1] * delta[1]) * gdy;
      const T doff[2] = {doff0, doff1};

      std::fill(sc.dh2.begin(), sc.dh2.end(), T(0));
      detail::fc_raw_backward(p.offset_w, sc.h2.data(), doff, sc.dh2.data(), gp.offset_w, gp.offset_b);
      detail::fc_raw_backward(p.routing_w, sc.h2.data(), sc.drout.data(), sc.dh2.data(), gp.routing_w, gp.routing_b);

      for (int i = 0; i < hidden; ++i)
        sc.da2[static_cast<std::size_t>(i)] = sc.h2[static_cast<std::size_t>(i)] > T(0) ? sc.dh2[static_cast<std::size_t>(i)] : T(0);
      std::fill(sc.dh1.begin(), sc.dh1.end(), T(0));
      detail::fc_raw_backward(p.fc2_w, sc.h1.data(), sc.da2.data(), sc.dh1.data(), gp.fc2_w, gp.fc2_b);
      for (int i = 0; i < hidden; ++i)
        sc.da1[static_cast<std::size_t>(i)] = sc.h1[static_cast<std::size_t>(i)] > T(0) ? sc.dh1[static_cast<std::size_t>(i)] : T(0);
      std::fill(sc.dv.begin(), sc.dv.end(), T(0));
      detail::fc_raw_backward(p.fc1_w, sc.v.data(), sc.da1.data(), sc.dv.data(), gp.fc1_w, gp.fc1_b);

      // conditioning center feature: dv[3..] back through its bilinear tap.
      // (s, Rx, Ry are data, and the projected coordinates depend only on the
      // output index, so those components stop here.)
      T unused_x = T(0), unused_y = T(0);
      bilinear_sample_backward(F, ctap, sc.dv.data() + 3, gF, unused_x, unused_y);
    }
  }
}

/// Vars for one CRM's parameters on a tape.
template <typename T>
struct CrmVars {
  Var fc1_w, fc1_b, fc2_w, fc2_b, offset_w, offset_b, routing_w, routing_b, experts;
};

namespace ag {

/// Fused tape node for the whole resample; the backward recomputes per-pixel
/// state rather than storing it.
template <typename T>
Var crm_resample(Tape<T>& tp, Var F, const ResampleRate& rate, int outH, int outW,
                 const CrmVars<T>& pv) {
  CrmParams<T> p;
  p.fc1_w = tp.val(pv.fc1_w);
  p.fc1_b = tp.val(pv.fc1_b);
  p.fc2_w = tp.val(pv.fc2_w);
  p.fc2_b = tp.val(pv.fc2_b);
  p.offset_w = tp.val(pv.offset_w);
  p.offset_b = tp.val(pv.offset_b);
  p.routing_w = tp.val(pv.routing_w);
  p.routing_b = tp.val(pv.routing_b);
  p.experts = tp.val(pv.experts);
  Tensor<T> out = aidn::crm_resample(tp.val(F), rate, outH, outW, p);
  return tp.record(std::move(out), [F, rate, pv](Tape<T>& t, const Tensor<T>& g) {
    CrmParams<T> p;
    p.fc1_w = t.val(pv.fc1_w);
    p.fc1_b = t.val(pv.fc1_b);
    p.fc2_w = t.val(pv.fc2_w);
    p.fc2_b = t.val(pv.fc2_b);
    p.offset_w = t.val(pv.offset_w);
    p.offset_b = t.val(pv.offset_b);
    p.routing_w = t.val(pv.routing_w);
    p.routing_b = t.val(pv.routing_b);
    p.experts = t.val(pv.experts);
    CrmParamGrads<T> gp{t.grad_buf(pv.fc1_w),   t.grad_buf(pv.fc1_b),   t.grad_buf(pv.fc2_w),
                        t.grad_buf(pv.fc2_b),   t.grad_buf(pv.offset_w), t.grad_buf(pv.offset_b),
                        t.grad_buf(pv.routing_w), t.grad_buf(pv.routing_b), t.grad_buf(pv.experts)};
    crm_resample_backward(t.val(F), rate, p, g, t.grad_buf(F), gp);
  });
}

}  // namespace ag
}  // namespace aidn
