#pragma once

// The full rescaling system: encoder = feature extraction -> CRM downscale ->
// tail conv -> + bicubic skip -> 8-bit quantize; decoder = feature extraction
// -> CRM upscale -> tail conv -> + bicubic skip. With every learnable
// parameter at zero the system degenerates exactly to bicubic-down ->
// quantize -> bicubic-up, which anchors the tests.
//
// Model code is written once against an engine: PureEngine evaluates plain
// tensors (inference), TapeEngine records onto a Tape for reverse-mode
// gradients (training, gradient checks).

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "aidn/autograd.hpp"
#include "aidn/crm.hpp"
#include "aidn/ops.hpp"
#include "aidn/scale_spec.hpp"
#include "aidn/tensor.hpp"

namespace aidn {

// --- parameters -------------------------------------------------------------

template <typename T>
struct ResBlockParams {
  Tensor<T> conv1_w, conv1_b;  // k x k x C x C, C
  Tensor<T> conv2_w, conv2_b;
  Tensor<T> mod_w, mod_b;      // 2C x 1, 2C : per-channel (gain, bias) from s
};

template <typename T>
struct ExtractorParams {
  Tensor<T> head_w, head_b;  // k x k x 3 x C, C
  std::vector<ResBlockParams<T>> blocks;
};

template <typename T>
struct SubnetParams {
  ExtractorParams<T> extractor;
  CrmParams<T> crm;
  Tensor<T> tail_w, tail_b;  // k x k x C x 3, 3
};

struct Hyper {
  int channels = 16;
  int blocks = 4;
  int experts = 8;
  int kernel = 3;
  int hidden = 64;

  bool operator==(const Hyper&) const = default;
};

template <typename T>
struct ModelState {
  SubnetParams<T> encoder, decoder;
  Hyper hyper;

  static ModelState zeros(const Hyper& h) {
    ModelState m;
    m.hyper = h;
    for (SubnetParams<T>* sn : {&m.encoder, &m.decoder}) {
      sn->extractor.head_w = Tensor<T>({h.kernel, h.kernel, 3, h.channels});
      sn->extractor.head_b = Tensor<T>({h.channels});
      sn->extractor.blocks.resize(static_cast<std::size_t>(h.blocks));
      for (auto& b : sn->extractor.blocks) {
        b.conv1_w = Tensor<T>({h.kernel, h.kernel, h.channels, h.channels});
        b.conv1_b = Tensor<T>({h.channels});
        b.conv2_w = Tensor<T>({h.kernel, h.kernel, h.channels, h.channels});
        b.conv2_b = Tensor<T>({h.channels});
        b.mod_w = Tensor<T>({2 * h.channels, 1});
        b.mod_b = Tensor<T>({2 * h.channels});
      }
      sn->crm = CrmParams<T>::zeros(h.channels, h.hidden, h.experts, h.kernel);
      sn->tail_w = Tensor<T>({h.kernel, h.kernel, h.channels, 3});
      sn->tail_b = Tensor<T>({3});
    }
    return m;
  }
};

/// Canonical parameter walk. Checkpointing, the optimizer and the tape
/// registry all rely on this single ordering.
template <typename T, typename F>
void visit_params(ModelState<T>& m, F&& f) {
  auto subnet = [&](const std::string& prefix, SubnetParams<T>& sn) {
    f(prefix + ".extractor.head.w", sn.extractor.head_w);
    f(prefix + ".extractor.head.b", sn.extractor.head_b);
    for (std::size_t i = 0; i < sn.extractor.blocks.size(); ++i) {
      auto& b = sn.extractor.blocks[i];
      const std::string bp = prefix + ".extractor.block" + std::to_string(i);
      f(bp + ".conv1.w", b.conv1_w);
      f(bp + ".conv1.b", b.conv1_b);
      f(bp + ".conv2.w", b.conv2_w);
      f(bp + ".conv2.b", b.conv2_b);
      f(bp + ".mod.w", b.mod_w);
      f(bp + ".mod.b", b.mod_b);
    }
    f(prefix + ".crm.fc1.w", sn.crm.fc1_w);
    f(prefix + ".crm.fc1.b", sn.crm.fc1_b);
    f(prefix + ".crm.fc2.w", sn.crm.fc2_w);
    f(prefix + ".crm.fc2.b", sn.crm.fc2_b);
    f(prefix + ".crm.offset.w", sn.crm.offset_w);
    f(prefix + ".crm.offset.b", sn.crm.offset_b);
    f(prefix + ".crm.routing.w", sn.crm.routing_w);
    f(prefix + ".crm.routing.b", sn.crm.routing_b);
    f(prefix + ".crm.experts", sn.crm.experts);
    f(prefix + ".tail.w", sn.tail_w);
    f(prefix + ".tail.b", sn.tail_b);
  };
  subnet("encoder", m.encoder);
  subnet("decoder", m.decoder);
}

template <typename T, typename F>
void visit_params(const ModelState<T>& m, F&& f) {
  visit_params(const_cast<ModelState<T>&>(m),
               [&f](const std::string& n, Tensor<T>& t) { f(n, static_cast<const Tensor<T>&>(t)); });
}

/// Training start point: He-uniform extractor and conditioning layers, zero
/// heads and expert bank (the CRMs begin as exact bilinear resamplers), zero
/// tails (the residual paths start silent), gain 1 / bias 0 modulation.
template <typename T>
ModelState<T> init_random(const Hyper& h, std::mt19937& rng) {
  ModelState<T> m = ModelState<T>::zeros(h);
  auto he_fill = [&rng](Tensor<T>& t, int fan_in) {
    const double lim = std::sqrt(6.0 / fan_in);
    for (auto& v : t.data) v = static_cast<T>(rand_uniform(rng, -lim, lim));
  };
  for (SubnetParams<T>* sn : {&m.encoder, &m.decoder}) {
    he_fill(sn->extractor.head_w, h.kernel * h.kernel * 3);
    for (auto& b : sn->extractor.blocks) {
      he_fill(b.conv1_w, h.kernel * h.kernel * h.channels);
      he_fill(b.conv2_w, h.kernel * h.kernel * h.channels);
      for (int c = 0; c < h.channels; ++c) b.mod_b[static_cast<std::size_t>(c)] = T(1);
    }
    he_fill(sn->crm.fc1_w, h.channels + 3);
    he_fill(sn->crm.fc2_w, h.hidden);
  }
  return m;
}

// --- quantizer ---------------------------------------------------------------

struct QuantizerConfig {
  double alpha = 0.5;  // soft-round amplitude, in [0, 1]
};

enum class QuantMode {
  Hard,  // round() forward, soft-round derivative backward
  Soft   // soft-round forward too; used by finite-difference checks
};

/// x - alpha * sin(2 pi x) / (2 pi): fixed points at integers, derivative
/// 1 - alpha * cos(2 pi x).
template <typename T>
inline T soft_round(T x, T alpha) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  return x - alpha * static_cast<T>(std::sin(two_pi * static_cast<double>(x)) / two_pi);
}

template <typename T>
inline T soft_round_derivative(T x, T alpha) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  return T(1) - alpha * static_cast<T>(std::cos(two_pi * static_cast<double>(x)));
}

/// Forward: round(255 * clamp(x, 0, 1)) / 255, ties away from zero. The
/// surrogate derivative is evaluated in the 255-scaled domain and gated to
/// zero outside [0, 1].
template <typename T>
Tensor<T> quantize(const Tensor<T>& x, double alpha, QuantMode mode = QuantMode::Hard) {
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double c = std::clamp(static_cast<double>(x[i]), 0.0, 1.0);
    if (mode == QuantMode::Hard) {
      out[i] = static_cast<T>(std::round(255.0 * c) / 255.0);
    } else {
      out[i] = static_cast<T>(soft_round(255.0 * c, alpha) / 255.0);
    }
  }
  return out;
}

template <typename T>
void quantize_backward(const Tensor<T>& x, double alpha, const Tensor<T>& gout, Tensor<T>& gx) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    if (v < 0.0 || v > 1.0) continue;
    gx[i] += gout[i] * static_cast<T>(soft_round_derivative(255.0 * v, alpha));
  }
}

namespace ag {

template <typename T>
Var quantize(Tape<T>& tp, Var x, double alpha, QuantMode mode) {
  Tensor<T> out = aidn::quantize(tp.val(x), alpha, mode);
  return tp.record(std::move(out), [x, alpha](Tape<T>& t, const Tensor<T>& g) {
    quantize_backward(t.val(x), alpha, g, t.grad_buf(x));
  });
}

}  // namespace ag

// --- geometry ----------------------------------------------------------------

struct LrDims {
  int out_h = 0, out_w = 0;
  double rate_x = 0.0, rate_y = 0.0;  // out/in, < 1 when downscaling
};

/// floor(extent / s), with a 1e-9 nudge so mathematically integer quotients
/// are not lost to binary representation dust. Never exceeds extent / s, so
/// a cap computed upstream stays honored.
inline int scaled_extent(int extent, double s) {
  return static_cast<int>(std::floor(static_cast<double>(extent) / s + 1e-9));
}

inline LrDims lr_dims(int H, int W, double s) {
  if (!(s > 1.0 && s <= 4.0)) throw Error("lr_dims: scale " + std::to_string(s) + " outside (1, 4]");
  if (H < 8 || W < 8) throw Error("lr_dims: input " + std::to_string(H) + "x" + std::to_string(W) + " too small (min 8)");
  LrDims d;
  d.out_h = scaled_extent(H, s);
  d.out_w = scaled_extent(W, s);
  if (d.out_h < 4 || d.out_w < 4)
    throw Error("lr_dims: degenerate output " + std::to_string(d.out_h) + "x" + std::to_string(d.out_w) + " (min 4 px per side)");
  d.rate_x = static_cast<double>(d.out_w) / W;
  d.rate_y = static_cast<double>(d.out_h) / H;
  return d;
}

// --- engines -----------------------------------------------------------------

/// Plain-tensor evaluation; no gradients, nothing retained.
template <typename T>
struct PureEngine {
  using Val = Tensor<T>;

  Val p(const Tensor<T>& t) { return t; }
  Val constant(Tensor<T> t) { return t; }
  Val conv2d(const Val& x, const Val& w, const Val& b) { return aidn::conv2d(x, w, b); }
  Val relu(const Val& x) { return aidn::relu(x); }
  Val add(const Val& a, const Val& b) {
    detail::check_same_shape(a.shape, b.shape, "add");
    Val out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
  }
  Val fully_connected(const Val& v, const Val& w, const Val& b) { return aidn::fully_connected(v, w, b); }
  Val modulated_residual(const Val& x, const Val& y, const Val& gb) {
    const int C = x.shape[2];
    Val out(x.shape);
    const std::size_t pixels = x.size() / static_cast<std::size_t>(C);
    for (std::size_t p = 0; p < pixels; ++p)
      for (int c = 0; c < C; ++c)
        out[p * C + c] = x[p * C + c] + gb[static_cast<std::size_t>(c)] * y[p * C + c] + gb[static_cast<std::size_t>(C + c)];
    return out;
  }
  Val bicubic_resize(const Val& x, int oh, int ow) { return aidn::bicubic_resize(x, oh, ow); }
  Val crm_resample(const Val& x, const ResampleRate& r, int oh, int ow, const CrmParams<T>& cp) {
    return aidn::crm_resample(x, r, oh, ow, cp);
  }
  Val quantize(const Val& x, double alpha, QuantMode mode) { return aidn::quantize(x, alpha, mode); }
};

/// Tape-recording evaluation. Register the model once; p() resolves each
/// parameter tensor to its Var by address.
template <typename T>
struct TapeEngine {
  using Val = Var;

  Tape<T>& tape;
  std::unordered_map<const void*, Var> registry;
  std::vector<Var> ordered;  // visit_params order, for gradient readout

  TapeEngine(Tape<T>& t, ModelState<T>& m) : tape(t) {
    visit_params(m, [this](const std::string&, Tensor<T>& p) {
      const Var v = tape.leaf(p);
      registry.emplace(static_cast<const void*>(&p), v);
      ordered.push_back(v);
    });
  }

  Var p(const Tensor<T>& t) {
    auto it = registry.find(static_cast<const void*>(&t));
    if (it == registry.end()) throw Error("TapeEngine: parameter tensor not registered");
    return it->second;
  }
  Var constant(Tensor<T> t) { return tape.leaf(std::move(t)); }
  Var conv2d(Var x, Var w, Var b) { return aidn::ag::conv2d(tape, x, w, b); }
  Var relu(Var x) { return aidn::ag::relu(tape, x); }
  Var add(Var a, Var b) { return aidn::ag::add(tape, a, b); }
  Var fully_connected(Var v, Var w, Var b) { return aidn::ag::fully_connected(tape, v, w, b); }
  Var modulated_residual(Var x, Var y, Var gb) { return aidn::ag::modulated_residual(tape, x, y, gb); }
  Var bicubic_resize(Var x, int oh, int ow) { return aidn::ag::bicubic_resize(tape, x, oh, ow); }
  Var crm_resample(Var x, const ResampleRate& r, int oh, int ow, const CrmParams<T>& cp) {
    CrmVars<T> pv{p(cp.fc1_w),    p(cp.fc1_b),    p(cp.fc2_w),    p(cp.fc2_b), p(cp.offset_w),
                  p(cp.offset_b), p(cp.routing_w), p(cp.routing_b), p(cp.experts)};
    return aidn::ag::crm_resample(tape, x, r, oh, ow, pv);
  }
  Var quantize(Var x, double alpha, QuantMode mode) { return aidn::ag::quantize(tape, x, alpha, mode); }
};

// --- model forward ------------------------------------------------------------

/// Head conv, then n residual blocks; each block adds gain(s) (.) conv2(
/// relu(conv1(x))) + bias(s), with (gain, bias) predicted from the scalar s.
template <typename T, typename E>
typename E::Val extract_features(E& eng, typename E::Val img, double s,
                                 const ExtractorParams<T>& p) {
  auto h = eng.conv2d(img, eng.p(p.head_w), eng.p(p.head_b));
  auto sv = eng.constant(Tensor<T>({1}, {static_cast<T>(s)}));
  for (const auto& b : p.blocks) {
    auto a = eng.relu(eng.conv2d(h, eng.p(b.conv1_w), eng.p(b.conv1_b)));
    auto c2 = eng.conv2d(a, eng.p(b.conv2_w), eng.p(b.conv2_b));
    auto gb = eng.fully_connected(sv, eng.p(b.mod_w), eng.p(b.mod_b));
    h = eng.modulated_residual(h, c2, gb);
  }
  return h;
}

template <typename V>
struct EncodeOut {
  V lr;         // on the 8-bit lattice
  V pre_quant;  // guidance-loss operand
  LrDims dims;
  ScaleSpec spec;
};

template <typename T, typename E>
EncodeOut<typename E::Val> encode_full(E& eng, typename E::Val hr, int H, int W, double s,
                                       const ModelState<T>& m, const QuantizerConfig& qc,
                                       QuantMode mode) {
  const LrDims d = lr_dims(H, W, s);
  auto F = extract_features(eng, hr, s, m.encoder.extractor);
  const ResampleRate rate{s, d.rate_x, d.rate_y, ResampleDirection::Downscale};
  auto D = eng.crm_resample(F, rate, d.out_h, d.out_w, m.encoder.crm);
  auto res = eng.conv2d(D, eng.p(m.encoder.tail_w), eng.p(m.encoder.tail_b));
  auto skip = eng.bicubic_resize(hr, d.out_h, d.out_w);
  auto pre = eng.add(res, skip);
  auto q = eng.quantize(pre, qc.alpha, mode);
  return {q, pre, d, ScaleSpec{s, W, H, 1}};
}

template <typename T, typename E>
typename E::Val decode_full(E& eng, typename E::Val lr, int h, int w, const ScaleSpec& spec,
                            const ModelState<T>& m) {
  if (spec.orig_h < h || spec.orig_w < w)
    throw Error("decode: original dims " + std::to_string(spec.orig_w) + "x" + std::to_string(spec.orig_h) +
                " smaller than the LR image");
  auto F = extract_features(eng, lr, spec.nominal_s, m.decoder.extractor);
  const ResampleRate rate{spec.nominal_s, static_cast<double>(spec.orig_w) / w,
                          static_cast<double>(spec.orig_h) / h, ResampleDirection::Upscale};
  auto U = eng.crm_resample(F, rate, spec.orig_h, spec.orig_w, m.decoder.crm);
  auto res = eng.conv2d(U, eng.p(m.decoder.tail_w), eng.p(m.decoder.tail_b));
  auto skip = eng.bicubic_resize(lr, spec.orig_h, spec.orig_w);
  return eng.add(res, skip);
}

// Plain-tensor entry points.

template <typename T>
struct Encoded {
  Tensor<T> lr;
  Tensor<T> pre_quant;
  ScaleSpec spec;
};

template <typename T>
Encoded<T> encode(const Tensor<T>& hr, double s, const ModelState<T>& m,
                  const QuantizerConfig& qc = {}) {
  if (hr.shape.rank != 3 || hr.shape[2] != 3) throw ShapeError("encode: expected H x W x 3 image tensor");
  PureEngine<T> eng;
  auto out = encode_full(eng, hr, hr.shape[0], hr.shape[1], s, m, qc, QuantMode::Hard);
  return {std::move(out.lr), std::move(out.pre_quant), out.spec};
}

/// Pre-clamp reconstruction; clamp to [0, 1] only when exporting.
template <typename T>
Tensor<T> decode(const Tensor<T>& lr, const ScaleSpec& spec, const ModelState<T>& m) {
  if (lr.shape.rank != 3 || lr.shape[2] != 3) throw ShapeError("decode: expected h x w x 3 image tensor");
  if (!(spec.nominal_s > 1.0 && spec.nominal_s <= 4.0))
    throw Error("decode: scale " + std::to_string(spec.nominal_s) + " outside (1, 4]");
  PureEngine<T> eng;
  return decode_full(eng, lr, lr.shape[0], lr.shape[1], spec, m);
}

template <typename T>
Tensor<T> clamp01(const Tensor<T>& x) {
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i], T(0), T(1));
  return out;
}

}  // namespace aidn
