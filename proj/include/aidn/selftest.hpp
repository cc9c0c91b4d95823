#pragma once

// The canned gradient-check suite behind `aidn gradcheck`: every registered
// differentiable primitive at double and single precision, the full
// conditional resample, and the end-to-end training loss through the
// quantizer surrogate. Deterministic; each entry prints as one line.

#include <string>
#include <vector>

#include "aidn/gradcheck.hpp"
#include "aidn/model.hpp"
#include "aidn/training.hpp"

namespace aidn {

struct NamedReport {
  std::string name;
  GradCheckReport report;
};

namespace detail {

template <typename T>
GradCheckReport check_conv2d(double h, double tol) {
  std::mt19937 rng(11);
  std::vector<Tensor<T>> inputs{random_tensor<T>({5, 5, 2}, rng), random_tensor<T>({3, 3, 2, 3}, rng),
                                random_tensor<T>({3}, rng)};
  return run_tape_gradcheck<T>(
      [](Tape<T>& tp, const std::vector<Var>& v) { return ag::conv2d(tp, v[0], v[1], v[2]); },
      std::move(inputs), h, tol);
}

template <typename T>
GradCheckReport check_fully_connected(double h, double tol) {
  std::mt19937 rng(12);
  std::vector<Tensor<T>> inputs{random_tensor<T>({4}, rng), random_tensor<T>({3, 4}, rng),
                                random_tensor<T>({3}, rng)};
  return run_tape_gradcheck<T>(
      [](Tape<T>& tp, const std::vector<Var>& v) { return ag::fully_connected(tp, v[0], v[1], v[2]); },
      std::move(inputs), h, tol);
}

template <typename T>
GradCheckReport check_softmax(double h, double tol) {
  std::mt19937 rng(13);
  std::vector<Tensor<T>> inputs{random_tensor<T>({6}, rng)};
  return run_tape_gradcheck<T>(
      [](Tape<T>& tp, const std::vector<Var>& v) { return ag::softmax(tp, v[0]); },
      std::move(inputs), h, tol);
}

template <typename T>
GradCheckReport check_bicubic_resize(double h, double tol) {
  std::mt19937 rng(14);
  std::vector<Tensor<T>> inputs{random_tensor<T>({5, 6, 2}, rng)};
  return run_tape_gradcheck<T>(
      [](Tape<T>& tp, const std::vector<Var>& v) { return ag::bicubic_resize(tp, v[0], 8, 7); },
      std::move(inputs), h, tol);
}

// bilinear_sample is checked directly (no tape node): inputs are the map and
// a 2-vector holding the sample coordinate, kept away from the integer
// lattice where the interpolant has kinks.
template <typename T>
GradCheckReport check_bilinear_sample(double h, double tol) {
  std::mt19937 rng(15);
  const int H = 4, W = 5, C = 3;
  std::vector<Tensor<T>> inputs{random_tensor<T>({H, W, C}, rng),
                                Tensor<T>({2}, {T(1.3), T(1.6)})};
  Tensor<T> proj = random_tensor<T>({C}, rng);
  auto f = [proj, H, W, C](const std::vector<Tensor<T>>& ins) {
    const Tensor<T> out =
        bilinear_sample(ins[0], static_cast<double>(ins[1][0]), static_cast<double>(ins[1][1]));
    double acc = 0.0;
    for (int c = 0; c < C; ++c) acc += static_cast<double>(proj[static_cast<std::size_t>(c)]) * static_cast<double>(out[static_cast<std::size_t>(c)]);
    return acc;
  };
  auto g = [proj, H, W](const std::vector<Tensor<T>>& ins) {
    Tensor<T> gF(ins[0].shape);
    T gx = T(0), gy = T(0);
    const auto tap = make_bilinear_tap<T>(H, W, static_cast<double>(ins[1][0]), static_cast<double>(ins[1][1]));
    bilinear_sample_backward(ins[0], tap, proj.ptr(), gF, gx, gy);
    return std::vector<Tensor<T>>{std::move(gF), Tensor<T>({2}, {gx, gy})};
  };
  return grad_check<T>(f, g, std::move(inputs), h, tol);
}

/// Single-precision reverse pass vs double-path finite differences.
inline GradCheckReport check_crm_resample(double h, double tol) {
  const int C = 4, hidden = 16, nE = 4, k = 3;
  std::mt19937 rng(24);
  CrmParams<float> shape_ref = CrmParams<float>::zeros(C, hidden, nE, k);
  std::vector<TensorF> inputs;
  inputs.push_back(random_tensor<float>({8, 8, C}, rng, -0.6, 0.6));
  for (const TensorF* t : {&shape_ref.fc1_w, &shape_ref.fc1_b, &shape_ref.fc2_w, &shape_ref.fc2_b,
                           &shape_ref.offset_w, &shape_ref.offset_b, &shape_ref.routing_w,
                           &shape_ref.routing_b, &shape_ref.experts})
    inputs.push_back(random_tensor<float>(t->shape, rng, -0.5, 0.5));

  const ResampleRate rate{1.7, 14.0 / 8.0, 14.0 / 8.0, ResampleDirection::Upscale};
  auto build = [rate]<typename T>(Tape<T>& tp, const std::vector<Var>& v) {
    const CrmVars<T> pv{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
    return ag::crm_resample(tp, v[0], rate, 14, 14, pv);
  };
  return run_mixed_gradcheck(build, std::move(inputs), h, tol);
}

/// total_loss over a tiny model, quantizer surrogate in the forward pass so
/// the finite differences see the same smooth function the backward uses.
/// Single-precision reverse pass vs double-path finite differences.
inline GradCheckReport check_end_to_end(double h, double tol) {
  Hyper hyper{4, 1, 2, 3, 8};
  std::mt19937 rng(17);
  ModelState<float> seed_model = init_random<float>(hyper, rng);
  // perturb heads/experts/tails away from zero so every path is exercised
  visit_params(seed_model, [&rng](const std::string&, TensorF& t) {
    for (auto& v : t.data) v += static_cast<float>(rand_uniform(rng, -0.05, 0.05));
  });

  std::vector<TensorF> inputs;
  visit_params(seed_model, [&inputs](const std::string&, TensorF& t) { inputs.push_back(t); });

  const TensorF hr = random_tensor<float>({12, 12, 3}, rng, 0.05, 0.95);
  const double s = 2.0;
  const QuantizerConfig qc{0.5};

  auto run = [hyper, hr, s, qc]<typename T>(Tape<T>& tp, const std::vector<Tensor<T>>& param_values,
                                            std::vector<Var>* param_vars_out) {
    ModelState<T> m = ModelState<T>::zeros(hyper);
    std::size_t i = 0;
    visit_params(m, [&](const std::string&, Tensor<T>& t) { t = param_values[i++]; });
    TapeEngine<T> eng(tp, m);
    if (param_vars_out) *param_vars_out = eng.ordered;
    const Tensor<T> hr_t = cast_tensor<float, T>(hr);
    const Var hrv = tp.leaf(hr_t);
    auto enc = encode_full(eng, hrv, hr.shape[0], hr.shape[1], s, m, qc, QuantMode::Soft);
    const Tensor<T> ref = bicubic_resize(hr_t, enc.dims.out_h, enc.dims.out_w);
    const Var lg = ag::mse_to_const(tp, enc.pre_quant, ref);
    const Var dec = decode_full(eng, enc.lr, enc.dims.out_h, enc.dims.out_w, enc.spec, m);
    const Var li = ag::mae_to_const(tp, dec, hr_t);
    return ag::weighted_sum(tp, T(1), lg, li);
  };

  auto f = [&run](const std::vector<TensorF>& ins) {
    Tape<double> tp;
    std::vector<TensorD> dins;
    dins.reserve(ins.size());
    for (const auto& t : ins) dins.push_back(cast_tensor<float, double>(t));
    const Var total = run(tp, dins, nullptr);
    return tp.val(total)[0];
  };
  auto g = [&run](const std::vector<TensorF>& ins) {
    Tape<float> tp;
    std::vector<Var> vars;
    const Var total = run(tp, ins, &vars);
    tp.backward(total);
    std::vector<TensorF> gs;
    gs.reserve(vars.size());
    for (const Var v : vars) gs.push_back(tp.grad(v));
    return gs;
  };
  return grad_check<float>(f, g, std::move(inputs), h, tol);
}

}  // namespace detail

/// The full oracle suite. Primitives run at double precision (tol 1e-5,
/// tighter where the op is exactly linear) and again at single precision
/// (tol 1e-2); the conditional resample at 1e-3 and the end-to-end loss at
/// 1e-2, both single precision.
inline std::vector<NamedReport> gradcheck_suite() {
  std::vector<NamedReport> out;
  out.push_back({"fully_connected/f64", detail::check_fully_connected<double>(1e-6, 1e-6)});
  out.push_back({"conv2d/f64", detail::check_conv2d<double>(1e-6, 1e-6)});
  out.push_back({"softmax/f64", detail::check_softmax<double>(1e-6, 1e-5)});
  out.push_back({"bilinear_sample/f64", detail::check_bilinear_sample<double>(1e-6, 1e-5)});
  out.push_back({"bicubic_resize/f64", detail::check_bicubic_resize<double>(1e-6, 1e-5)});
  out.push_back({"fully_connected/f32", detail::check_fully_connected<float>(1e-2, 1e-2)});
  out.push_back({"conv2d/f32", detail::check_conv2d<float>(1e-2, 1e-2)});
  out.push_back({"softmax/f32", detail::check_softmax<float>(1e-2, 1e-2)});
  out.push_back({"bilinear_sample/f32", detail::check_bilinear_sample<float>(1e-2, 1e-2)});
  out.push_back({"bicubic_resize/f32", detail::check_bicubic_resize<float>(1e-2, 1e-2)});
  out.push_back({"crm_resample/f32", detail::check_crm_resample(1e-4, 1e-3)});
  out.push_back({"end_to_end_loss/f32", detail::check_end_to_end(1e-4, 1e-2)});
  return out;
}

inline bool all_pass(const std::vector<NamedReport>& reports) {
  for (const auto& r : reports)
    if (!r.report.pass) return false;
  return true;
}

}  // namespace aidn
