#pragma once

// Central finite-difference oracle for reverse-mode gradients. The checked
// function must be scalar-valued; tensor-valued ops are reduced with a fixed
// random projection first (see ag::project_to_scalar).

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "aidn/autograd.hpp"
#include "aidn/tensor.hpp"

namespace aidn {

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  double grad_scale = 0.0;  // largest |gradient| seen across all inputs
  int worst_arg = -1;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::string note;  // set on non-finite values, with the offending location

  std::string str() const {
    std::ostringstream os;
    os << (pass ? "PASS" : "FAIL") << " max_rel_err=" << max_rel_err << " at arg " << worst_arg
       << " index " << worst_index << " (" << checked << " elements, grad scale " << grad_scale << ")";
    if (!note.empty()) os << " note: " << note;
    return os.str();
  }
};

/// Compares analytic gradients against (f(x+h) - f(x-h)) / 2h over every
/// element of every input tensor. Errors are measured relative to the
/// largest gradient magnitude across all inputs: at single precision the
/// difference quotient carries storage noise that would swamp a per-element
/// quotient on near-zero components, while any real backward defect shows up
/// at the scale of the gradient itself.
template <typename T>
GradCheckReport grad_check(const std::function<double(const std::vector<Tensor<T>>&)>& f,
                           const std::function<std::vector<Tensor<T>>(const std::vector<Tensor<T>>&)>& analytic,
                           std::vector<Tensor<T>> inputs, double h, double tol) {
  GradCheckReport rep;

  std::vector<Tensor<T>> an = analytic(inputs);
  if (an.size() != inputs.size()) throw ShapeError("grad_check: analytic gradient count mismatch");

  std::vector<Tensor<double>> fd;
  fd.reserve(inputs.size());
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    Tensor<double> g(inputs[a].shape);
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      const T keep = inputs[a][i];
      const T xp = keep + static_cast<T>(h);
      const T xm = keep - static_cast<T>(h);
      inputs[a][i] = xp;
      const double fp = f(inputs);
      inputs[a][i] = xm;
      const double fm = f(inputs);
      inputs[a][i] = keep;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        rep.note = "non-finite function value at arg " + std::to_string(a) + " index " + std::to_string(i);
        rep.pass = false;
        return rep;
      }
      // the step actually realized in T, not the nominal h
      g[i] = (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
    }
    fd.push_back(std::move(g));
  }

  double gmax = 0.0;
  for (std::size_t a = 0; a < inputs.size(); ++a)
    for (std::size_t i = 0; i < an[a].size(); ++i) {
      if (!std::isfinite(static_cast<double>(an[a][i]))) {
        rep.note = "non-finite analytic gradient at arg " + std::to_string(a) + " index " + std::to_string(i);
        rep.pass = false;
        return rep;
      }
      gmax = std::max({gmax, std::abs(static_cast<double>(an[a][i])), std::abs(fd[a][i])});
    }
  rep.grad_scale = gmax;

  const double tiny = std::is_same_v<T, float> ? 1e-6 : 1e-12;
  const double denom = std::max(gmax, tiny);

  for (std::size_t a = 0; a < inputs.size(); ++a) {
    for (std::size_t i = 0; i < an[a].size(); ++i) {
      const double rel = std::abs(static_cast<double>(an[a][i]) - fd[a][i]) / denom;
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_arg = static_cast<int>(a);
        rep.worst_index = i;
      }
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

/// Tape-driven convenience: `build` assembles an op graph from input Vars;
/// the output is reduced to a scalar with a fixed random projection and
/// checked against the tape's reverse pass.
template <typename T, typename Build>
GradCheckReport run_tape_gradcheck(Build&& build, std::vector<Tensor<T>> inputs, double h,
                                   double tol, std::uint32_t proj_seed = 7) {
  Tensor<T> proj;
  {
    Tape<T> tp;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (auto& t : inputs) vars.push_back(tp.leaf(t));
    const Var out = build(tp, vars);
    std::mt19937 rng(proj_seed);
    proj = random_tensor<T>(tp.val(out).shape, rng, -1.0, 1.0);
  }
  auto f = [&](const std::vector<Tensor<T>>& ins) {
    Tape<T> tp;
    std::vector<Var> vars;
    vars.reserve(ins.size());
    for (const auto& t : ins) vars.push_back(tp.leaf(t));
    const Var out = build(tp, vars);
    const Var s = ag::project_to_scalar(tp, out, proj);
    return static_cast<double>(tp.val(s)[0]);
  };
  auto g = [&](const std::vector<Tensor<T>>& ins) {
    Tape<T> tp;
    std::vector<Var> vars;
    vars.reserve(ins.size());
    for (const auto& t : ins) vars.push_back(tp.leaf(t));
    const Var out = build(tp, vars);
    const Var s = ag::project_to_scalar(tp, out, proj);
    tp.backward(s);
    std::vector<Tensor<T>> gs;
    gs.reserve(vars.size());
    for (const Var v : vars) gs.push_back(tp.grad(v));
    return gs;
  };
  return grad_check<T>(f, g, std::move(inputs), h, tol);
}

template <typename From, typename To>
Tensor<To> cast_tensor(const Tensor<From>& t) {
  Tensor<To> out(t.shape);
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return out;
}

/// Checks a single-precision reverse pass against finite differences of the
/// double instantiation of the same graph. Storage noise in a float-valued
/// difference quotient would otherwise drown tolerances below ~1e-2; the
/// double route gives the oracle the headroom while the gradient under test
/// stays the float implementation.
template <typename Build>
GradCheckReport run_mixed_gradcheck(Build&& build, std::vector<Tensor<float>> inputs, double h,
                                    double tol, std::uint32_t proj_seed = 7) {
  Tensor<float> proj;
  {
    Tape<float> tp;
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(tp.leaf(t));
    const Var out = build(tp, vars);
    std::mt19937 rng(proj_seed);
    proj = random_tensor<float>(tp.val(out).shape, rng, -1.0, 1.0);
  }
  const Tensor<double> dproj = cast_tensor<float, double>(proj);

  auto f = [&](const std::vector<Tensor<float>>& ins) {
    Tape<double> tp;
    std::vector<Var> vars;
    vars.reserve(ins.size());
    for (const auto& t : ins) vars.push_back(tp.leaf(cast_tensor<float, double>(t)));
    const Var out = build(tp, vars);
    const Var s = ag::project_to_scalar(tp, out, dproj);
    return tp.val(s)[0];
  };
  auto g = [&](const std::vector<Tensor<float>>& ins) {
    Tape<float> tp;
    std::vector<Var> vars;
    vars.reserve(ins.size());
    for (const auto& t : ins) vars.push_back(tp.leaf(t));
    const Var out = build(tp, vars);
    const Var s = ag::project_to_scalar(tp, out, proj);
    tp.backward(s);
    std::vector<Tensor<float>> gs;
    gs.reserve(vars.size());
    for (const Var v : vars) gs.push_back(tp.grad(v));
    return gs;
  };
  return grad_check<float>(f, g, std::move(inputs), h, tol);
}

}  // namespace aidn
