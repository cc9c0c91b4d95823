#pragma once

// Joint encoder/decoder optimization. One step: draw a scale from the
// s^2-weighted grid, assemble a batch of HR patches, run encode (keeping the
// pre-quantization output), decode, form lambda * L_guidance + L_invert,
// backprop through the quantizer surrogate and apply one Adam update. The
// whole trajectory is a deterministic function of the seed.

#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "aidn/checkpoint.hpp"
#include "aidn/imaging.hpp"
#include "aidn/model.hpp"

namespace aidn {

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Raised when a step produces a non-finite loss; carries the diagnostics.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::int64_t step, double s, double guidance, double invertibility)
      : Error("training diverged at step " + std::to_string(step) + " (s=" + std::to_string(s) +
              ", guidance=" + std::to_string(guidance) + ", invertibility=" + std::to_string(invertibility) + ")"),
        step(step),
        s(s),
        guidance(guidance),
        invertibility(invertibility) {}
  std::int64_t step;
  double s, guidance, invertibility;
};

inline std::vector<double> default_scale_grid() {
  std::vector<double> g;
  for (int k = 11; k <= 40; ++k) g.push_back(k / 10.0);
  return g;
}

struct TrainConfig {
  double lambda = 1.0;
  std::vector<double> scale_grid = default_scale_grid();
  int patch = 64;
  int batch = 8;
  int steps = 3000;
  double lr = 1e-4;
  int lr_halving_every = 1000;
  std::uint32_t seed = 1234;
  double alpha = 0.5;
  bool augment = true;
  int checkpoint_every = 500;

  void validate() const {
    if (lambda < 0) throw ConfigError("lambda must be >= 0");
    if (scale_grid.empty()) throw ConfigError("scale_grid must not be empty");
    double smax = 0;
    for (double s : scale_grid) {
      if (!(s > 1.0 && s <= 4.0)) throw ConfigError("scale_grid entries must lie in (1, 4]");
      smax = std::max(smax, s);
    }
    if (patch / smax < 8) throw ConfigError("patch side too small for the largest scale (need patch/s >= 8)");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (lr <= 0) throw ConfigError("lr must be > 0");
    if (lr_halving_every < 1) throw ConfigError("lr_halving_every must be >= 1");
    if (alpha < 0 || alpha > 1) throw ConfigError("alpha must be in [0, 1]");
  }
};

// --- losses ------------------------------------------------------------------

/// Mean squared error, Eqs. of the guidance path; mean over all entries.
template <typename T>
double guidance_loss(const Tensor<T>& lr_pre_quant, const Tensor<T>& bicubic_ref) {
  detail::check_same_shape(lr_pre_quant.shape, bicubic_ref.shape, "guidance_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < lr_pre_quant.size(); ++i) {
    const double d = static_cast<double>(lr_pre_quant[i]) - static_cast<double>(bicubic_ref[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(lr_pre_quant.size());
}

template <typename T>
double invertibility_loss(const Tensor<T>& reconstructed, const Tensor<T>& original) {
  detail::check_same_shape(reconstructed.shape, original.shape, "invertibility_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < reconstructed.size(); ++i)
    acc += std::abs(static_cast<double>(reconstructed[i]) - static_cast<double>(original[i]));
  return acc / static_cast<double>(reconstructed.size());
}

inline double total_loss(double guidance, double invertibility, double lambda) {
  return lambda * guidance + invertibility;
}

// --- scale sampling -----------------------------------------------------------

/// P(s) = s^2 / sum over the grid of s^2.
inline std::vector<double> scale_probabilities(const std::vector<double>& grid) {
  std::vector<double> p(grid.size());
  double total = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    p[i] = grid[i] * grid[i];
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

inline double sample_scale(std::mt19937& rng, const std::vector<double>& grid) {
  if (grid.empty()) throw Error("sample_scale: empty grid");
  double total = 0.0;
  for (double s : grid) total += s * s;
  const double u = rand_uniform(rng) * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    cum += grid[i] * grid[i];
    if (u < cum) return grid[i];
  }
  return grid.back();
}

// --- optimizer ------------------------------------------------------------------

namespace detail {

template <typename T>
std::vector<Tensor<T>*> param_list(ModelState<T>& m) {
  std::vector<Tensor<T>*> out;
  visit_params(m, [&out](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

}  // namespace detail

inline OptimState make_optim_state(ModelState<float>& model) {
  OptimState opt;
  visit_params(model, [&opt](const std::string&, TensorF& t) {
    opt.m.push_back(TensorF::zeros(t.shape));
    opt.v.push_back(TensorF::zeros(t.shape));
  });
  return opt;
}

/// Adam with bias correction; the base rate halves every lr_halving_every
/// steps.
inline void adam_update(ModelState<float>& model, OptimState& opt,
                        const std::vector<TensorF>& grads, const TrainConfig& cfg) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  opt.step += 1;
  const double lr = cfg.lr * std::pow(0.5, static_cast<double>((opt.step - 1) / cfg.lr_halving_every));
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(opt.step));

  auto params = detail::param_list(model);
  for (std::size_t i = 0; i < params.size(); ++i) {
    TensorF& p = *params[i];
    TensorF& m = opt.m[i];
    TensorF& v = opt.v[i];
    const TensorF& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = beta1 * m[j] + (1.0 - beta1) * gj;
      const double vj = beta2 * v[j] + (1.0 - beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      p[j] -= static_cast<float>(lr * (mj / c1) / (std::sqrt(vj / c2) + eps));
    }
  }
}

// --- one step --------------------------------------------------------------------

struct StepStats {
  double guidance = 0.0;
  double invertibility = 0.0;
  double total = 0.0;
};

/// Forward + reverse over the batch; gradients are averaged across the batch
/// before the Adam update. Throws TrainingDiverged on non-finite losses.
inline StepStats train_step(const std::vector<TensorF>& batch, double s, ModelState<float>& model,
                            OptimState& opt, const TrainConfig& cfg) {
  if (batch.empty()) throw Error("train_step: empty batch");
  auto params = detail::param_list(model);
  std::vector<TensorF> grads;
  grads.reserve(params.size());
  for (auto* p : params) grads.push_back(TensorF::zeros(p->shape));

  const float inv_b = 1.0f / static_cast<float>(batch.size());
  StepStats stats;
  const QuantizerConfig qc{cfg.alpha};

  for (const TensorF& hr : batch) {
    Tape<float> tape;
    TapeEngine<float> eng(tape, model);
    const Var hrv = tape.leaf(hr);
    auto enc = encode_full(eng, hrv, hr.shape[0], hr.shape[1], s, model, qc, QuantMode::Hard);
    const TensorF ref = bicubic_resize(hr, enc.dims.out_h, enc.dims.out_w);
    const Var lg = ag::mse_to_const(tape, enc.pre_quant, ref);
    const Var dec = decode_full(eng, enc.lr, enc.dims.out_h, enc.dims.out_w, enc.spec, model);
    const Var li = ag::mae_to_const(tape, dec, hr);
    const Var total = ag::weighted_sum(tape, static_cast<float>(cfg.lambda), lg, li);
    tape.backward(total);

    stats.guidance += static_cast<double>(tape.val(lg)[0]) * inv_b;
    stats.invertibility += static_cast<double>(tape.val(li)[0]) * inv_b;
    stats.total += static_cast<double>(tape.val(total)[0]) * inv_b;

    for (std::size_t i = 0; i < params.size(); ++i) {
      const TensorF& g = tape.grad(eng.ordered[i]);
      TensorF& acc = grads[i];
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j] * inv_b;
    }
  }

  if (!std::isfinite(stats.guidance) || !std::isfinite(stats.invertibility) || !std::isfinite(stats.total))
    throw TrainingDiverged(opt.step + 1, s, stats.guidance, stats.invertibility);

  adam_update(model, opt, grads, cfg);
  return stats;
}

// --- training loop ------------------------------------------------------------------

struct TrainResult {
  ModelState<float> model;
  OptimState opt;
  std::vector<StepStats> history;
};

/// Runs the loop over a directory-loaded dataset. Progress lines go to *log
/// when given; checkpoints land at checkpoint_path every checkpoint_every
/// steps (and at the end).
inline TrainResult run_training(const std::vector<ImageU8>& images, const TrainConfig& cfg,
                                const Hyper& hyper, const std::string& checkpoint_path = "",
                                std::ostream* log = nullptr) {
  cfg.validate();
  std::vector<const ImageU8*> usable;
  for (const auto& img : images)
    if (img.width >= cfg.patch && img.height >= cfg.patch) usable.push_back(&img);
  if (usable.empty())
    throw Error("run_training: no image is at least " + std::to_string(cfg.patch) + "x" +
                std::to_string(cfg.patch));

  std::mt19937 rng(cfg.seed);
  TrainResult result;
  result.model = init_random<float>(hyper, rng);
  result.opt = make_optim_state(result.model);
  result.history.reserve(static_cast<std::size_t>(cfg.steps));

  for (int step = 1; step <= cfg.steps; ++step) {
    const double s = sample_scale(rng, cfg.scale_grid);
    std::vector<TensorF> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b) {
      const ImageU8& img = *usable[static_cast<std::size_t>(rand_index(rng, static_cast<int>(usable.size())))];
      batch.push_back(extract_patches(img, cfg.patch, 1, rng, cfg.augment)[0]);
    }
    const StepStats stats = train_step(batch, s, result.model, result.opt, cfg);
    result.history.push_back(stats);
    if (log)
      (*log) << "step=" << step << " s=" << s << " guidance=" << stats.guidance
             << " invertibility=" << stats.invertibility << " total=" << stats.total << "\n";
    if (!checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
        (step % cfg.checkpoint_every == 0 || step == cfg.steps))
      save_checkpoint(checkpoint_path, result.model, &result.opt);
  }
  if (!checkpoint_path.empty() && cfg.steps == 0) save_checkpoint(checkpoint_path, result.model, &result.opt);
  return result;
}

// --- config file -----------------------------------------------------------------------

struct FullConfig {
  TrainConfig train;
  Hyper hyper;
};

/// key=value lines, '#' starts a comment, unknown keys rejected.
inline FullConfig parse_config_text(const std::string& text) {
  FullConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    auto as_double = [&](const std::string& v) {
      try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
      } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(line_no) + ": bad number '" + v + "'");
      }
    };
    auto as_int = [&](const std::string& v) {
      const double d = as_double(v);
      if (d != std::floor(d)) throw ConfigError("config line " + std::to_string(line_no) + ": expected integer");
      return static_cast<int>(d);
    };
    auto as_bool = [&](const std::string& v) {
      if (v == "1" || v == "true" || v == "on") return true;
      if (v == "0" || v == "false" || v == "off") return false;
      throw ConfigError("config line " + std::to_string(line_no) + ": expected boolean, got '" + v + "'");
    };

    if (key == "lambda") cfg.train.lambda = as_double(value);
    else if (key == "patch") cfg.train.patch = as_int(value);
    else if (key == "batch") cfg.train.batch = as_int(value);
    else if (key == "steps") cfg.train.steps = as_int(value);
    else if (key == "lr") cfg.train.lr = as_double(value);
    else if (key == "lr_halving_every") cfg.train.lr_halving_every = as_int(value);
    else if (key == "seed") cfg.train.seed = static_cast<std::uint32_t>(as_double(value));
    else if (key == "alpha") cfg.train.alpha = as_double(value);
    else if (key == "augment") cfg.train.augment = as_bool(value);
    else if (key == "checkpoint_every") cfg.train.checkpoint_every = as_int(value);
    else if (key == "scale_grid") {
      cfg.train.scale_grid.clear();
      std::istringstream vs(value);
      std::string item;
      while (std::getline(vs, item, ',')) cfg.train.scale_grid.push_back(as_double(trim(item)));
    } else if (key == "channels") cfg.hyper.channels = as_int(value);
    else if (key == "blocks") cfg.hyper.blocks = as_int(value);
    else if (key == "experts") cfg.hyper.experts = as_int(value);
    else if (key == "kernel") cfg.hyper.kernel = as_int(value);
    else if (key == "hidden") cfg.hyper.hidden = as_int(value);
    else throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  cfg.train.validate();
  return cfg;
}

inline FullConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace aidn
