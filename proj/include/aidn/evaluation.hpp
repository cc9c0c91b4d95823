#pragma once

// Quality metrics and the evaluation protocol: round-trip PSNR/SSIM of the
// reconstruction against the original, and SSIM of the embedded LR image
// against the plain bicubic reference. Plus the two diagnostic
// visualizations: routing-weight maps and LR difference maps.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aidn/checkpoint.hpp"
#include "aidn/imaging.hpp"
#include "aidn/model.hpp"

namespace aidn {

// --- PSNR -----------------------------------------------------------------------

/// 10 log10(1 / MSE) on [0, 1] data. MSE of exactly zero is reported as the
/// `identical` marker instead of feeding log a zero.
struct PsnrResult {
  std::optional<double> db;

  bool identical() const { return !db.has_value(); }
  std::string str() const {
    if (identical()) return "identical";
    std::ostringstream os;
    os << *db;
    return os.str();
  }
};

template <typename T>
PsnrResult psnr(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape, b.shape, "psnr");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.size());
  if (mse == 0.0) return {std::nullopt};
  return {10.0 * std::log10(1.0 / mse)};
}

// --- SSIM -----------------------------------------------------------------------

namespace detail {

inline const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
      const double d = i - 5;
      v[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      sum += v[static_cast<std::size_t>(i)];
    }
    for (double& x : v) x /= sum;
    return v;
  }();
  return w;
}

// separable valid-region filter of one channel plane (doubles)
inline std::vector<double> ssim_filter(const std::vector<double>& img, int H, int W) {
  const auto& win = ssim_window();
  const int vw = W - 10, vh = H - 10;
  std::vector<double> horiz(static_cast<std::size_t>(H) * vw);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < vw; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k) acc += win[static_cast<std::size_t>(k)] * img[static_cast<std::size_t>(y) * W + x + k];
      horiz[static_cast<std::size_t>(y) * vw + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(vh) * vw);
  for (int y = 0; y < vh; ++y)
    for (int x = 0; x < vw; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k) acc += win[static_cast<std::size_t>(k)] * horiz[static_cast<std::size_t>(y + k) * vw + x];
      out[static_cast<std::size_t>(y) * vw + x] = acc;
    }
  return out;
}

}  // namespace detail

/// Mean local SSIM, 11 x 11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2 on [0, 1] data. Windows fully inside the image only; per
/// channel, then averaged. Symmetric in (a, b).
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.shape, b.shape, "ssim");
  if (a.shape.rank != 3) throw ShapeError("ssim: expected H x W x C");
  const int H = a.shape[0], W = a.shape[1], C = a.shape[2];
  if (H < 11 || W < 11)
    throw ShapeError("ssim: image " + std::to_string(W) + "x" + std::to_string(H) + " smaller than the 11x11 window");
  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;

  double total = 0.0;
  std::vector<double> pa(static_cast<std::size_t>(H) * W), pb(pa.size()), paa(pa.size()), pbb(pa.size()), pab(pa.size());
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double va = static_cast<double>(a.at(y, x, c));
        const double vb = static_cast<double>(b.at(y, x, c));
        const std::size_t i = static_cast<std::size_t>(y) * W + x;
        pa[i] = va;
        pb[i] = vb;
        paa[i] = va * va;
        pbb[i] = vb * vb;
        pab[i] = va * vb;
      }
    const auto ma = detail::ssim_filter(pa, H, W);
    const auto mb = detail::ssim_filter(pb, H, W);
    const auto maa = detail::ssim_filter(paa, H, W);
    const auto mbb = detail::ssim_filter(pbb, H, W);
    const auto mab = detail::ssim_filter(pab, H, W);
    double acc = 0.0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double mu_a = ma[i], mu_b = mb[i];
      const double var_a = maa[i] - mu_a * mu_a;
      const double var_b = mbb[i] - mu_b * mu_b;
      const double cov = mab[i] - mu_a * mu_b;
      acc += ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
             ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
    }
    total += acc / static_cast<double>(ma.size());
  }
  return total / C;
}

// --- evaluation protocol -----------------------------------------------------------

struct EvalRow {
  double s = 0.0;
  bool psnr_identical = false;
  double psnr_hr = 0.0;  // mean over images (dB); meaningless when identical
  double ssim_hr = 0.0;
  double ssim_lr_vs_bicubic = 0.0;
};

struct EvalReport {
  std::string dataset_id;
  std::string model_hash;
  double wall_time_s = 0.0;
  int images = 0;
  int skipped = 0;
  std::vector<EvalRow> rows;
};

/// Round-trip metrics for one image at one scale.
struct RoundTripMetrics {
  PsnrResult psnr_hr;
  double ssim_hr = 0.0;
  double ssim_lr_vs_bicubic = 0.0;
};

inline RoundTripMetrics round_trip_metrics(const ModelState<float>& model, const TensorF& hr,
                                           double s, const QuantizerConfig& qc = {}) {
  const auto enc = encode(hr, s, model, qc);
  const TensorF rec = clamp01(decode(enc.lr, enc.spec, model));
  const TensorF lr_ref =
      quantize(bicubic_resize(hr, enc.lr.shape[0], enc.lr.shape[1]), qc.alpha, QuantMode::Hard);
  RoundTripMetrics m;
  m.psnr_hr = psnr(rec, hr);
  m.ssim_hr = ssim(rec, hr);
  m.ssim_lr_vs_bicubic = ssim(enc.lr, lr_ref);
  return m;
}

/// Bicubic-down -> quantize -> bicubic-up reference chain for the same
/// protocol; the baseline every round-trip number is compared against.
inline PsnrResult bicubic_baseline_psnr(const TensorF& hr, double s) {
  const LrDims d = lr_dims(hr.shape[0], hr.shape[1], s);
  const TensorF lr = quantize(bicubic_resize(hr, d.out_h, d.out_w), 0.5, QuantMode::Hard);
  const TensorF up = clamp01(bicubic_resize(lr, hr.shape[0], hr.shape[1]));
  return psnr(up, hr);
}

/// Encode/decode every readable PNG at every scale; means per scale.
/// Deterministic: files are visited in sorted order and nothing draws
/// random numbers.
inline EvalReport eval_model(const ModelState<float>& model, const std::string& dataset_dir,
                             const std::vector<double>& scales, const QuantizerConfig& qc = {},
                             std::ostream* warn = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  EvalReport report;
  report.dataset_id = std::filesystem::path(dataset_dir).filename().string();
  if (report.dataset_id.empty()) report.dataset_id = dataset_dir;
  report.model_hash = model_hash(model);

  std::vector<TensorF> images;
  for (const std::string& path : list_pngs(dataset_dir)) {
    try {
      images.push_back(to_float(load_image(path).image));
    } catch (const IoError& e) {
      ++report.skipped;
      if (warn) (*warn) << "warning: skipping " << path << ": " << e.what() << "\n";
    }
  }
  if (images.empty()) throw Error("eval_model: no readable images in " + dataset_dir);
  report.images = static_cast<int>(images.size());

  for (double s : scales) {
    EvalRow row;
    row.s = s;
    double psnr_acc = 0.0;
    int psnr_n = 0;
    for (const TensorF& hr : images) {
      const auto m = round_trip_metrics(model, hr, s, qc);
      if (m.psnr_hr.identical()) {
        row.psnr_identical = true;
      } else {
        psnr_acc += *m.psnr_hr.db;
        ++psnr_n;
      }
      row.ssim_hr += m.ssim_hr;
      row.ssim_lr_vs_bicubic += m.ssim_lr_vs_bicubic;
    }
    if (psnr_n > 0) row.psnr_hr = psnr_acc / psnr_n;
    row.ssim_hr /= report.images;
    row.ssim_lr_vs_bicubic /= report.images;
    report.rows.push_back(row);
  }
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

/// key=value blocks separated by blank lines; header block first, then one
/// block per scale.
inline std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "dataset=" << r.dataset_id << "\n";
  os << "model_hash=" << r.model_hash << "\n";
  os << "images=" << r.images << "\n";
  os << "skipped=" << r.skipped << "\n";
  os << "wall_time_s=" << r.wall_time_s << "\n";
  for (const auto& row : r.rows) {
    os << "\n";
    os << "scale=" << row.s << "\n";
    os << "psnr_hr=" << (row.psnr_identical ? std::string("identical") : std::to_string(row.psnr_hr)) << "\n";
    os << "ssim_hr=" << row.ssim_hr << "\n";
    os << "ssim_lr_vs_bicubic=" << row.ssim_lr_vs_bicubic << "\n";
  }
  return os.str();
}

/// Two columns per line: s psnr. Rows whose PSNR is marked identical are
/// omitted (nothing sensible to plot).
inline std::string format_curve(const EvalReport& r) {
  std::ostringstream os;
  for (const auto& row : r.rows)
    if (!row.psnr_identical) os << row.s << " " << row.psnr_hr << "\n";
  return os.str();
}

// --- routing-weight visualization -----------------------------------------------------

/// Decoder-side CRM conditioning at explicit output locations; one
/// n_experts probability vector per location.
inline std::vector<TensorF> routing_weights(const ModelState<float>& model, const TensorF& lr,
                                            double s, int out_h, int out_w,
                                            const std::vector<std::pair<int, int>>& locations) {
  PureEngine<float> eng;
  const TensorF F = extract_features(eng, lr, s, model.decoder.extractor);
  const double rate_x = static_cast<double>(out_w) / lr.shape[1];
  const double rate_y = static_cast<double>(out_h) / lr.shape[0];
  std::vector<TensorF> out;
  out.reserve(locations.size());
  for (const auto& [ox, oy] : locations) {
    const double ix = project_coordinate(ox, rate_x);
    const double iy = project_coordinate(oy, rate_y);
    const float rx = static_cast<float>(relative_offset(ox, rate_x));
    const float ry = static_cast<float>(relative_offset(oy, rate_y));
    const TensorF center = bilinear_sample(F, ix, iy);
    out.push_back(crm_condition(static_cast<float>(s), rx, ry, center, model.decoder.crm).weights);
  }
  return out;
}

struct RoutingMap {
  int grid_w = 0, grid_h = 0, n_experts = 0;
  std::vector<float> weights;  // grid_h x grid_w x n_experts
  ImageU8 strip;               // one grayscale panel per expert, left to right
};

/// Samples a grid_w x grid_h lattice of decoder output locations at scale s
/// and renders each expert's weight field as a grayscale panel.
inline RoutingMap routing_map(const ModelState<float>& model, const TensorF& lr, double s,
                              int grid_w, int grid_h) {
  const int out_h = static_cast<int>(std::lround(lr.shape[0] * s));
  const int out_w = static_cast<int>(std::lround(lr.shape[1] * s));
  std::vector<std::pair<int, int>> locs;
  locs.reserve(static_cast<std::size_t>(grid_w) * grid_h);
  for (int gy = 0; gy < grid_h; ++gy)
    for (int gx = 0; gx < grid_w; ++gx) {
      const int ox = grid_w == 1 ? out_w / 2 : gx * (out_w - 1) / (grid_w - 1);
      const int oy = grid_h == 1 ? out_h / 2 : gy * (out_h - 1) / (grid_h - 1);
      locs.emplace_back(ox, oy);
    }
  const auto w = routing_weights(model, lr, s, out_h, out_w, locs);

  RoutingMap map;
  map.grid_w = grid_w;
  map.grid_h = grid_h;
  map.n_experts = model.hyper.experts;
  map.weights.resize(locs.size() * static_cast<std::size_t>(map.n_experts));
  for (std::size_t i = 0; i < w.size(); ++i)
    for (int e = 0; e < map.n_experts; ++e)
      map.weights[i * static_cast<std::size_t>(map.n_experts) + e] = w[i][static_cast<std::size_t>(e)];

  const int sep = 1;
  map.strip = ImageU8::blank(map.n_experts * grid_w + (map.n_experts - 1) * sep, grid_h);
  for (int e = 0; e < map.n_experts; ++e) {
    const int x_base = e * (grid_w + sep);
    if (e > 0)
      for (int y = 0; y < grid_h; ++y)
        for (int c = 0; c < 3; ++c) map.strip.at(y, x_base - 1, c) = 128;
    for (int gy = 0; gy < grid_h; ++gy)
      for (int gx = 0; gx < grid_w; ++gx) {
        const float v = map.weights[(static_cast<std::size_t>(gy) * grid_w + gx) * map.n_experts + e];
        const auto px = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0));
        for (int c = 0; c < 3; ++c) map.strip.at(gy, x_base + gx, c) = px;
      }
  }
  return map;
}

// --- LR difference map ------------------------------------------------------------------

struct DiffMap {
  ImageU8 image;
  double mean_abs = 0.0;  // before gain
};

/// Per-pixel |a - b| scaled by gain, clamped to [0, 1], rendered per channel.
inline DiffMap difference_map(const TensorF& a, const TensorF& b, double gain) {
  detail::check_same_shape(a.shape, b.shape, "difference_map");
  if (a.shape.rank != 3 || a.shape[2] != 3) throw ShapeError("difference_map: expected H x W x 3");
  DiffMap out;
  TensorF scaled(a.shape);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    acc += d;
    scaled[i] = static_cast<float>(std::min(1.0, d * gain));
  }
  out.mean_abs = acc / static_cast<double>(a.size());
  out.image = from_float(scaled);
  return out;
}

}  // namespace aidn
