// Command-line front end: training, single-image downscale/upscale with
// embedded scale metadata, round-trip reporting, dataset evaluation, the two
// diagnostic visualizations, and the gradient-check suite.
//
// Exit codes: 0 success, 2 usage error, 3 I/O or model error,
// 4 check/validation failure. Diagnostics go to stderr.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <aidn/evaluation.hpp>
#include <aidn/selftest.hpp>
#include <aidn/training.hpp>

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitValidation = 4;

struct ExitWith {
  int code;
  std::string message;
};

void require_scale_range(double s) {
  if (!(s > 1.0 && s <= 4.0))
    throw ExitWith{kExitValidation,
                   "scale " + std::to_string(s) + " outside the supported range (1, 4]"};
}

aidn::ModelState<float> load_model(const std::string& path) {
  return aidn::load_checkpoint(path).model;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw aidn::IoError("cannot open " + path + " for writing");
  f << text;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path) {
  aidn::FullConfig cfg;
  if (!config_path.empty()) cfg = aidn::load_config(config_path);
  std::vector<aidn::ImageU8> images;
  for (const std::string& path : aidn::list_pngs(data_dir))
    images.push_back(aidn::load_image(path).image);
  if (images.empty()) throw aidn::IoError("no PNG images in " + data_dir);
  std::cerr << "training on " << images.size() << " images for " << cfg.train.steps << " steps\n";
  aidn::run_training(images, cfg.train, cfg.hyper, out_path, &std::cerr);
  std::cerr << "checkpoint written to " << out_path << "\n";
  return 0;
}

int run_downscale(const std::string& model_path, const std::string& in_path,
                  const std::string& out_path, std::optional<double> scale,
                  std::optional<int> max_dim) {
  if (scale.has_value() == max_dim.has_value())
    throw ExitWith{kExitUsage, "give exactly one of --scale or --max-dim"};
  const auto loaded = aidn::load_image(in_path);
  if (loaded.alpha_dropped) std::cerr << "warning: alpha channel dropped from " << in_path << "\n";

  double s = 0.0;
  if (scale) {
    require_scale_range(*scale);
    s = *scale;
  } else {
    const auto needed = aidn::compute_scale_for_cap(loaded.image.width, loaded.image.height, *max_dim);
    if (!needed) {
      std::cerr << in_path << " already fits within " << *max_dim << " px; copying unchanged\n";
      aidn::save_image(loaded.image, out_path);
      return 0;
    }
    s = *needed;
  }

  const auto model = load_model(model_path);
  const auto enc = aidn::encode(aidn::to_float(loaded.image), s, model);
  aidn::save_image(aidn::from_float(enc.lr), out_path, &enc.spec);
  std::cerr << "wrote " << enc.lr.shape[1] << "x" << enc.lr.shape[0] << " (s=" << s << ") to "
            << out_path << "\n";
  return 0;
}

int run_upscale(const std::string& model_path, const std::string& in_path,
                const std::string& out_path, std::optional<double> scale, std::optional<int> width,
                std::optional<int> height) {
  const auto loaded = aidn::load_image(in_path);
  if (loaded.alpha_dropped) std::cerr << "warning: alpha channel dropped from " << in_path << "\n";

  aidn::ScaleSpec spec;
  if (loaded.spec) spec = *loaded.spec;
  if (scale) spec.nominal_s = *scale;
  if (width) spec.orig_w = *width;
  if (height) spec.orig_h = *height;
  if (!loaded.spec && !(scale && width && height))
    throw ExitWith{kExitUsage, in_path + " carries no scale metadata; pass --scale, --width and --height"};
  require_scale_range(spec.nominal_s);

  const auto model = load_model(model_path);
  const aidn::TensorF out = aidn::clamp01(aidn::decode(aidn::to_float(loaded.image), spec, model));
  aidn::save_image(aidn::from_float(out), out_path);
  std::cerr << "wrote " << out.shape[1] << "x" << out.shape[0] << " to " << out_path << "\n";
  return 0;
}

int run_roundtrip(const std::string& model_path, const std::string& in_path, double scale,
                  const std::string& report_path) {
  require_scale_range(scale);
  const auto model = load_model(model_path);
  const aidn::TensorF hr = aidn::to_float(aidn::load_image(in_path).image);
  const auto m = aidn::round_trip_metrics(model, hr, scale);

  std::ostringstream os;
  os << "scale=" << scale << "\n";
  os << "psnr_hr=" << m.psnr_hr.str() << "\n";
  os << "ssim_hr=" << m.ssim_hr << "\n";
  os << "ssim_lr_vs_bicubic=" << m.ssim_lr_vs_bicubic << "\n";
  std::cout << os.str();
  if (!report_path.empty()) write_text_file(report_path, os.str());
  return 0;
}

int run_eval(const std::string& model_path, const std::string& data_dir,
             const std::vector<double>& scales, const std::string& curve_path) {
  if (scales.empty()) throw ExitWith{kExitUsage, "--scales must list at least one scale"};
  for (double s : scales) require_scale_range(s);
  const auto model = load_model(model_path);
  const auto report = aidn::eval_model(model, data_dir, scales, {}, &std::cerr);
  std::cout << aidn::format_report(report);
  if (!curve_path.empty()) write_text_file(curve_path, aidn::format_curve(report));
  return 0;
}

int run_viz_routing(const std::string& model_path, const std::string& in_path, double scale,
                    const std::string& out_path, int grid) {
  require_scale_range(scale);
  const auto model = load_model(model_path);
  const aidn::TensorF lr = aidn::to_float(aidn::load_image(in_path).image);
  const auto map = aidn::routing_map(model, lr, scale, grid, grid);
  aidn::save_image(map.strip, out_path);
  std::cerr << "wrote " << map.n_experts << " expert panels (" << grid << "x" << grid << " grid) to "
            << out_path << "\n";
  return 0;
}

int run_diff_map(const std::string& model_path, const std::string& in_path, double scale,
                 const std::string& out_path, double gain) {
  require_scale_range(scale);
  const auto model = load_model(model_path);
  const aidn::TensorF hr = aidn::to_float(aidn::load_image(in_path).image);
  const auto enc = aidn::encode(hr, scale, model);
  const aidn::TensorF ref = aidn::quantize(
      aidn::bicubic_resize(hr, enc.lr.shape[0], enc.lr.shape[1]), 0.5, aidn::QuantMode::Hard);
  const auto diff = aidn::difference_map(enc.lr, ref, gain);
  aidn::save_image(diff.image, out_path);
  std::cout << "mean_abs_diff=" << diff.mean_abs << "\n";
  return 0;
}

int run_gradcheck() {
  const auto reports = aidn::gradcheck_suite();
  bool ok = true;
  for (const auto& r : reports) {
    std::cout << (r.report.pass ? "[PASS] " : "[FAIL] ") << r.name << " " << r.report.str() << "\n";
    ok = ok && r.report.pass;
  }
  return ok ? 0 : kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"arbitrary-scale invertible image rescaling toolkit"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a model on a directory of PNGs");
  std::string train_config, train_data, train_out;
  train->add_option("--config", train_config, "key=value config file");
  train->add_option("--data", train_data, "training image directory")->required();
  train->add_option("--out", train_out, "checkpoint output path")->required();

  // downscale
  auto* down = app.add_subcommand("downscale", "encode an HR image into a metadata-carrying LR PNG");
  std::string down_model, down_in, down_out;
  std::optional<double> down_scale;
  std::optional<int> down_maxdim;
  down->add_option("--model", down_model)->required();
  down->add_option("--in", down_in)->required();
  down->add_option("--out", down_out)->required();
  down->add_option("--scale", down_scale, "scale factor in (1, 4]");
  down->add_option("--max-dim", down_maxdim, "platform cap on the longest side");

  // upscale
  auto* up = app.add_subcommand("upscale", "restore the original-resolution image from an LR PNG");
  std::string up_model, up_in, up_out;
  std::optional<double> up_scale;
  std::optional<int> up_w, up_h;
  up->add_option("--model", up_model)->required();
  up->add_option("--in", up_in)->required();
  up->add_option("--out", up_out)->required();
  up->add_option("--scale", up_scale, "override: scale factor");
  up->add_option("--width", up_w, "override: original width");
  up->add_option("--height", up_h, "override: original height");

  // roundtrip
  auto* rt = app.add_subcommand("roundtrip", "encode+decode in memory and report quality");
  std::string rt_model, rt_in, rt_report;
  double rt_scale = 0.0;
  rt->add_option("--model", rt_model)->required();
  rt->add_option("--scale", rt_scale)->required();
  rt->add_option("--in", rt_in)->required();
  rt->add_option("--report", rt_report, "also write the metrics to this file");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a model over a dataset directory");
  std::string ev_model, ev_data, ev_curve;
  std::vector<double> ev_scales;
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--scales", ev_scales, "comma-separated scales")->required()->delimiter(',');
  ev->add_option("--curve", ev_curve, "write (s, psnr) pairs to this file");

  // viz-routing
  auto* viz = app.add_subcommand("viz-routing", "render decoder routing-weight maps");
  std::string viz_model, viz_in, viz_out;
  double viz_scale = 0.0;
  int viz_grid = 48;
  viz->add_option("--model", viz_model)->required();
  viz->add_option("--in", viz_in, "LR input image")->required();
  viz->add_option("--scale", viz_scale)->required();
  viz->add_option("--out", viz_out)->required();
  viz->add_option("--grid", viz_grid, "sampling grid side");

  // diff-map
  auto* dm = app.add_subcommand("diff-map", "render |embedded LR - bicubic LR| at a given gain");
  std::string dm_model, dm_in, dm_out;
  double dm_scale = 0.0, dm_gain = 10.0;
  dm->add_option("--model", dm_model)->required();
  dm->add_option("--in", dm_in, "HR input image")->required();
  dm->add_option("--scale", dm_scale)->required();
  dm->add_option("--out", dm_out)->required();
  dm->add_option("--gain", dm_gain, "difference amplification");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "run the full gradient-check oracle suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) return run_train(train_config, train_data, train_out);
    if (*down) return run_downscale(down_model, down_in, down_out, down_scale, down_maxdim);
    if (*up) return run_upscale(up_model, up_in, up_out, up_scale, up_w, up_h);
    if (*rt) return run_roundtrip(rt_model, rt_in, rt_scale, rt_report);
    if (*ev) return run_eval(ev_model, ev_data, ev_scales, ev_curve);
    if (*viz) return run_viz_routing(viz_model, viz_in, viz_scale, viz_out, viz_grid);
    if (*dm) return run_diff_map(dm_model, dm_in, dm_scale, dm_out, dm_gain);
    if (*gc) return run_gradcheck();
  } catch (const ExitWith& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const aidn::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const aidn::ScaleRangeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const aidn::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const aidn::CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const aidn::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const aidn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
