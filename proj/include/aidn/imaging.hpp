#pragma once

// 8-bit RGB image I/O and dataset helpers. PNG is the only container
// (lossless; anything lossy would destroy the embedded detail). The scale
// metadata rides in tEXt chunks AIDN-Scale / AIDN-OrigW / AIDN-OrigH /
// AIDN-Version, with a `<image>.aidn.txt` sidecar written alongside as a
// fallback and consulted when the chunks are missing.

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aidn/scale_spec.hpp"
#include "aidn/tensor.hpp"

namespace aidn {

class IoError : public Error {
 public:
  using Error::Error;
};

class ScaleRangeError : public Error {
 public:
  using Error::Error;
};

struct ImageU8 {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // RGB triples, row-major

  static ImageU8 blank(int w, int h) {
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.pixels.assign(static_cast<std::size_t>(w) * h * 3, 0);
    return img;
  }
  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

// --- scale metadata encoding -------------------------------------------------

namespace detail {

inline std::string format_scale(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", s);
  return std::string(buf);
}

inline std::vector<std::pair<std::string, std::string>> spec_to_kv(const ScaleSpec& spec) {
  return {{"AIDN-Scale", format_scale(spec.nominal_s)},
          {"AIDN-OrigW", std::to_string(spec.orig_w)},
          {"AIDN-OrigH", std::to_string(spec.orig_h)},
          {"AIDN-Version", std::to_string(spec.format_version)}};
}

inline std::optional<ScaleSpec> spec_from_kv(
    const std::vector<std::pair<std::string, std::string>>& kv, const std::string& where) {
  std::optional<std::string> scale, ow, oh, ver;
  for (const auto& [k, v] : kv) {
    if (k == "AIDN-Scale") scale = v;
    else if (k == "AIDN-OrigW") ow = v;
    else if (k == "AIDN-OrigH") oh = v;
    else if (k == "AIDN-Version") ver = v;
  }
  if (!scale && !ow && !oh && !ver) return std::nullopt;
  if (!scale || !ow || !oh || !ver)
    throw IoError("scale metadata in " + where + " is incomplete");
  ScaleSpec s;
  try {
    s.nominal_s = std::stod(*scale);
    s.orig_w = std::stoi(*ow);
    s.orig_h = std::stoi(*oh);
    s.format_version = std::stoi(*ver);
  } catch (const std::exception&) {
    throw IoError("scale metadata in " + where + " is malformed");
  }
  return s;
}

inline std::string sidecar_path(const std::string& image_path) { return image_path + ".aidn.txt"; }

inline std::optional<ScaleSpec> read_sidecar(const std::string& image_path) {
  const std::string path = sidecar_path(image_path);
  std::ifstream f(path);
  if (!f) return std::nullopt;
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  while (std::getline(f, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return spec_from_kv(kv, path);
}

}  // namespace detail

// --- PNG I/O -------------------------------------------------------------------

struct LoadedImage {
  ImageU8 image;
  std::optional<ScaleSpec> spec;
  bool alpha_dropped = false;
};

inline LoadedImage load_image(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open " + path);

  LoadedImage out;
  std::vector<png_bytep> rows;
  std::string err;

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng initialization failed");
  }

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("failed to decode " + path);
  }

  png_init_io(png, fp);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);

  if (bit_depth != 8) {
    err = "unsupported bit depth " + std::to_string(bit_depth) + " in " + path + " (8-bit only)";
  } else if (color_type == PNG_COLOR_TYPE_RGBA) {
    png_set_strip_alpha(png);
    out.alpha_dropped = true;
  } else if (color_type != PNG_COLOR_TYPE_RGB) {
    err = "unsupported color type in " + path + " (RGB or RGBA only)";
  }
  if (!err.empty()) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError(err);
  }

  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  out.image.width = static_cast<int>(w);
  out.image.height = static_cast<int>(h);
  out.image.pixels.assign(static_cast<std::size_t>(w) * h * 3, 0);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = out.image.pixels.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, info);

  std::optional<ScaleSpec> chunk_spec;
  {
    png_textp text = nullptr;
    int n = 0;
    png_get_text(png, info, &text, &n);
    std::vector<std::pair<std::string, std::string>> kv;
    for (int i = 0; i < n; ++i)
      kv.emplace_back(text[i].key ? text[i].key : "", text[i].text ? text[i].text : "");
    chunk_spec = detail::spec_from_kv(kv, path);
  }

  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  const std::optional<ScaleSpec> sidecar = detail::read_sidecar(path);
  if (chunk_spec && sidecar && !(*chunk_spec == *sidecar))
    throw IoError("scale metadata conflict between " + path + " chunks and its sidecar");
  out.spec = chunk_spec ? chunk_spec : sidecar;
  return out;
}

inline void save_image(const ImageU8& img, const std::string& path, const ScaleSpec* spec = nullptr) {
  if (img.width <= 0 || img.height <= 0 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3)
    throw IoError("save_image: pixel buffer does not match " + std::to_string(img.width) + "x" +
                  std::to_string(img.height));

  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open " + path + " for writing");

  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  std::vector<std::pair<std::string, std::string>> kv;
  std::vector<png_text> texts;
  if (spec) {
    kv = detail::spec_to_kv(*spec);
    texts.resize(kv.size());
    for (std::size_t i = 0; i < kv.size(); ++i) {
      texts[i] = png_text{};
      texts[i].compression = PNG_TEXT_COMPRESSION_NONE;
      texts[i].key = const_cast<char*>(kv[i].first.c_str());
      texts[i].text = const_cast<char*>(kv[i].second.c_str());
      texts[i].text_length = kv[i].second.size();
    }
  }

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("failed to encode " + path);
  }

  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  if (!texts.empty()) png_set_text(png, info, texts.data(), static_cast<int>(texts.size()));
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3);
  png_write_image(png, rows.data());
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);

  if (spec) {
    std::ofstream side(detail::sidecar_path(path), std::ios::trunc);
    if (!side) throw IoError("cannot write sidecar for " + path);
    for (const auto& [k, v] : kv) side << k << "=" << v << "\n";
  }
}

// --- conversions ----------------------------------------------------------------

inline TensorF to_float(const ImageU8& img) {
  TensorF t({img.height, img.width, 3});
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    t[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  return t;
}

/// Rounds half away from zero; values outside [0, 1] are clamped first and
/// counted into *clamped when given.
inline ImageU8 from_float(const TensorF& t, std::size_t* clamped = nullptr) {
  if (t.shape.rank != 3 || t.shape[2] != 3) throw ShapeError("from_float: expected H x W x 3 tensor");
  ImageU8 img = ImageU8::blank(t.shape[1], t.shape[0]);
  std::size_t n_clamped = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = static_cast<double>(t[i]);
    const double c = std::clamp(v, 0.0, 1.0);
    if (c != v) ++n_clamped;
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(c * 255.0));
  }
  if (clamped) *clamped = n_clamped;
  return img;
}

// --- dataset helpers --------------------------------------------------------------

/// n random side x side crops; optionally augmented with flips and a 90-degree
/// rotation. Crop coordinates and augmentation bits come from rng in a fixed
/// order, so a seed reproduces the exact patch sequence.
inline std::vector<TensorF> extract_patches(const ImageU8& img, int side, int n, std::mt19937& rng,
                                            bool augment = false) {
  if (side < 1) throw Error("extract_patches: non-positive side");
  if (img.width < side || img.height < side)
    throw Error("extract_patches: image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                " smaller than patch side " + std::to_string(side));
  std::vector<TensorF> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int y0 = rand_index(rng, img.height - side + 1);
    const int x0 = rand_index(rng, img.width - side + 1);
    int aug = augment ? rand_index(rng, 8) : 0;
    const bool flip_h = aug & 1, flip_v = aug & 2, rot = aug & 4;
    TensorF patch({side, side, 3});
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        int sy = flip_v ? side - 1 - y : y;
        int sx = flip_h ? side - 1 - x : x;
        if (rot) {
          const int ty = sx, tx = side - 1 - sy;
          sy = ty;
          sx = tx;
        }
        for (int c = 0; c < 3; ++c)
          patch.at(y, x, c) = static_cast<float>(img.at(y0 + sy, x0 + sx, c)) / 255.0f;
      }
    }
    out.push_back(std::move(patch));
  }
  return out;
}

/// Scale needed to bring max(w, h) under the platform cap; nullopt when the
/// image already fits. Factors beyond 4 are outside the supported range.
inline std::optional<double> compute_scale_for_cap(int w, int h, int cap) {
  if (cap < 1) throw Error("compute_scale_for_cap: cap must be >= 1");
  const int longest = std::max(w, h);
  if (longest <= cap) return std::nullopt;
  const double s = static_cast<double>(longest) / cap;
  if (s > 4.0)
    throw ScaleRangeError("required scale " + detail::format_scale(s) +
                          " exceeds the supported (1, 4] range; downscale in multiple passes manually");
  return s;
}

/// Sorted list of .png paths under dir.
inline std::vector<std::string> list_pngs(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> paths;
  if (!fs::is_directory(dir)) throw IoError(dir + " is not a directory");
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (e.path().extension() == ".png") paths.push_back(e.path().string());
  }
  std::sort(paths.begin(), paths.end());
  return paths;
}

}  // namespace aidn
