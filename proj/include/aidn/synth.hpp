#pragma once

// Procedural texture synthesis for desk-scale experiments: seeded, layered
// compositions of smooth gradients, oriented gratings and soft-edged shapes.
// Frequencies span both sides of the downscaled Nyquist limit, so
// reconstructing them genuinely requires embedded detail at the larger
// scale factors.

#include <cmath>
#include <filesystem>
#include <string>

#include "aidn/imaging.hpp"
#include "aidn/tensor.hpp"

namespace aidn {

inline TensorF make_texture(int h, int w, std::mt19937& rng) {
  TensorF img({h, w, 3});

  // smooth base: bilinear blend of four random corner colors
  float corner[4][3];
  for (auto& c : corner)
    for (float& v : c) v = static_cast<float>(rand_uniform(rng, 0.15, 0.85));
  for (int y = 0; y < h; ++y) {
    const float fy = h > 1 ? static_cast<float>(y) / (h - 1) : 0.0f;
    for (int x = 0; x < w; ++x) {
      const float fx = w > 1 ? static_cast<float>(x) / (w - 1) : 0.0f;
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = (1 - fy) * ((1 - fx) * corner[0][c] + fx * corner[1][c]) +
                          fy * ((1 - fx) * corner[2][c] + fx * corner[3][c]);
    }
  }

  // oriented gratings; frequency in cycles per pixel
  const int n_gratings = 1 + rand_index(rng, 3);
  for (int g = 0; g < n_gratings; ++g) {
    const double theta = rand_uniform(rng, 0.0, 3.14159265358979323846);
    const double freq = rand_uniform(rng, 0.02, 0.22);
    const double phase = rand_uniform(rng, 0.0, 6.28318530717958647692);
    const double amp = rand_uniform(rng, 0.06, 0.18);
    float cw[3];
    for (float& v : cw) v = static_cast<float>(rand_uniform(rng, 0.3, 1.0));
    const double kx = 6.28318530717958647692 * freq * std::cos(theta);
    const double ky = 6.28318530717958647692 * freq * std::sin(theta);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float v = static_cast<float>(amp * std::sin(kx * x + ky * y + phase));
        for (int c = 0; c < 3; ++c) img.at(y, x, c) += cw[c] * v;
      }
  }

  // soft-edged discs and rectangles
  const int n_shapes = rand_index(rng, 4);
  for (int sh = 0; sh < n_shapes; ++sh) {
    float color[3];
    for (float& v : color) v = static_cast<float>(rand_uniform(rng, 0.0, 1.0));
    const float opacity = static_cast<float>(rand_uniform(rng, 0.5, 1.0));
    if (rand_index(rng, 2) == 0) {
      const double cx = rand_uniform(rng, 0.0, w);
      const double cy = rand_uniform(rng, 0.0, h);
      const double r = rand_uniform(rng, 6.0, std::max(8.0, w / 3.0));
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double d = std::hypot(x - cx, y - cy);
          const double a = std::clamp((r - d + 1.0) / 2.0, 0.0, 1.0) * opacity;
          if (a <= 0.0) continue;
          for (int c = 0; c < 3; ++c)
            img.at(y, x, c) = static_cast<float>((1.0 - a) * img.at(y, x, c) + a * color[c]);
        }
    } else {
      const int x0 = rand_index(rng, std::max(1, w - 8));
      const int y0 = rand_index(rng, std::max(1, h - 8));
      const int x1 = std::min(w, x0 + 8 + rand_index(rng, std::max(1, w / 2)));
      const int y1 = std::min(h, y0 + 8 + rand_index(rng, std::max(1, h / 2)));
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          for (int c = 0; c < 3; ++c)
            img.at(y, x, c) = (1.0f - opacity) * img.at(y, x, c) + opacity * color[c];
    }
  }

  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

inline ImageU8 synth_texture(int w, int h, std::uint32_t seed) {
  std::mt19937 rng(seed);
  return from_float(make_texture(h, w, rng));
}

/// tex_0000.png ... under dir; returns the file count written.
inline int write_texture_dataset(const std::string& dir, int count, int size, std::uint32_t seed) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "tex_%04d.png", i);
    save_image(synth_texture(size, size, seed + static_cast<std::uint32_t>(i)),
               (std::filesystem::path(dir) / name).string());
  }
  return count;
}

}  // namespace aidn
