#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace aidn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Extents of a rank <= 4 tensor. Feature maps are H x W x C, matrices
/// rows x cols, vectors flat.
struct Shape {
  std::array<int, 4> dim{0, 0, 0, 0};
  int rank = 0;

  Shape() = default;
  Shape(std::initializer_list<int> dims) {
    if (dims.size() > 4) throw ShapeError("Shape: rank > 4");
    for (int d : dims) dim[rank++] = d;
  }

  int operator[](int i) const { return dim[static_cast<size_t>(i)]; }

  std::size_t numel() const {
    std::size_t n = 1;
    for (int i = 0; i < rank; ++i) {
      if (dim[static_cast<size_t>(i)] < 0) throw ShapeError("Shape: negative extent");
      n *= static_cast<std::size_t>(dim[static_cast<size_t>(i)]);
    }
    return rank == 0 ? 0 : n;
  }

  bool operator==(const Shape& o) const {
    if (rank != o.rank) return false;
    for (int i = 0; i < rank; ++i)
      if (dim[static_cast<size_t>(i)] != o.dim[static_cast<size_t>(i)]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < rank; ++i) {
      if (i) s += "x";
      s += std::to_string(dim[static_cast<size_t>(i)]);
    }
    return s + "]";
  }
};

/// Dense row-major tensor, channel-fastest for H x W x C maps. Plain value
/// type: copy/move do what you expect.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), data(s.numel(), T(0)) {}
  Tensor(Shape s, std::vector<T> values) : shape(s), data(std::move(values)) {
    if (shape.numel() != data.size())
      throw ShapeError("Tensor: shape " + shape.str() + " does not match " +
                       std::to_string(data.size()) + " values");
  }

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor full(Shape s, T v) {
    Tensor t(s);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  std::size_t size() const { return data.size(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  // H x W x C accessor
  T& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * shape[1] + x) * shape[2] + c];
  }
  const T& at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * shape[1] + x) * shape[2] + c];
  }
  // rows x cols accessor
  T& at(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  const T& at(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

inline void check_same_shape(const Shape& a, const Shape& b, const char* who) {
  if (a != b)
    throw ShapeError(std::string(who) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace detail

/// Uniform values in [lo, hi) from the raw mt19937 stream. Kept away from
/// std::uniform_real_distribution so sequences are identical on every
/// platform for a given seed.
inline double rand_uniform(std::mt19937& rng, double lo = 0.0, double hi = 1.0) {
  const double u = static_cast<double>(rng() >> 8) * 0x1.0p-24;
  return lo + u * (hi - lo);
}

inline int rand_index(std::mt19937& rng, int n) {
  return static_cast<int>(rng() % static_cast<std::uint32_t>(n));
}

template <typename T>
Tensor<T> random_tensor(Shape s, std::mt19937& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(s);
  for (auto& v : t.data) v = static_cast<T>(rand_uniform(rng, lo, hi));
  return t;
}

}  // namespace aidn
