#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <unistd.h>
#include <string>

#include "odr/tensor.hpp"

namespace odr_test {

using odr::Index;
using odr::Shape;
using T = odr::Tensor<double>;

// Test-side RNG; deliberately not the library's helpers.
struct Rng {
  explicit Rng(std::uint64_t seed) : engine(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine); }
  int coin() { return std::uniform_int_distribution<int>(0, 1)(engine); }
  std::mt19937 engine;
};

inline T random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline T random_bits(Shape shape, Rng& rng) {
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.coin();
  return t;
}

inline T random_simplex(Index rows, Index cols, Rng& rng) {
  T t({rows, cols});
  for (Index r = 0; r < rows; ++r) {
    double sum = 0;
    for (Index c = 0; c < cols; ++c) sum += t.at({r, c}) = rng.uniform(0.01, 1.0);
    for (Index c = 0; c < cols; ++c) t.at({r, c}) /= sum;
  }
  return t;
}

// Central-difference oracle.
inline T fd_gradient(const std::function<double(const T&)>& f, const T& x, double eps = 1e-4) {
  T g(x.shape());
  T p = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + eps;
    const double hi = f(p);
    p[i] = keep - eps;
    const double lo = f(p);
    p[i] = keep;
    g[i] = (hi - lo) / (2 * eps);
  }
  return g;
}

inline double rel_err(const T& a, const T& b) {
  double num = 0, da = 0, db = 0;
  for (Index i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    da += a[i] * a[i];
    db += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(da, db));
  return scale == 0 ? 0 : std::sqrt(num) / scale;
}

inline double weighted_sum(const T& a, const T& w) {
  double s = 0;
  for (Index i = 0; i < a.size(); ++i) s += a[i] * w[i];
  return s;
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("odr_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path path;
};

}  // namespace odr_test
