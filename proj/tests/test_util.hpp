#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "dehaze/imaging.hpp"
#include "dehaze/tensor.hpp"

namespace dehaze::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "dehaze-test") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

inline Image random_image(std::int64_t c, std::int64_t h, std::int64_t w, std::uint64_t seed,
                          double lo = 0.0, double hi = 1.0) {
  return Image{random_tensor<float>({c, h, w}, seed, lo, hi)};
}

/// max |a − n| / max(|a|, |n|, floor) over two gradient vectors.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central difference of f with respect to v.
inline double central_difference(double& v, const std::function<double()>& f, double h = 1e-3) {
  const double orig = v;
  v = orig + h;
  const double up = f();
  v = orig - h;
  const double down = f();
  v = orig;
  return (up - down) / (2.0 * h);
}

}  // namespace dehaze::testing
