#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "mrd/diffcore/tensor.hpp"
#include "mrd/random.hpp"

// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mrd-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
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

inline mrd::Tensor random_tensor(mrd::Rng& rng, const mrd::Shape& shape, bool requires_grad = true,
                                 double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(mrd::shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return mrd::Tensor::from_values(shape, std::move(v), requires_grad);
}

// Multiples of 2^-24 below 2^2 in magnitude; sums of two stay exact.
inline mrd::Tensor dyadic_tensor(mrd::Rng& rng, const mrd::Shape& shape, bool requires_grad = false) {
  std::vector<double> v(mrd::shape_size(shape));
  for (auto& x : v) {
    const auto k = static_cast<double>(rng.index(std::size_t{1} << 26)) - static_cast<double>(1 << 25);
    x = std::ldexp(k, -24);
  }
  return mrd::Tensor::from_values(shape, std::move(v), requires_grad);
}

inline std::vector<double> values_of(const mrd::Tensor& t) {
  return {t.values().begin(), t.values().end()};
}
