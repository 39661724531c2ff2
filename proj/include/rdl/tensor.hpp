#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rdl/errors.hpp"

namespace rdl::tg {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape &shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape &shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major N-d array with value semantics.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeMismatch("tensor of shape " + shape_str(shape_) + " needs " +
                          std::to_string(shape_numel(shape_)) + " elements, got " +
                          std::to_string(data_.size()));
    }
  }

  const Shape &shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T *data() { return data_.data(); }
  const T *data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T> &storage() const { return data_; }

  T &operator[](std::size_t i) { return data_[i]; }
  const T &operator[](std::size_t i) const { return data_[i]; }

  /// Element of a rank-4 tensor.
  T &at(int a, int b, int c, int d) {
    return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  const T &at(int a, int b, int c, int d) const {
    return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same elements under a new shape with the same element count.
  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor &) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Deterministic random source. The engine is std::mt19937_64 (bit-exact by
/// the standard); conversions are hand-rolled because the standard library's
/// distributions differ between implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Derives an independent stream from (seed, stream id).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <typename T>
Tensor<T> randn(Shape shape, Rng &rng, double stddev = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto &v : t.values()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
Tensor<T> randu(Shape shape, Rng &rng, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (auto &v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace rdl::tg
