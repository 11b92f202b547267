#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "styleshift/errors.hpp"
#include "styleshift/rng.hpp"

namespace styleshift {

// 64-byte-aligned storage so Eigen's vectorized kernels always see the same
// alignment; with plain malloc alignment varies per allocation, which would
// change summation order and break bit-reproducibility of repeated runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) {
    if (n == 0) return nullptr;
    void* p = ::operator new(n * sizeof(T), std::align_val_t{64});
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t{64});
  }
  bool operator==(const AlignedAllocator&) const { return true; }
  bool operator!=(const AlignedAllocator&) const { return false; }
};

// Dense row-major tensor. Value semantics; all heavy math goes through the
// Eigen map helpers or explicit loops in the op implementations.
template <typename T>
class Tensor {
 public:
  using EigenMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<EigenMatrix>;
  using ConstMatrixMap = Eigen::Map<const EigenMatrix>;
  using VectorMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
  using ConstVectorMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(count(shape_), T(0));
  }
  Tensor(std::vector<int> shape, T fill) : shape_(std::move(shape)) {
    data_.assign(count(shape_), fill);
  }
  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != static_cast<std::size_t>(count(shape_)))
      throw InputError("tensor data size does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, T v) { return Tensor(std::move(shape), v); }
  static Tensor randn(std::vector<int> shape, Rng& rng, T stddev = T(1)) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  long numel() const { return static_cast<long>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](long i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](long i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at(int i) { return data_[static_cast<std::size_t>(i)]; }
  T& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  T& at(int i, int j, int k) {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  T& at(int i, int j, int k, int l) {
    return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& at(int i) const { return data_[static_cast<std::size_t>(i)]; }
  const T& at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  const T& at(int i, int j, int k) const {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(int i, int j, int k, int l) const {
    return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  // Same data, new shape (element count must match).
  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != numel()) throw InputError("reshape changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  MatrixMap as_matrix(int rows, int cols) {
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap as_matrix(int rows, int cols) const {
    return ConstMatrixMap(data_.data(), rows, cols);
  }
  VectorMap as_vector() { return VectorMap(data_.data(), static_cast<long>(data_.size())); }
  ConstVectorMap as_vector() const {
    return ConstVectorMap(data_.data(), static_cast<long>(data_.size()));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  T min() const { return *std::min_element(data_.begin(), data_.end()); }
  T max() const { return *std::max_element(data_.begin(), data_.end()); }
  double sum() const {
    double s = 0;
    for (const T& v : data_) s += static_cast<double>(v);
    return s;
  }
  double mean() const { return empty() ? 0.0 : sum() / static_cast<double>(numel()); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t;
    t = Tensor<U>(shape_);
    for (long i = 0; i < numel(); ++i) t[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return t;
  }

  static long count(const std::vector<int>& shape) {
    long n = 1;
    for (int d : shape) {
      if (d < 0) throw InputError("negative tensor dimension");
      n *= d;
    }
    return n;
  }

  static std::string shape_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

 private:
  std::vector<int> shape_;
  std::vector<T, AlignedAllocator<T>> data_;
};

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw InputError("max_abs_diff: shape mismatch");
  double m = 0;
  for (long i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  for (long i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace styleshift
