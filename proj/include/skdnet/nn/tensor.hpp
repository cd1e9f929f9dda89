#pragma once

#include <cstddef>
#include <new>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace skd::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 64-byte aligned storage; vectorized reductions then sum in an order that
/// does not depend on the heap address.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor. The last dimension is the "column" axis for all
/// matrix-shaped views.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  Buffer<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, T fill = T(0));
  Tensor(std::vector<int> dims, std::vector<T> values);

  std::size_t size() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  /// Negative indices count from the back.
  int dim(int i) const { return shape[static_cast<std::size_t>(i < 0 ? ndim() + i : i)]; }
  int cols() const { return shape.empty() ? 1 : shape.back(); }
  int rows() const { return cols() == 0 ? 0 : static_cast<int>(size() / static_cast<std::size_t>(cols())); }

  Eigen::Map<RowMatrix<T>> mat() { return {data.data(), rows(), cols()}; }
  Eigen::Map<const RowMatrix<T>> mat() const { return {data.data(), rows(), cols()}; }
  Eigen::Map<RowMatrix<T>> mat(int r, int c) { return {data.data(), r, c}; }
  Eigen::Map<const RowMatrix<T>> mat(int r, int c) const { return {data.data(), r, c}; }

  T& operator[](std::size_t i) { return data[i]; }
  T operator[](std::size_t i) const { return data[i]; }

  bool all_finite() const;
  void fill(T v);
  std::string shape_string() const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

std::size_t shape_size(const std::vector<int>& shape);

extern template struct Tensor<float>;
extern template struct Tensor<double>;

}  // namespace skd::nn
