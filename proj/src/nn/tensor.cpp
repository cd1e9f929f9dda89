#include "skdnet/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "skdnet/errors.hpp"

namespace skd::nn {

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ValidationError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

template <typename T>
Tensor<T>::Tensor(std::vector<int> dims, T fill) : shape(std::move(dims)), data(shape_size(shape), fill) {}

template <typename T>
Tensor<T>::Tensor(std::vector<int> dims, std::vector<T> values) : shape(std::move(dims)), data(values.begin(), values.end()) {
  if (data.size() != shape_size(shape))
    throw ValidationError(fmt::format("tensor data length {} does not match shape {}", data.size(), shape_string()));
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data.begin(), data.end(), v);
}

template <typename T>
std::string Tensor<T>::shape_string() const {
  return fmt::format("[{}]", fmt::join(shape, ","));
}

template struct Tensor<float>;
template struct Tensor<double>;

}  // namespace skd::nn
