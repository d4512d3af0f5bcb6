#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "oce/error.hpp"

namespace oce {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense row-major n-dimensional array with an optional gradient buffer.
///
/// The gradient buffer is absent until `ensure_grad()` is called; when
/// present it always has exactly as many elements as the data.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw PreconditionError("tensor data length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_str(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 2-D and 3-D element access, row-major.
  T& at(std::size_t y, std::size_t x) { return data_[y * shape_[1] + x]; }
  const T& at(std::size_t y, std::size_t x) const { return data_[y * shape_[1] + x]; }
  T& at(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * shape_[1] + y) * shape_[2] + x]; }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  bool has_grad() const noexcept { return !grad_.empty() || data_.empty(); }
  std::span<T> grad() noexcept { return grad_; }
  std::span<const T> grad() const noexcept { return grad_; }
  void ensure_grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), T{});
  }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), T{}); }
  void drop_grad() { grad_.clear(); }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
};

/// Instance map: 0 = background, positive ids = instances. Shape (H, W).
using LabelMask = Tensor<std::int32_t>;
using BoolMask = Tensor<std::uint8_t>;

/// Pixel coordinate on a 2-D grid, (row, col).
struct Coord {
  int row = 0;
  int col = 0;
  friend bool operator==(const Coord&, const Coord&) = default;
};

}  // namespace oce
