#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace freetrain {

/// Dense n-dimensional array of 32-bit floats, row-major.
/// Scalars use an empty shape (numel 1). Tensors are plain values;
/// once handed to the tape they are treated as immutable.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, float value);
  static Tensor scalar(float value);
  // Validates product(shape) == values.size().
  static Tensor from(std::vector<std::size_t> shape, std::vector<float> values);

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;

  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

/// Thrown by every public operation on shape or value violations.
struct TensorError : std::runtime_error {
  explicit TensorError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace freetrain
