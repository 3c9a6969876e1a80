#include "freetrain/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace freetrain {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  Tensor t;
  t.data.assign(shape_numel(shape), 0.0f);
  t.shape = std::move(shape);
  return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, float value) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : t.data) v = value;
  return t;
}

Tensor Tensor::scalar(float value) {
  Tensor t;
  t.data.assign(1, value);
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<float> values) {
  const std::size_t want = shape_numel(shape);
  if (values.size() != want) {
    std::ostringstream out;
    out << "Tensor::from: shape " << shape_str(shape) << " expected " << want
        << " values, got " << values.size();
    throw TensorError(out.str());
  }
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(values);
  return t;
}

bool Tensor::all_finite() const {
  for (float v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace freetrain
