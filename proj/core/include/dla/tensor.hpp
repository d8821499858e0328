#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dla {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major float array. The universal value type of the library:
// images, parameters, activation traces, logits all live here.
struct Tensor {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // empty, or same length as data

  Tensor() = default;
  Tensor(Shape s, std::vector<float> d);

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, float value);

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  // Number of rows / columns when viewed as a 2-d matrix [rows, rest].
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  std::int64_t cols() const { return shape.empty() ? 0 : size() / shape[0]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;

  // Row i viewed as a flat slice of length cols().
  const float* row(int i) const { return data.data() + static_cast<std::int64_t>(i) * cols(); }
  float* row(int i) { return data.data() + static_cast<std::int64_t>(i) * cols(); }
};

// Throws DimensionError if shapes differ.
void check_same_shape(const Tensor& a, const Tensor& b, const char* where);

// Throws InputError if any element is NaN/Inf.
void check_finite(const Tensor& t, const char* where);

float l2_distance(const float* a, const float* b, std::int64_t n);
float linf_distance(const float* a, const float* b, std::int64_t n);

// Copies rows [start, start+count) along the first axis.
Tensor slice_rows(const Tensor& t, int start, int count);
// Writes src into dst starting at row `start` (shapes must agree past axis 0).
void store_rows(Tensor& dst, const Tensor& src, int start);

}  // namespace dla
