#include "dla/tensor.hpp"

#include <cmath>
#include <sstream>

#include "dla/errors.hpp"

namespace dla {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
  if (numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_to_string(shape));
  }
}

Tensor Tensor::zeros(Shape s) {
  std::int64_t n = numel(s);
  return Tensor(std::move(s), std::vector<float>(static_cast<size_t>(n), 0.0f));
}

Tensor Tensor::full(Shape s, float value) {
  std::int64_t n = numel(s);
  return Tensor(std::move(s), std::vector<float>(static_cast<size_t>(n), value));
}

bool Tensor::all_finite() const {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(where) + ": shape mismatch " + shape_to_string(a.shape) +
                         " vs " + shape_to_string(b.shape));
  }
}

void check_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) {
    throw InputError(std::string(where) + ": tensor contains NaN or Inf");
  }
}

float l2_distance(const float* a, const float* b, std::int64_t n) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return static_cast<float>(std::sqrt(acc));
}

float linf_distance(const float* a, const float* b, std::int64_t n) {
  float m = 0.0f;
  for (std::int64_t i = 0; i < n; ++i) {
    float d = std::fabs(a[i] - b[i]);
    if (d > m) m = d;
  }
  return m;
}

Tensor slice_rows(const Tensor& t, int start, int count) {
  if (t.ndim() < 1 || start < 0 || start + count > t.dim(0)) {
    throw DimensionError("slice_rows: row range out of bounds");
  }
  Shape s = t.shape;
  s[0] = count;
  const std::int64_t stride = t.size() / t.dim(0);
  Tensor out = Tensor::zeros(std::move(s));
  std::copy_n(t.data.begin() + start * stride, count * stride, out.data.begin());
  return out;
}

void store_rows(Tensor& dst, const Tensor& src, int start) {
  const std::int64_t stride = dst.size() / dst.dim(0);
  if (src.size() != stride * src.dim(0) || start + src.dim(0) > dst.dim(0)) {
    throw DimensionError("store_rows: source does not fit destination");
  }
  std::copy(src.data.begin(), src.data.end(), dst.data.begin() + start * stride);
}

}  // namespace dla
