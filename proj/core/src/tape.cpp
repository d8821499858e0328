#include "dla/tape.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "dla/errors.hpp"

namespace dla {

namespace {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

ConstMatMap as_mat(const Tensor& t, std::int64_t rows, std::int64_t cols) {
  return ConstMatMap(t.data.data(), rows, cols);
}

MatMap as_mat(std::vector<float>& buf, std::int64_t rows, std::int64_t cols) {
  return MatMap(buf.data(), rows, cols);
}

ConstMatMap as_cmat(const std::vector<float>& buf, std::int64_t rows, std::int64_t cols) {
  return ConstMatMap(buf.data(), rows, cols);
}

void require_2d(const Tensor& t, const char* where) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(where) + ": expected 2-d tensor, got " +
                         shape_to_string(t.shape));
  }
}

// Gathers conv patches. input [C,H,W] (one sample), output row-major
// [oh*ow, C*k*k].
void im2col_sample(const float* in, int C, int H, int W, int k, float* out) {
  const int oh = H - k + 1;
  const int ow = W - k + 1;
  const int patch = C * k * k;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      float* dst = out + (static_cast<std::int64_t>(y) * ow + x) * patch;
      for (int c = 0; c < C; ++c) {
        const float* src = in + (static_cast<std::int64_t>(c) * H + y) * W + x;
        for (int i = 0; i < k; ++i) {
          std::memcpy(dst, src + static_cast<std::int64_t>(i) * W, sizeof(float) * static_cast<size_t>(k));
          dst += k;
        }
      }
    }
  }
}

// Scatter-adds patch gradients back to the input gradient.
void col2im_sample(const float* cols, int C, int H, int W, int k, float* gin) {
  const int oh = H - k + 1;
  const int ow = W - k + 1;
  const int patch = C * k * k;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const float* src = cols + (static_cast<std::int64_t>(y) * ow + x) * patch;
      for (int c = 0; c < C; ++c) {
        float* dst = gin + (static_cast<std::int64_t>(c) * H + y) * W + x;
        for (int i = 0; i < k; ++i) {
          for (int j = 0; j < k; ++j) {
            dst[static_cast<std::int64_t>(i) * W + j] += src[i * k + j];
          }
        }
        src += k * k;
      }
    }
  }
}

}  // namespace

Tape::Node& Tape::at(ValueId id) {
  if (!id.valid() || id.idx >= static_cast<int>(nodes_.size())) {
    throw InputError("tape: invalid value id");
  }
  return nodes_[static_cast<size_t>(id.idx)];
}

const Tape::Node& Tape::at(ValueId id) const {
  if (!id.valid() || id.idx >= static_cast<int>(nodes_.size())) {
    throw InputError("tape: invalid value id");
  }
  return nodes_[static_cast<size_t>(id.idx)];
}

ValueId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return ValueId{static_cast<int>(nodes_.size()) - 1};
}

bool Tape::any_needs_grad(const std::vector<int>& ins) const {
  for (int i : ins) {
    if (nodes_[static_cast<size_t>(i)].needs_grad) return true;
  }
  return false;
}

const Tensor& Tape::value(ValueId id) const { return val_of(at(id)); }

bool Tape::has_grad(ValueId id) const { return !at(id).grad.empty(); }

const std::vector<float>& Tape::grad(ValueId id) const {
  const Node& n = at(id);
  if (n.grad.empty()) {
    throw InputError("tape: no gradient recorded for this value; run backward first");
  }
  return n.grad;
}

Tensor Tape::grad_tensor(ValueId id) const {
  const Node& n = at(id);
  Tensor g = Tensor::zeros(val_of(n).shape);
  if (!n.grad.empty()) g.data = n.grad;
  return g;
}

int Tape::op_count(Op op) const {
  int c = 0;
  for (const Node& n : nodes_) {
    if (n.op == op) ++c;
  }
  return c;
}

int Tape::ref_grad_count() const {
  int c = 0;
  for (const Node& n : nodes_) {
    if (n.op == Op::LeafRef && !n.grad.empty()) ++c;
  }
  return c;
}

ValueId Tape::leaf(Tensor t, bool requires_grad) {
  Node n;
  n.op = Op::Leaf;
  n.needs_grad = requires_grad || t.requires_grad;
  n.val = std::move(t);
  return push(std::move(n));
}

ValueId Tape::leaf_ref(const Tensor& t, bool requires_grad) {
  Node n;
  n.op = Op::LeafRef;
  n.needs_grad = requires_grad || t.requires_grad;
  n.ref = &t;
  return push(std::move(n));
}

ValueId Tape::matmul(ValueId a, ValueId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_2d(A, "matmul");
  require_2d(B, "matmul");
  if (A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_to_string(A.shape) +
                         " x " + shape_to_string(B.shape));
  }
  Node n;
  n.op = Op::Matmul;
  n.ins = {a.idx, b.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor::zeros({A.dim(0), B.dim(1)});
  as_mat(n.val.data, A.dim(0), B.dim(1)).noalias() =
      as_mat(A, A.dim(0), A.dim(1)) * as_mat(B, B.dim(0), B.dim(1));
  return push(std::move(n));
}

ValueId Tape::add_rowvec(ValueId x, ValueId bias) {
  const Tensor& X = value(x);
  const Tensor& b = value(bias);
  require_2d(X, "add_rowvec");
  if (b.ndim() != 1 || b.dim(0) != X.dim(1)) {
    throw DimensionError("add_rowvec: bias shape " + shape_to_string(b.shape) +
                         " does not match columns of " + shape_to_string(X.shape));
  }
  Node n;
  n.op = Op::AddRowVec;
  n.ins = {x.idx, bias.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = X;
  n.val.requires_grad = false;
  n.val.grad.clear();
  const int rows = X.dim(0), cols = X.dim(1);
  for (int i = 0; i < rows; ++i) {
    float* r = n.val.data.data() + static_cast<std::int64_t>(i) * cols;
    for (int j = 0; j < cols; ++j) r[j] += b.data[static_cast<size_t>(j)];
  }
  return push(std::move(n));
}

ValueId Tape::conv2d(ValueId input, ValueId kernels, ValueId bias) {
  const Tensor& X = value(input);
  const Tensor& K = value(kernels);
  const Tensor& b = value(bias);
  if (X.ndim() != 4 || K.ndim() != 4) {
    throw DimensionError("conv2d: input and kernels must be 4-d");
  }
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const int F = K.dim(0), KC = K.dim(1), k = K.dim(2);
  if (K.dim(3) != k) throw DimensionError("conv2d: kernels must be square");
  if (KC != C) throw DimensionError("conv2d: kernel channels do not match input channels");
  if (k > H || k > W) {
    throw DimensionError("conv2d: kernel size " + std::to_string(k) + " larger than input " +
                         shape_to_string(X.shape));
  }
  if (b.ndim() != 1 || b.dim(0) != F) throw DimensionError("conv2d: bias must have one value per filter");
  const int oh = H - k + 1, ow = W - k + 1;
  const int hw = oh * ow;
  const int patch = C * k * k;

  Node n;
  n.op = Op::Conv2d;
  n.ins = {input.idx, kernels.idx, bias.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor::zeros({N, F, oh, ow});
  n.iaux = {N, C, H, W, F, k};

  // im2col rows for the whole batch, kept for the backward pass.
  n.faux.resize(static_cast<size_t>(N) * hw * patch);
  for (int s = 0; s < N; ++s) {
    im2col_sample(X.data.data() + static_cast<std::int64_t>(s) * C * H * W, C, H, W, k,
                  n.faux.data() + static_cast<std::int64_t>(s) * hw * patch);
  }
  // [N*hw, patch] x [patch, F], then transpose each sample to channel-major.
  std::vector<float> t(static_cast<size_t>(N) * hw * F);
  as_mat(t, static_cast<std::int64_t>(N) * hw, F).noalias() =
      as_cmat(n.faux, static_cast<std::int64_t>(N) * hw, patch) *
      as_mat(K, F, patch).transpose();
  for (int s = 0; s < N; ++s) {
    const float* src = t.data() + static_cast<std::int64_t>(s) * hw * F;
    float* dst = n.val.data.data() + static_cast<std::int64_t>(s) * F * hw;
    for (int p = 0; p < hw; ++p) {
      for (int f = 0; f < F; ++f) {
        dst[static_cast<std::int64_t>(f) * hw + p] = src[static_cast<std::int64_t>(p) * F + f] + b.data[static_cast<size_t>(f)];
      }
    }
  }
  return push(std::move(n));
}

ValueId Tape::maxpool2d(ValueId input, int size) {
  const Tensor& X = value(input);
  if (X.ndim() != 4) throw DimensionError("maxpool2d: input must be 4-d");
  if (size < 1) throw InputError("maxpool2d: size must be >= 1");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  if (H % size != 0 || W % size != 0) {
    throw DimensionError("maxpool2d: input " + shape_to_string(X.shape) +
                         " not divisible by pool size " + std::to_string(size));
  }
  const int oh = H / size, ow = W / size;
  Node n;
  n.op = Op::MaxPool2d;
  n.ins = {input.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor::zeros({N, C, oh, ow});
  n.iaux.resize(n.val.data.size());
  std::int64_t o = 0;
  for (int s = 0; s < N; ++s) {
    for (int c = 0; c < C; ++c) {
      const float* plane = X.data.data() + (static_cast<std::int64_t>(s) * C + c) * H * W;
      const std::int64_t base = (static_cast<std::int64_t>(s) * C + c) * H * W;
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
          int besti = y * size * W + x * size;
          float best = plane[besti];
          for (int i = 0; i < size; ++i) {
            for (int j = 0; j < size; ++j) {
              const int idx = (y * size + i) * W + x * size + j;
              if (plane[idx] > best) {  // strict: first occurrence wins ties
                best = plane[idx];
                besti = idx;
              }
            }
          }
          n.val.data[static_cast<size_t>(o)] = best;
          n.iaux[static_cast<size_t>(o)] = static_cast<int>(base + besti);
          ++o;
        }
      }
    }
  }
  return push(std::move(n));
}

ValueId Tape::relu(ValueId x) {
  const Tensor& X = value(x);
  Node n;
  n.op = Op::Relu;
  n.ins = {x.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor(X.shape, X.data);
  for (float& v : n.val.data) v = v > 0.0f ? v : 0.0f;
  return push(std::move(n));
}

ValueId Tape::tanh(ValueId x) {
  const Tensor& X = value(x);
  Node n;
  n.op = Op::Tanh;
  n.ins = {x.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor(X.shape, X.data);
  for (float& v : n.val.data) v = std::tanh(v);
  return push(std::move(n));
}

ValueId Tape::softmax(ValueId x) {
  const Tensor& X = value(x);
  require_2d(X, "softmax");
  Node n;
  n.op = Op::Softmax;
  n.ins = {x.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor(X.shape, X.data);
  const int rows = X.dim(0), cols = X.dim(1);
  for (int i = 0; i < rows; ++i) {
    float* r = n.val.data.data() + static_cast<std::int64_t>(i) * cols;
    float mx = r[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, r[j]);
    float sum = 0.0f;
    for (int j = 0; j < cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    for (int j = 0; j < cols; ++j) r[j] /= sum;
  }
  return push(std::move(n));
}

ValueId Tape::reshape(ValueId x, Shape shape) {
  const Tensor& X = value(x);
  if (numel(shape) != X.size()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(X.shape) + " as " +
                         shape_to_string(shape));
  }
  Node n;
  n.op = Op::Reshape;
  n.ins = {x.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor(std::move(shape), X.data);
  return push(std::move(n));
}

ValueId Tape::concat_cols(const std::vector<ValueId>& xs) {
  if (xs.empty()) throw InputError("concat_cols: no inputs");
  int rows = value(xs[0]).dim(0);
  int total = 0;
  for (ValueId id : xs) {
    const Tensor& t = value(id);
    require_2d(t, "concat_cols");
    if (t.dim(0) != rows) throw DimensionError("concat_cols: row counts differ");
    total += t.dim(1);
  }
  Node n;
  n.op = Op::ConcatCols;
  for (ValueId id : xs) n.ins.push_back(id.idx);
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor::zeros({rows, total});
  int off = 0;
  for (ValueId id : xs) {
    const Tensor& t = value(id);
    const int c = t.dim(1);
    for (int i = 0; i < rows; ++i) {
      std::memcpy(n.val.data.data() + static_cast<std::int64_t>(i) * total + off,
                  t.data.data() + static_cast<std::int64_t>(i) * c, sizeof(float) * static_cast<size_t>(c));
    }
    off += c;
  }
  return push(std::move(n));
}

ValueId Tape::add(ValueId a, ValueId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  check_same_shape(A, B, "add");
  Node n;
  n.op = Op::Add;
  n.ins = {a.idx, b.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor(A.shape, A.data);
  for (size_t i = 0; i < n.val.data.size(); ++i) n.val.data[i] += B.data[i];
  return push(std::move(n));
}

ValueId Tape::sub(ValueId a, ValueId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  check_same_shape(A, B, "sub");
  Node n;
  n.op = Op::Sub;
  n.ins = {a.idx, b.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor(A.shape, A.data);
  for (size_t i = 0; i < n.val.data.size(); ++i) n.val.data[i] -= B.data[i];
  return push(std::move(n));
}

ValueId Tape::mul(ValueId a, ValueId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  check_same_shape(A, B, "mul");
  Node n;
  n.op = Op::Mul;
  n.ins = {a.idx, b.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor(A.shape, A.data);
  for (size_t i = 0; i < n.val.data.size(); ++i) n.val.data[i] *= B.data[i];
  return push(std::move(n));
}

ValueId Tape::affine(ValueId x, float scale, float shift) {
  const Tensor& X = value(x);
  Node n;
  n.op = Op::Affine;
  n.ins = {x.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor(X.shape, X.data);
  for (float& v : n.val.data) v = scale * v + shift;
  n.faux = {scale, shift};
  return push(std::move(n));
}

ValueId Tape::row_sum(ValueId x) {
  const Tensor& X = value(x);
  require_2d(X, "row_sum");
  Node n;
  n.op = Op::RowSum;
  n.ins = {x.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor::zeros({X.dim(0)});
  const int rows = X.dim(0), cols = X.dim(1);
  for (int i = 0; i < rows; ++i) {
    double acc = 0.0;
    const float* r = X.data.data() + static_cast<std::int64_t>(i) * cols;
    for (int j = 0; j < cols; ++j) acc += r[j];
    n.val.data[static_cast<size_t>(i)] = static_cast<float>(acc);
  }
  return push(std::move(n));
}

ValueId Tape::sum_all(ValueId x) {
  const Tensor& X = value(x);
  Node n;
  n.op = Op::SumAll;
  n.ins = {x.idx};
  n.needs_grad = any_needs_grad(n.ins);
  double acc = 0.0;
  for (float v : X.data) acc += v;
  n.val = Tensor({1}, {static_cast<float>(acc)});
  return push(std::move(n));
}

ValueId Tape::gather_cols(ValueId x, const std::vector<int>& col_index) {
  const Tensor& X = value(x);
  require_2d(X, "gather_cols");
  if (static_cast<int>(col_index.size()) != X.dim(0)) {
    throw DimensionError("gather_cols: one index per row required");
  }
  Node n;
  n.op = Op::GatherCols;
  n.ins = {x.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor::zeros({X.dim(0)});
  n.iaux = col_index;
  const int cols = X.dim(1);
  for (int i = 0; i < X.dim(0); ++i) {
    const int j = col_index[static_cast<size_t>(i)];
    if (j < 0 || j >= cols) throw InputError("gather_cols: column index out of range");
    n.val.data[static_cast<size_t>(i)] = X.data[static_cast<size_t>(i) * static_cast<size_t>(cols) + static_cast<size_t>(j)];
  }
  return push(std::move(n));
}

ValueId Tape::cw_hinge(ValueId logits, const std::vector<int>& labels, float kappa,
                       bool targeted) {
  const Tensor& Z = value(logits);
  require_2d(Z, "cw_hinge");
  const int N = Z.dim(0), C = Z.dim(1);
  if (static_cast<int>(labels.size()) != N) throw DimensionError("cw_hinge: one label per row required");
  Node n;
  n.op = Op::CwHinge;
  n.ins = {logits.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.val = Tensor::zeros({N});
  // iaux per row: [label, best_other, active]
  n.iaux.resize(static_cast<size_t>(N) * 3);
  n.faux = {kappa, targeted ? 1.0f : 0.0f};
  for (int i = 0; i < N; ++i) {
    const int t = labels[static_cast<size_t>(i)];
    if (t < 0 || t >= C) throw InputError("cw_hinge: label out of range");
    const float* z = Z.data.data() + static_cast<std::int64_t>(i) * C;
    int best = -1;
    for (int j = 0; j < C; ++j) {
      if (j == t) continue;
      if (best < 0 || z[j] > z[best]) best = j;
    }
    const float margin = targeted ? z[best] - z[t] : z[t] - z[best];
    const bool active = margin > -kappa;
    n.val.data[static_cast<size_t>(i)] = active ? margin : -kappa;
    n.iaux[static_cast<size_t>(i) * 3] = t;
    n.iaux[static_cast<size_t>(i) * 3 + 1] = best;
    n.iaux[static_cast<size_t>(i) * 3 + 2] = active ? 1 : 0;
  }
  return push(std::move(n));
}

ValueId Tape::softmax_cross_entropy(ValueId logits, const std::vector<int>& labels,
                                    Reduction reduction) {
  const Tensor& Z = value(logits);
  require_2d(Z, "softmax_cross_entropy");
  const int N = Z.dim(0), C = Z.dim(1);
  if (static_cast<int>(labels.size()) != N) {
    throw DimensionError("softmax_cross_entropy: one label per row required");
  }
  Node n;
  n.op = Op::SoftmaxCrossEntropy;
  n.ins = {logits.idx};
  n.needs_grad = any_needs_grad(n.ins);
  n.iaux = labels;
  n.iaux.push_back(reduction == Reduction::Mean ? 0 : 1);
  n.faux.resize(static_cast<size_t>(N) * C);  // probabilities, reused in backward
  double total = 0.0;
  for (int i = 0; i < N; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= C) throw InputError("softmax_cross_entropy: label out of range");
    const float* z = Z.data.data() + static_cast<std::int64_t>(i) * C;
    float* p = n.faux.data() + static_cast<std::int64_t>(i) * C;
    float mx = z[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, z[j]);
    double sum = 0.0;
    for (int j = 0; j < C; ++j) sum += std::exp(static_cast<double>(z[j]) - mx);
    for (int j = 0; j < C; ++j) {
      p[j] = static_cast<float>(std::exp(static_cast<double>(z[j]) - mx) / sum);
    }
    total += -(static_cast<double>(z[y]) - mx - std::log(sum));
  }
  if (reduction == Reduction::Mean) total /= N;
  n.val = Tensor({1}, {static_cast<float>(total)});
  return push(std::move(n));
}

void Tape::backward(ValueId root) {
  Node& r = at(root);
  if (val_of(r).size() != 1) {
    throw InputError("backward: root must be a scalar value");
  }
  for (Node& n : nodes_) n.grad.clear();
  if (!r.needs_grad) return;  // nothing on the tape requires gradients
  r.grad.assign(1, 1.0f);
  for (int i = root.idx; i >= 0; --i) backward_node(i);
}

namespace {
void ensure_grad(std::vector<float>& g, std::int64_t n) {
  if (g.empty()) g.assign(static_cast<size_t>(n), 0.0f);
}
}  // namespace

void Tape::backward_node(int idx) {
  Node& n = nodes_[static_cast<size_t>(idx)];
  if (n.grad.empty() || n.op == Op::Leaf || n.op == Op::LeafRef) return;

  auto in_node = [&](int slot) -> Node& { return nodes_[static_cast<size_t>(n.ins[static_cast<size_t>(slot)])]; };
  auto in_val = [&](int slot) -> const Tensor& { return val_of(n.ins[static_cast<size_t>(slot)]); };

  switch (n.op) {
    case Op::Matmul: {
      const Tensor& A = in_val(0);
      const Tensor& B = in_val(1);
      const std::int64_t m = A.dim(0), k = A.dim(1), p = B.dim(1);
      auto gC = as_cmat(n.grad, m, p);
      if (in_node(0).needs_grad) {
        ensure_grad(in_node(0).grad, A.size());
        as_mat(in_node(0).grad, m, k).noalias() += gC * as_mat(B, k, p).transpose();
      }
      if (in_node(1).needs_grad) {
        ensure_grad(in_node(1).grad, B.size());
        as_mat(in_node(1).grad, k, p).noalias() += as_mat(A, m, k).transpose() * gC;
      }
      break;
    }
    case Op::AddRowVec: {
      const Tensor& X = in_val(0);
      const int rows = X.dim(0), cols = X.dim(1);
      if (in_node(0).needs_grad) {
        ensure_grad(in_node(0).grad, X.size());
        for (size_t i = 0; i < n.grad.size(); ++i) in_node(0).grad[i] += n.grad[i];
      }
      if (in_node(1).needs_grad) {
        ensure_grad(in_node(1).grad, cols);
        for (int i = 0; i < rows; ++i) {
          const float* g = n.grad.data() + static_cast<std::int64_t>(i) * cols;
          for (int j = 0; j < cols; ++j) in_node(1).grad[static_cast<size_t>(j)] += g[j];
        }
      }
      break;
    }
    case Op::Conv2d: {
      const Tensor& X = in_val(0);
      const Tensor& K = in_val(1);
      const int N = n.iaux[0], C = n.iaux[1], H = n.iaux[2], W = n.iaux[3], F = n.iaux[4],
                k = n.iaux[5];
      const int oh = H - k + 1, ow = W - k + 1, hw = oh * ow, patch = C * k * k;
      // Transpose grad back to position-major [N*hw, F].
      std::vector<float> gt(static_cast<size_t>(N) * hw * F);
      for (int s = 0; s < N; ++s) {
        const float* src = n.grad.data() + static_cast<std::int64_t>(s) * F * hw;
        float* dst = gt.data() + static_cast<std::int64_t>(s) * hw * F;
        for (int f = 0; f < F; ++f) {
          for (int p = 0; p < hw; ++p) dst[static_cast<std::int64_t>(p) * F + f] = src[static_cast<std::int64_t>(f) * hw + p];
        }
      }
      if (in_node(2).needs_grad) {
        ensure_grad(in_node(2).grad, F);
        for (std::int64_t r = 0; r < static_cast<std::int64_t>(N) * hw; ++r) {
          const float* g = gt.data() + r * F;
          for (int f = 0; f < F; ++f) in_node(2).grad[static_cast<size_t>(f)] += g[f];
        }
      }
      if (in_node(1).needs_grad) {
        ensure_grad(in_node(1).grad, K.size());
        as_mat(in_node(1).grad, F, patch).noalias() +=
            as_cmat(gt, static_cast<std::int64_t>(N) * hw, F).transpose() *
            as_cmat(n.faux, static_cast<std::int64_t>(N) * hw, patch);
      }
      if (in_node(0).needs_grad) {
        ensure_grad(in_node(0).grad, X.size());
        std::vector<float> gcols(static_cast<size_t>(N) * hw * patch);
        as_mat(gcols, static_cast<std::int64_t>(N) * hw, patch).noalias() =
            as_cmat(gt, static_cast<std::int64_t>(N) * hw, F) * as_mat(K, F, patch);
        for (int s = 0; s < N; ++s) {
          col2im_sample(gcols.data() + static_cast<std::int64_t>(s) * hw * patch, C, H, W, k,
                        in_node(0).grad.data() + static_cast<std::int64_t>(s) * C * H * W);
        }
      }
      break;
    }
    case Op::MaxPool2d: {
      if (!in_node(0).needs_grad) break;
      ensure_grad(in_node(0).grad, in_val(0).size());
      for (size_t o = 0; o < n.grad.size(); ++o) {
        in_node(0).grad[static_cast<size_t>(n.iaux[o])] += n.grad[o];
      }
      break;
    }
    case Op::Relu: {
      if (!in_node(0).needs_grad) break;
      const Tensor& X = in_val(0);
      ensure_grad(in_node(0).grad, X.size());
      for (size_t i = 0; i < n.grad.size(); ++i) {
        if (X.data[i] > 0.0f) in_node(0).grad[i] += n.grad[i];
      }
      break;
    }
    case Op::Tanh: {
      if (!in_node(0).needs_grad) break;
      ensure_grad(in_node(0).grad, n.val.size());
      for (size_t i = 0; i < n.grad.size(); ++i) {
        const float y = n.val.data[i];
        in_node(0).grad[i] += n.grad[i] * (1.0f - y * y);
      }
      break;
    }
    case Op::Softmax: {
      if (!in_node(0).needs_grad) break;
      const int rows = n.val.dim(0), cols = n.val.dim(1);
      ensure_grad(in_node(0).grad, n.val.size());
      for (int i = 0; i < rows; ++i) {
        const float* y = n.val.data.data() + static_cast<std::int64_t>(i) * cols;
        const float* gy = n.grad.data() + static_cast<std::int64_t>(i) * cols;
        float dot = 0.0f;
        for (int j = 0; j < cols; ++j) dot += gy[j] * y[j];
        float* gx = in_node(0).grad.data() + static_cast<std::int64_t>(i) * cols;
        for (int j = 0; j < cols; ++j) gx[j] += (gy[j] - dot) * y[j];
      }
      break;
    }
    case Op::Reshape: {
      if (!in_node(0).needs_grad) break;
      ensure_grad(in_node(0).grad, in_val(0).size());
      for (size_t i = 0; i < n.grad.size(); ++i) in_node(0).grad[i] += n.grad[i];
      break;
    }
    case Op::ConcatCols: {
      const int rows = n.val.dim(0), total = n.val.dim(1);
      int off = 0;
      for (size_t s = 0; s < n.ins.size(); ++s) {
        Node& src = nodes_[static_cast<size_t>(n.ins[s])];
        const Tensor& t = val_of(src);
        const int c = t.dim(1);
        if (src.needs_grad) {
          ensure_grad(src.grad, t.size());
          for (int i = 0; i < rows; ++i) {
            const float* g = n.grad.data() + static_cast<std::int64_t>(i) * total + off;
            float* gs = src.grad.data() + static_cast<std::int64_t>(i) * c;
            for (int j = 0; j < c; ++j) gs[j] += g[j];
          }
        }
        off += c;
      }
      break;
    }
    case Op::Add: {
      for (int slot = 0; slot < 2; ++slot) {
        if (!in_node(slot).needs_grad) continue;
        ensure_grad(in_node(slot).grad, in_val(slot).size());
        for (size_t i = 0; i < n.grad.size(); ++i) in_node(slot).grad[i] += n.grad[i];
      }
      break;
    }
    case Op::Sub: {
      if (in_node(0).needs_grad) {
        ensure_grad(in_node(0).grad, in_val(0).size());
        for (size_t i = 0; i < n.grad.size(); ++i) in_node(0).grad[i] += n.grad[i];
      }
      if (in_node(1).needs_grad) {
        ensure_grad(in_node(1).grad, in_val(1).size());
        for (size_t i = 0; i < n.grad.size(); ++i) in_node(1).grad[i] -= n.grad[i];
      }
      break;
    }
    case Op::Mul: {
      const Tensor& A = in_val(0);
      const Tensor& B = in_val(1);
      if (in_node(0).needs_grad) {
        ensure_grad(in_node(0).grad, A.size());
        for (size_t i = 0; i < n.grad.size(); ++i) in_node(0).grad[i] += n.grad[i] * B.data[i];
      }
      if (in_node(1).needs_grad) {
        ensure_grad(in_node(1).grad, B.size());
        for (size_t i = 0; i < n.grad.size(); ++i) in_node(1).grad[i] += n.grad[i] * A.data[i];
      }
      break;
    }
    case Op::Affine: {
      if (!in_node(0).needs_grad) break;
      ensure_grad(in_node(0).grad, in_val(0).size());
      const float scale = n.faux[0];
      for (size_t i = 0; i < n.grad.size(); ++i) in_node(0).grad[i] += scale * n.grad[i];
      break;
    }
    case Op::RowSum: {
      if (!in_node(0).needs_grad) break;
      const Tensor& X = in_val(0);
      const int rows = X.dim(0), cols = X.dim(1);
      ensure_grad(in_node(0).grad, X.size());
      for (int i = 0; i < rows; ++i) {
        float* g = in_node(0).grad.data() + static_cast<std::int64_t>(i) * cols;
        const float gi = n.grad[static_cast<size_t>(i)];
        for (int j = 0; j < cols; ++j) g[j] += gi;
      }
      break;
    }
    case Op::SumAll: {
      if (!in_node(0).needs_grad) break;
      ensure_grad(in_node(0).grad, in_val(0).size());
      const float g = n.grad[0];
      for (float& v : in_node(0).grad) v += g;
      break;
    }
    case Op::GatherCols: {
      if (!in_node(0).needs_grad) break;
      const Tensor& X = in_val(0);
      const int cols = X.dim(1);
      ensure_grad(in_node(0).grad, X.size());
      for (int i = 0; i < X.dim(0); ++i) {
        in_node(0).grad[static_cast<size_t>(i) * static_cast<size_t>(cols) +
                        static_cast<size_t>(n.iaux[static_cast<size_t>(i)])] += n.grad[static_cast<size_t>(i)];
      }
      break;
    }
    case Op::CwHinge: {
      if (!in_node(0).needs_grad) break;
      const Tensor& Z = in_val(0);
      const int C = Z.dim(1);
      const bool targeted = n.faux[1] != 0.0f;
      ensure_grad(in_node(0).grad, Z.size());
      for (int i = 0; i < Z.dim(0); ++i) {
        if (!n.iaux[static_cast<size_t>(i) * 3 + 2]) continue;  // hinge clipped at -kappa
        const int t = n.iaux[static_cast<size_t>(i) * 3];
        const int best = n.iaux[static_cast<size_t>(i) * 3 + 1];
        const float g = n.grad[static_cast<size_t>(i)];
        float* gz = in_node(0).grad.data() + static_cast<std::int64_t>(i) * C;
        if (targeted) {
          gz[best] += g;
          gz[t] -= g;
        } else {
          gz[t] += g;
          gz[best] -= g;
        }
      }
      break;
    }
    case Op::SoftmaxCrossEntropy: {
      if (!in_node(0).needs_grad) break;
      const Tensor& Z = in_val(0);
      const int N = Z.dim(0), C = Z.dim(1);
      const bool mean = n.iaux[static_cast<size_t>(N)] == 0;
      const float scale = n.grad[0] * (mean ? 1.0f / static_cast<float>(N) : 1.0f);
      ensure_grad(in_node(0).grad, Z.size());
      for (int i = 0; i < N; ++i) {
        const float* p = n.faux.data() + static_cast<std::int64_t>(i) * C;
        float* g = in_node(0).grad.data() + static_cast<std::int64_t>(i) * C;
        const int y = n.iaux[static_cast<size_t>(i)];
        for (int j = 0; j < C; ++j) g[j] += scale * (p[j] - (j == y ? 1.0f : 0.0f));
      }
      break;
    }
    case Op::Leaf:
    case Op::LeafRef:
      break;
  }
}

}  // namespace dla
