#pragma once

#include <vector>

#include "dla/tensor.hpp"

namespace dla {

enum class Op {
  Leaf,
  LeafRef,
  Matmul,
  AddRowVec,
  Conv2d,
  MaxPool2d,
  Relu,
  Tanh,
  Softmax,
  Reshape,
  ConcatCols,
  Add,
  Sub,
  Mul,
  Affine,
  RowSum,
  SumAll,
  GatherCols,
  CwHinge,
  SoftmaxCrossEntropy,
};

enum class Reduction { Mean, Sum };

// Reverse-mode tape over dense float tensors. Nodes are appended in forward
// order, so reversed insertion order is a valid reverse-topological order and
// backward() visits each node exactly once. One tape per forward pass;
// distinct tapes may run concurrently over a shared read-only model.
class Tape {
 public:
  struct ValueId {
    int idx = -1;
    bool valid() const { return idx >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf owning a copy of t.
  ValueId leaf(Tensor t, bool requires_grad = false);
  // Leaf referencing caller-owned storage; caller must outlive the tape.
  // Used for model parameters so forward passes never copy weight matrices.
  ValueId leaf_ref(const Tensor& t, bool requires_grad = false);

  ValueId matmul(ValueId a, ValueId b);
  ValueId add_rowvec(ValueId x, ValueId bias);
  ValueId conv2d(ValueId input, ValueId kernels, ValueId bias);
  ValueId maxpool2d(ValueId input, int size);
  ValueId relu(ValueId x);
  ValueId tanh(ValueId x);
  ValueId softmax(ValueId x);
  ValueId reshape(ValueId x, Shape shape);
  ValueId concat_cols(const std::vector<ValueId>& xs);
  ValueId add(ValueId a, ValueId b);
  ValueId sub(ValueId a, ValueId b);
  ValueId mul(ValueId a, ValueId b);
  ValueId affine(ValueId x, float scale, float shift);
  ValueId row_sum(ValueId x);
  ValueId sum_all(ValueId x);
  ValueId gather_cols(ValueId x, const std::vector<int>& col_index);
  // Carlini-Wagner misclassification hinge, one value per row of logits.
  // targeted: max(max_{j != t} z_j - z_t, -kappa), t = target label.
  // untargeted: max(z_y - max_{j != y} z_j, -kappa), y = true label.
  ValueId cw_hinge(ValueId logits, const std::vector<int>& labels, float kappa, bool targeted);
  ValueId softmax_cross_entropy(ValueId logits, const std::vector<int>& labels,
                                Reduction reduction = Reduction::Mean);

  const Tensor& value(ValueId id) const;
  // Runs the reverse pass from a scalar node. Clears previous gradients
  // first, so it may be called repeatedly from different roots.
  void backward(ValueId root);
  bool has_grad(ValueId id) const;
  const std::vector<float>& grad(ValueId id) const;
  Tensor grad_tensor(ValueId id) const;

  size_t node_count() const { return nodes_.size(); }
  // Evaluation-count probe: how many nodes of one op kind were recorded.
  int op_count(Op op) const;
  // Parameter-freezing probe: LeafRef nodes carrying a gradient.
  int ref_grad_count() const;

 private:
  struct Node {
    Op op;
    std::vector<int> ins;
    Tensor val;                 // owned forward value (unused for LeafRef)
    const Tensor* ref = nullptr;
    bool needs_grad = false;
    std::vector<float> grad;
    std::vector<int> iaux;    // op state: labels, argmax picks, shapes
    std::vector<float> faux;  // op state: saved buffers (im2col, probs), scalars
  };

  const Tensor& val_of(const Node& n) const { return n.ref ? *n.ref : n.val; }
  const Tensor& val_of(int idx) const { return val_of(nodes_[static_cast<size_t>(idx)]); }
  Node& at(ValueId id);
  const Node& at(ValueId id) const;
  ValueId push(Node n);
  bool any_needs_grad(const std::vector<int>& ins) const;
  void backward_node(int idx);

  std::vector<Node> nodes_;
};

using ValueId = Tape::ValueId;

}  // namespace dla
