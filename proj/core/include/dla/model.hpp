#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dla/data.hpp"
#include "dla/tape.hpp"
#include "dla/tensor.hpp"

namespace dla {

enum class LayerKind { Dense, Conv, MaxPool, Relu, Flatten };

struct LayerSpec {
  LayerKind kind;
  int units = 0;    // dense output width
  int filters = 0;  // conv filter count
  int ksize = 0;    // conv kernel size
  int pool = 0;     // pooling window
  bool is_dense_tap = false;
};

// Which values a dense layer contributes to the activation trace.
// PostReluLogits: hidden layers after their ReLU, final layer raw logits.
enum class TraceMode { PostReluLogits, PreActivation, PostActivation };
std::string to_string(TraceMode m);
TraceMode trace_mode_from_string(const std::string& s);

struct Layer {
  LayerSpec spec;
  Tensor weight;  // dense [in,out], conv [F,C,k,k]
  Tensor bias;    // dense [out], conv [F]
};

struct TrainConfig {
  enum class Optimizer { Sgd, Adam };
  Optimizer optimizer = Optimizer::Sgd;
  float learning_rate = 0.1f;
  int epochs = 10;
  int batch_size = 100;
  std::uint64_t seed = 0;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;

  void validate() const;
};

struct EpochStats {
  int epoch;
  double mean_loss;
  double accuracy;  // on the training batches of this epoch
};
using TrainLog = std::vector<EpochStats>;

// Layered feed-forward classifier with activation taps on all dense layers.
class NetworkModel {
 public:
  std::string arch_name;  // "mlp512", "lenet", "alarm", ...
  std::vector<Layer> layers;
  Shape input_shape;  // per sample, e.g. {1,28,28} or {trace_width}
  int class_count = 0;
  TraceMode trace_mode = TraceMode::PostReluLogits;

  int trace_width() const;
  std::int64_t parameter_count() const;
  // Stable content hash over architecture and parameter bytes.
  std::string model_id() const;
  std::string arch_json() const;

  ValueId forward(Tape& tape, ValueId x, bool params_need_grad = false) const;

  struct TracedForward {
    ValueId logits;
    ValueId trace;
  };
  TracedForward forward_with_trace(Tape& tape, ValueId x, bool params_need_grad = false) const;

  // Forward pass that also hands back the (weight, bias) tape ids per layer,
  // with gradients enabled. Used by the optimizers.
  ValueId forward_trainable(Tape& tape, ValueId x,
                            std::vector<std::pair<ValueId, ValueId>>& param_ids) const;

  // Batched no-grad helpers.
  Tensor forward_batch(const Tensor& inputs, int batch = 256) const;  // logits [N,C]
  std::vector<int> predict(const Tensor& inputs, int batch = 256) const;
  struct BatchTrace {
    Tensor logits;  // [N,C]
    Tensor traces;  // [N,trace_width]
  };
  BatchTrace traced_batch(const Tensor& inputs, int batch = 256) const;

 private:
  ValueId build(Tape& tape, ValueId x, bool params_need_grad, ValueId* trace_out,
                std::vector<std::pair<ValueId, ValueId>>* param_ids) const;
};

// conv(6,5x5)-relu-pool2-conv(16,5x5)-relu-pool2-dense(120)-relu-dense(84)-relu-dense(10)
NetworkModel build_lenet(std::uint64_t seed);
// flatten-dense(512)-relu-dense(10)
NetworkModel build_mlp512(std::uint64_t seed);
// flatten-dense(112/100/300/200/77 with ReLU)-dense(2)
NetworkModel build_alarm_net(int trace_width, std::uint64_t seed);
NetworkModel build_named(const std::string& name, std::uint64_t seed);

TrainLog train(NetworkModel& model, const Tensor& inputs, const std::vector<int>& labels,
               const TrainConfig& cfg);
TrainLog train(NetworkModel& model, const LabeledImageSet& data, const TrainConfig& cfg);

double accuracy(const NetworkModel& model, const Tensor& inputs, const std::vector<int>& labels);
double accuracy(const NetworkModel& model, const LabeledImageSet& data);

void save_model(const NetworkModel& model, const std::filesystem::path& path);
NetworkModel load_model(const std::filesystem::path& path);
// Throws FormatError when the stored architecture name differs.
NetworkModel load_model(const std::filesystem::path& path, const std::string& expected_arch);

// Descriptor for gradients of a scalar loss with respect to the input.
struct InputLossSpec {
  enum class Kind { CrossEntropyTrue, CrossEntropyTarget } kind = Kind::CrossEntropyTrue;
  std::vector<int> labels;  // true labels or attack targets, one per row
};

// d loss / d x with model parameters frozen.
Tensor input_gradient(const NetworkModel& model, const Tensor& x, const InputLossSpec& spec);

Tensor softmax_rows(const Tensor& logits);
int argmax_row(const float* row, int n);

}  // namespace dla
