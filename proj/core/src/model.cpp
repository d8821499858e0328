#include "dla/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "dla/container.hpp"
#include "dla/errors.hpp"
#include "dla/rng.hpp"

namespace dla {

std::string to_string(TraceMode m) {
  switch (m) {
    case TraceMode::PostReluLogits: return "post-relu+logits";
    case TraceMode::PreActivation: return "all-pre-activation";
    case TraceMode::PostActivation: return "all-post-activation";
  }
  return "unknown";
}

TraceMode trace_mode_from_string(const std::string& s) {
  if (s == "post-relu+logits") return TraceMode::PostReluLogits;
  if (s == "all-pre-activation") return TraceMode::PreActivation;
  if (s == "all-post-activation") return TraceMode::PostActivation;
  throw InputError("unknown trace mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InputError("train config: epochs must be >= 1");
  if (batch_size < 1) throw InputError("train config: batch size must be >= 1");
}

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Relu: return "relu";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

LayerKind kind_from_name(const std::string& s) {
  if (s == "dense") return LayerKind::Dense;
  if (s == "conv") return LayerKind::Conv;
  if (s == "maxpool") return LayerKind::MaxPool;
  if (s == "relu") return LayerKind::Relu;
  if (s == "flatten") return LayerKind::Flatten;
  throw FormatError("unknown layer kind '" + s + "'");
}

Tensor he_uniform(Shape shape, int fan_in, std::mt19937& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
  for (float& v : t.data) v = uniform_float(rng, -limit, limit);
  return t;
}

std::uint64_t fnv1a(const void* data, size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

int NetworkModel::trace_width() const {
  int w = 0;
  for (const Layer& l : layers) {
    if (l.spec.kind == LayerKind::Dense && l.spec.is_dense_tap) w += l.spec.units;
  }
  return w;
}

std::int64_t NetworkModel::parameter_count() const {
  std::int64_t n = 0;
  for (const Layer& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

std::string NetworkModel::arch_json() const {
  nlohmann::json arch;
  arch["name"] = arch_name;
  arch["input_shape"] = input_shape;
  arch["class_count"] = class_count;
  arch["trace_mode"] = to_string(trace_mode);
  nlohmann::json ls = nlohmann::json::array();
  for (const Layer& l : layers) {
    nlohmann::json j;
    j["kind"] = kind_name(l.spec.kind);
    if (l.spec.kind == LayerKind::Dense) {
      j["units"] = l.spec.units;
      j["tap"] = l.spec.is_dense_tap;
    } else if (l.spec.kind == LayerKind::Conv) {
      j["filters"] = l.spec.filters;
      j["ksize"] = l.spec.ksize;
    } else if (l.spec.kind == LayerKind::MaxPool) {
      j["pool"] = l.spec.pool;
    }
    ls.push_back(std::move(j));
  }
  arch["layers"] = std::move(ls);
  return arch.dump();
}

std::string NetworkModel::model_id() const {
  const std::string arch = arch_json();
  std::uint64_t h = fnv1a(arch.data(), arch.size(), 1469598103934665603ULL);
  for (const Layer& l : layers) {
    h = fnv1a(l.weight.data.data(), l.weight.data.size() * 4, h);
    h = fnv1a(l.bias.data.data(), l.bias.data.size() * 4, h);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

ValueId NetworkModel::build(Tape& tape, ValueId x, bool params_need_grad, ValueId* trace_out,
                            std::vector<std::pair<ValueId, ValueId>>* param_ids) const {
  std::vector<ValueId> taps;
  if (param_ids) param_ids->assign(layers.size(), {ValueId{}, ValueId{}});
  int pending_dense = -1;  // index into taps of a dense output awaiting its relu
  for (size_t li = 0; li < layers.size(); ++li) {
    const Layer& l = layers[li];
    switch (l.spec.kind) {
      case LayerKind::Flatten: {
        const Tensor& v = tape.value(x);
        x = tape.reshape(x, {v.dim(0), static_cast<int>(v.size() / v.dim(0))});
        break;
      }
      case LayerKind::Dense: {
        ValueId w = tape.leaf_ref(l.weight, params_need_grad);
        ValueId b = tape.leaf_ref(l.bias, params_need_grad);
        if (param_ids) (*param_ids)[li] = {w, b};
        x = tape.add_rowvec(tape.matmul(x, w), b);
        if (l.spec.is_dense_tap && trace_out) {
          taps.push_back(x);
          const bool hidden_relu_next =
              li + 1 < layers.size() && layers[li + 1].spec.kind == LayerKind::Relu;
          if (hidden_relu_next && trace_mode != TraceMode::PreActivation) {
            pending_dense = static_cast<int>(taps.size()) - 1;
          } else if (li + 1 >= layers.size() && trace_mode == TraceMode::PostActivation) {
            // final layer contributes softmax outputs in post-activation mode
            taps.back() = tape.softmax(x);
          }
        }
        break;
      }
      case LayerKind::Conv: {
        ValueId k = tape.leaf_ref(l.weight, params_need_grad);
        ValueId b = tape.leaf_ref(l.bias, params_need_grad);
        if (param_ids) (*param_ids)[li] = {k, b};
        x = tape.conv2d(x, k, b);
        break;
      }
      case LayerKind::MaxPool:
        x = tape.maxpool2d(x, l.spec.pool);
        break;
      case LayerKind::Relu:
        x = tape.relu(x);
        if (pending_dense >= 0) {
          taps[static_cast<size_t>(pending_dense)] = x;
          pending_dense = -1;
        }
        break;
    }
  }
  if (trace_out) {
    *trace_out = tape.concat_cols(taps);
  }
  return x;
}

ValueId NetworkModel::forward(Tape& tape, ValueId x, bool params_need_grad) const {
  return build(tape, x, params_need_grad, nullptr, nullptr);
}

NetworkModel::TracedForward NetworkModel::forward_with_trace(Tape& tape, ValueId x,
                                                             bool params_need_grad) const {
  TracedForward out;
  out.logits = build(tape, x, params_need_grad, &out.trace, nullptr);
  return out;
}

ValueId NetworkModel::forward_trainable(Tape& tape, ValueId x,
                                        std::vector<std::pair<ValueId, ValueId>>& param_ids) const {
  return build(tape, x, /*params_need_grad=*/true, nullptr, &param_ids);
}

Tensor NetworkModel::forward_batch(const Tensor& inputs, int batch) const {
  const int n = inputs.dim(0);
  Tensor logits = Tensor::zeros({n, class_count});
  for (int start = 0; start < n; start += batch) {
    const int count = std::min(batch, n - start);
    Tape tape;
    ValueId x = tape.leaf(slice_rows(inputs, start, count));
    ValueId y = forward(tape, x);
    const Tensor& v = tape.value(y);
    std::copy(v.data.begin(), v.data.end(),
              logits.data.begin() + static_cast<std::int64_t>(start) * class_count);
  }
  return logits;
}

std::vector<int> NetworkModel::predict(const Tensor& inputs, int batch) const {
  Tensor logits = forward_batch(inputs, batch);
  std::vector<int> out(static_cast<size_t>(logits.dim(0)));
  for (int i = 0; i < logits.dim(0); ++i) {
    out[static_cast<size_t>(i)] = argmax_row(logits.row(i), class_count);
  }
  return out;
}

NetworkModel::BatchTrace NetworkModel::traced_batch(const Tensor& inputs, int batch) const {
  const int n = inputs.dim(0);
  const int tw = trace_width();
  BatchTrace out;
  out.logits = Tensor::zeros({n, class_count});
  out.traces = Tensor::zeros({n, tw});
  for (int start = 0; start < n; start += batch) {
    const int count = std::min(batch, n - start);
    Tape tape;
    ValueId x = tape.leaf(slice_rows(inputs, start, count));
    TracedForward f = forward_with_trace(tape, x);
    const Tensor& lv = tape.value(f.logits);
    const Tensor& tv = tape.value(f.trace);
    std::copy(lv.data.begin(), lv.data.end(),
              out.logits.data.begin() + static_cast<std::int64_t>(start) * class_count);
    std::copy(tv.data.begin(), tv.data.end(),
              out.traces.data.begin() + static_cast<std::int64_t>(start) * tw);
  }
  return out;
}

NetworkModel build_mlp512(std::uint64_t seed) {
  std::mt19937 rng(static_cast<std::uint32_t>(splitmix64(seed ^ 0x6d6c70ULL)));
  NetworkModel m;
  m.arch_name = "mlp512";
  m.input_shape = {1, 28, 28};
  m.class_count = 10;
  m.layers.push_back({{LayerKind::Flatten}, {}, {}});
  m.layers.push_back({{LayerKind::Dense, 512, 0, 0, 0, true}, he_uniform({784, 512}, 784, rng),
                      Tensor::zeros({512})});
  m.layers.push_back({{LayerKind::Relu}, {}, {}});
  m.layers.push_back({{LayerKind::Dense, 10, 0, 0, 0, true}, he_uniform({512, 10}, 512, rng),
                      Tensor::zeros({10})});
  return m;
}

NetworkModel build_lenet(std::uint64_t seed) {
  std::mt19937 rng(static_cast<std::uint32_t>(splitmix64(seed ^ 0x6c656eULL)));
  NetworkModel m;
  m.arch_name = "lenet";
  m.input_shape = {1, 28, 28};
  m.class_count = 10;
  m.layers.push_back({{LayerKind::Conv, 0, 6, 5, 0, false}, he_uniform({6, 1, 5, 5}, 25, rng),
                      Tensor::zeros({6})});
  m.layers.push_back({{LayerKind::Relu}, {}, {}});
  m.layers.push_back({{LayerKind::MaxPool, 0, 0, 0, 2, false}, {}, {}});
  m.layers.push_back({{LayerKind::Conv, 0, 16, 5, 0, false}, he_uniform({16, 6, 5, 5}, 150, rng),
                      Tensor::zeros({16})});
  m.layers.push_back({{LayerKind::Relu}, {}, {}});
  m.layers.push_back({{LayerKind::MaxPool, 0, 0, 0, 2, false}, {}, {}});
  m.layers.push_back({{LayerKind::Flatten}, {}, {}});
  m.layers.push_back({{LayerKind::Dense, 120, 0, 0, 0, true}, he_uniform({256, 120}, 256, rng),
                      Tensor::zeros({120})});
  m.layers.push_back({{LayerKind::Relu}, {}, {}});
  m.layers.push_back({{LayerKind::Dense, 84, 0, 0, 0, true}, he_uniform({120, 84}, 120, rng),
                      Tensor::zeros({84})});
  m.layers.push_back({{LayerKind::Relu}, {}, {}});
  m.layers.push_back({{LayerKind::Dense, 10, 0, 0, 0, true}, he_uniform({84, 10}, 84, rng),
                      Tensor::zeros({10})});
  return m;
}

NetworkModel build_alarm_net(int trace_width, std::uint64_t seed) {
  std::mt19937 rng(static_cast<std::uint32_t>(splitmix64(seed ^ 0x616c61726dULL)));
  NetworkModel m;
  m.arch_name = "alarm";
  m.input_shape = {trace_width};
  m.class_count = 2;
  m.layers.push_back({{LayerKind::Flatten}, {}, {}});
  int in = trace_width;
  for (int width : {112, 100, 300, 200, 77}) {
    m.layers.push_back({{LayerKind::Dense, width, 0, 0, 0, true}, he_uniform({in, width}, in, rng),
                        Tensor::zeros({width})});
    m.layers.push_back({{LayerKind::Relu}, {}, {}});
    in = width;
  }
  m.layers.push_back({{LayerKind::Dense, 2, 0, 0, 0, true}, he_uniform({in, 2}, in, rng),
                      Tensor::zeros({2})});
  return m;
}

NetworkModel build_named(const std::string& name, std::uint64_t seed) {
  if (name == "mlp512") return build_mlp512(seed);
  if (name == "lenet") return build_lenet(seed);
  throw InputError("unknown model name '" + name + "' (expected mlp512 or lenet)");
}

TrainLog train(NetworkModel& model, const Tensor& inputs, const std::vector<int>& labels,
               const TrainConfig& cfg) {
  cfg.validate();
  const int n = inputs.dim(0);
  if (n != static_cast<int>(labels.size())) {
    throw InputError("train: input count does not match label count");
  }
  for (int l : labels) {
    if (l < 0 || l >= model.class_count) throw InputError("train: label out of range");
  }

  struct AdamState {
    std::vector<float> m, v;
  };
  std::vector<AdamState> adam_w(model.layers.size()), adam_b(model.layers.size());
  if (cfg.optimizer == TrainConfig::Optimizer::Adam) {
    for (size_t i = 0; i < model.layers.size(); ++i) {
      adam_w[i].m.assign(model.layers[i].weight.data.size(), 0.0f);
      adam_w[i].v.assign(model.layers[i].weight.data.size(), 0.0f);
      adam_b[i].m.assign(model.layers[i].bias.data.size(), 0.0f);
      adam_b[i].v.assign(model.layers[i].bias.data.size(), 0.0f);
    }
  }
  std::int64_t step = 0;

  std::mt19937 shuffle_rng(static_cast<std::uint32_t>(splitmix64(cfg.seed ^ 0x747261696eULL)));
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  TrainLog log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::int64_t correct = 0;

    for (int start = 0; start < n; start += cfg.batch_size) {
      const int count = std::min(cfg.batch_size, n - start);
      Shape bs = inputs.shape;
      bs[0] = count;
      Tensor batch = Tensor::zeros(bs);
      std::vector<int> batch_labels(static_cast<size_t>(count));
      const std::int64_t stride = inputs.size() / n;
      for (int i = 0; i < count; ++i) {
        const int src = order[static_cast<size_t>(start + i)];
        std::copy_n(inputs.data.begin() + src * stride, stride,
                    batch.data.begin() + static_cast<std::int64_t>(i) * stride);
        batch_labels[static_cast<size_t>(i)] = labels[static_cast<size_t>(src)];
      }

      Tape tape;
      ValueId x = tape.leaf(std::move(batch));
      std::vector<std::pair<ValueId, ValueId>> layer_params;
      ValueId cur = model.forward_trainable(tape, x, layer_params);
      ValueId loss = tape.softmax_cross_entropy(cur, batch_labels, Reduction::Mean);
      const float loss_val = tape.value(loss).data[0];
      if (!std::isfinite(loss_val)) {
        throw TrainingError("training diverged (non-finite loss) in epoch " +
                            std::to_string(epoch + 1));
      }
      loss_sum += static_cast<double>(loss_val) * count;
      const Tensor& lv = tape.value(cur);
      for (int i = 0; i < count; ++i) {
        if (argmax_row(lv.row(i), model.class_count) == batch_labels[static_cast<size_t>(i)]) {
          ++correct;
        }
      }

      tape.backward(loss);
      ++step;
      for (size_t li = 0; li < model.layers.size(); ++li) {
        Layer& l = model.layers[li];
        if (l.weight.size() == 0) continue;
        auto apply = [&](Tensor& param, ValueId id, AdamState& st) {
          if (!tape.has_grad(id)) return;
          const std::vector<float>& g = tape.grad(id);
          if (cfg.optimizer == TrainConfig::Optimizer::Sgd) {
            for (size_t i = 0; i < g.size(); ++i) param.data[i] -= cfg.learning_rate * g[i];
          } else {
            const float bc1 = 1.0f - std::pow(cfg.beta1, static_cast<float>(step));
            const float bc2 = 1.0f - std::pow(cfg.beta2, static_cast<float>(step));
            for (size_t i = 0; i < g.size(); ++i) {
              st.m[i] = cfg.beta1 * st.m[i] + (1.0f - cfg.beta1) * g[i];
              st.v[i] = cfg.beta2 * st.v[i] + (1.0f - cfg.beta2) * g[i] * g[i];
              const float mhat = st.m[i] / bc1;
              const float vhat = st.v[i] / bc2;
              param.data[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
            }
          }
        };
        apply(l.weight, layer_params[li].first, adam_w[li]);
        apply(l.bias, layer_params[li].second, adam_b[li]);
      }
    }
    log.push_back({epoch + 1, loss_sum / n, static_cast<double>(correct) / n});
  }
  return log;
}

TrainLog train(NetworkModel& model, const LabeledImageSet& data, const TrainConfig& cfg) {
  return train(model, data.images, data.labels, cfg);
}

double accuracy(const NetworkModel& model, const Tensor& inputs, const std::vector<int>& labels) {
  const std::vector<int> pred = model.predict(inputs);
  std::int64_t correct = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (pred[i] == labels[i]) ++correct;
  }
  return labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const NetworkModel& model, const LabeledImageSet& data) {
  return accuracy(model, data.images, data.labels);
}

void save_model(const NetworkModel& model, const std::filesystem::path& path) {
  ContainerWriter w("model");
  w.meta()["arch"] = nlohmann::json::parse(model.arch_json());
  w.meta()["model_id"] = model.model_id();
  for (size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& l = model.layers[i];
    if (l.weight.size() == 0) continue;
    w.add_f32("layer" + std::to_string(i) + ".weight", l.weight);
    w.add_f32("layer" + std::to_string(i) + ".bias", l.bias);
  }
  w.write(path);
}

NetworkModel load_model(const std::filesystem::path& path) {
  Container c = Container::load(path);
  if (c.kind() != "model") {
    throw FormatError("'" + path.string() + "' is a " + c.kind() + " container, expected model");
  }
  const nlohmann::json& arch = c.meta().at("arch");
  NetworkModel m;
  m.arch_name = arch.at("name").get<std::string>();
  m.input_shape = arch.at("input_shape").get<Shape>();
  m.class_count = arch.at("class_count").get<int>();
  m.trace_mode = trace_mode_from_string(arch.at("trace_mode").get<std::string>());
  size_t li = 0;
  for (const auto& j : arch.at("layers")) {
    Layer l;
    l.spec.kind = kind_from_name(j.at("kind").get<std::string>());
    if (l.spec.kind == LayerKind::Dense) {
      l.spec.units = j.at("units").get<int>();
      l.spec.is_dense_tap = j.at("tap").get<bool>();
    } else if (l.spec.kind == LayerKind::Conv) {
      l.spec.filters = j.at("filters").get<int>();
      l.spec.ksize = j.at("ksize").get<int>();
    } else if (l.spec.kind == LayerKind::MaxPool) {
      l.spec.pool = j.at("pool").get<int>();
    }
    if (l.spec.kind == LayerKind::Dense || l.spec.kind == LayerKind::Conv) {
      l.weight = c.f32("layer" + std::to_string(li) + ".weight");
      l.bias = c.f32("layer" + std::to_string(li) + ".bias");
    }
    m.layers.push_back(std::move(l));
    ++li;
  }
  const std::string stored_id = c.meta().value("model_id", "");
  if (!stored_id.empty() && stored_id != m.model_id()) {
    throw FormatError("'" + path.string() + "': stored model id " + stored_id +
                      " does not match recomputed id " + m.model_id());
  }
  return m;
}

NetworkModel load_model(const std::filesystem::path& path, const std::string& expected_arch) {
  NetworkModel m = load_model(path);
  if (m.arch_name != expected_arch) {
    throw FormatError("'" + path.string() + "': architecture is '" + m.arch_name +
                      "', expected '" + expected_arch + "'");
  }
  return m;
}

Tensor input_gradient(const NetworkModel& model, const Tensor& x, const InputLossSpec& spec) {
  if (static_cast<int>(spec.labels.size()) != x.dim(0)) {
    throw InputError("input_gradient: one label per sample required");
  }
  for (int l : spec.labels) {
    if (l < 0 || l >= model.class_count) throw InputError("input_gradient: label out of range");
  }
  Tape tape;
  ValueId xin = tape.leaf(x, /*requires_grad=*/true);
  ValueId logits = model.forward(tape, xin, /*params_need_grad=*/false);
  ValueId loss = tape.softmax_cross_entropy(logits, spec.labels, Reduction::Sum);
  tape.backward(loss);
  return tape.grad_tensor(xin);
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  const int rows = logits.dim(0), cols = logits.dim(1);
  for (int i = 0; i < rows; ++i) {
    float* r = out.row(i);
    float mx = r[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, r[j]);
    float sum = 0.0f;
    for (int j = 0; j < cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    for (int j = 0; j < cols; ++j) r[j] /= sum;
  }
  return out;
}

int argmax_row(const float* row, int n) {
  int best = 0;
  for (int j = 1; j < n; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

}  // namespace dla
