#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dla/data.hpp"
#include "dla/model.hpp"

namespace dla {

struct AlarmMeta {
  std::vector<AttackTag> attack_tags;
  std::string target_model_id;
  int epochs = 10;
  int batch_size = 100;
  std::uint64_t seed = 0;
  TraceMode trace_mode = TraceMode::PostReluLogits;
};

// Binary trace classifier: flatten(d) -> dense 112/100/300/200/77 with ReLU
// -> dense(2). Bound to one target model's trace layout.
struct AlarmModel {
  NetworkModel net;
  AlarmMeta meta;

  int trace_width() const { return net.input_shape.empty() ? 0 : net.input_shape[0]; }
  std::string model_id() const { return net.model_id(); }
  std::string tag_string() const;
};

struct AlarmTrainConfig {
  int epochs = 10;
  int batch_size = 100;
  float learning_rate = 1e-3f;
  std::uint64_t seed = 0;
};

// One trace row per image via the target's traced forward; classification
// outputs are discarded.
ActivationTraceSet extract_features(const NetworkModel& target, const Tensor& images, int label,
                                    AttackTag tag, Split split);

AlarmModel train_alarm(const ActivationTraceSet& benign, const ActivationTraceSet& adversarial,
                       const AlarmTrainConfig& cfg);

// One alarm over the union of several attacks' features, class-balanced.
AlarmModel train_combined_alarm(
    const std::vector<std::pair<ActivationTraceSet, ActivationTraceSet>>& per_attack_sets,
    const AlarmTrainConfig& cfg);

struct AlarmScores {
  std::vector<float> scores;            // softmax probability of "adversarial"
  std::vector<std::uint8_t> verdicts;   // score > 0.5
};

// Tie rule: a score of exactly 0.5 is benign.
inline bool alarm_verdict(float score) { return score > 0.5f; }

AlarmScores alarm_classify(const AlarmModel& alarm, const Tensor& traces);
AlarmScores alarm_classify(const AlarmModel& alarm, const ActivationTraceSet& traces);

struct VerdictPolicy {
  enum class Mode { Any, Majority, All };
  Mode mode = Mode::Any;
  std::vector<const AlarmModel*> alarms;
};

bool combine_verdicts(VerdictPolicy::Mode mode, const std::vector<std::uint8_t>& votes);

struct SecureResult {
  std::vector<int> predicted_class;
  std::vector<std::uint8_t> attack_flag;
  Tensor per_alarm_scores;  // [N, n_alarms]
  Tensor logits;            // bit-identical to the unsecured forward
};

// One traced forward pass feeds the class prediction and every alarm. The
// target's prediction is never altered.
SecureResult secure_classify(const NetworkModel& target, const VerdictPolicy& policy,
                             const Tensor& x);

// Single-tape variant used internally and by the evaluation-count probe.
SecureResult secure_classify_on_tape(Tape& tape, const NetworkModel& target,
                                     const VerdictPolicy& policy, const Tensor& x);

void save_alarm(const AlarmModel& alarm, const std::filesystem::path& path);
AlarmModel load_alarm(const std::filesystem::path& path);

}  // namespace dla
