#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dla/alarm.hpp"
#include "dla/data.hpp"

namespace dla {

// Positive class is "adversarial" everywhere.
struct ConfusionCounts {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::int64_t total() const { return tp + tn + fp + fn; }
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double fpr = 0.0;
  double fnr = 0.0;
  bool degenerate = false;  // some denominator was zero; affected values are 0
};

Metrics metrics(const ConfusionCounts& counts);

ConfusionCounts count_verdicts(const std::vector<std::uint8_t>& verdicts,
                               const std::vector<int>& labels);

struct EvalReport {
  std::string name;
  ConfusionCounts counts;
  Metrics m;
  nlohmann::json meta;

  nlohmann::json to_json() const;
};

EvalReport evaluate_alarm(const AlarmModel& alarm, const ActivationTraceSet& test_set,
                          const std::string& name);

struct CrossCell {
  double accuracy = 0.0;
  double f1 = 0.0;
};

// Rows are alarm models, columns attack test sets; diagonal cells pair an
// alarm with its own attack's features.
struct CrossTestMatrix {
  std::vector<std::string> alarm_names;
  std::vector<std::string> set_names;
  std::vector<std::vector<CrossCell>> cells;

  double row_mean_f1(size_t row) const;
  double column_mean_f1(size_t col, int skip_row = -1) const;
  nlohmann::json to_json() const;
  std::string render() const;
};

CrossTestMatrix cross_test(const std::vector<const AlarmModel*>& alarms,
                           const std::vector<std::string>& alarm_names,
                           const std::vector<ActivationTraceSet>& test_sets,
                           const std::vector<std::string>& set_names);

struct ControlConfig {
  AlarmTrainConfig alarm;
  std::uint64_t seed = 0;
  int min_misclassified = 50;
};

// Trains an alarm on traces of correctly vs incorrectly classified benign
// training images and scores it on the test split.
EvalReport misclassification_control(const NetworkModel& target, const LabeledImageSet& train,
                                     const LabeledImageSet& test, const ControlConfig& cfg);

// Scores an alarm against {clean benign + noise-matched benign} negatives and
// adversarial positives.
EvalReport noise_control_eval(const AlarmModel& alarm, const NetworkModel& target,
                              const LabeledImageSet& noisy_benign,
                              const LabeledImageSet& clean_benign, const AdversarialSet& adv_test,
                              std::uint64_t seed);

struct PcaResult {
  Tensor coordinates;                           // [M,k]
  Tensor components;                            // [k,d], orthonormal rows
  std::vector<double> explained_variance;       // descending
  std::vector<double> explained_variance_ratio; // fractions of total variance
  std::vector<float> mean;                      // [d]
};

PcaResult pca_project(const ActivationTraceSet& traces, int k);

// Tab-separated coordinates with a header row; one line per sample.
void write_pca_tsv(const PcaResult& pca, const ActivationTraceSet& traces,
                   const std::filesystem::path& path);

// Machine-readable JSON plus a plain-text table next to it. Deterministic:
// identical results produce identical bytes.
void emit_report(const nlohmann::json& results, const std::filesystem::path& json_path);
void emit_report(const nlohmann::json& results, const std::filesystem::path& json_path,
                 const std::filesystem::path& table_path);
std::string render_report_table(const nlohmann::json& results);

}  // namespace dla
