#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dla/alarm.hpp"
#include "dla/attacks.hpp"

namespace dla {

// Detector-aware C&W: the optimization objective adds the alarm's evasion
// hinge on top of the target's misclassification hinge, both differentiated
// through one shared traced forward pass.
struct AdaptiveConfig {
  AttackConfig cw;           // kind must be CW
  float alarm_weight = 1.0f; // 0 collapses to the plain attack

  // max-iteration 3000, batch 100, learning rate 0.005, 20 binary-search steps
  static AdaptiveConfig full_preset();
  // Same settings with max-iteration 300.
  static AdaptiveConfig reduced_preset();
};

struct AdaptiveOutcome {
  Tensor perturbed;
  std::vector<std::uint8_t> success;  // label flip AND alarm says benign
  std::vector<float> l2;
  std::vector<std::uint8_t> reverified;  // success confirmed via secure_classify
};

AdaptiveOutcome adaptive_cw(const NetworkModel& target, const AlarmModel& alarm, const Tensor& x,
                            const std::vector<int>& true_labels, const std::vector<int>& targets,
                            const AdaptiveConfig& cfg);

struct AdaptiveResult {
  int sample_count = 0;
  // success rule: adaptive needs flip + no alarm; baseline needs flip only
  double adaptive_success_rate = 0.0;
  double baseline_success_rate = 0.0;
  // means over each run's own successful samples; NaN when undefined
  double adaptive_mean_l2 = 0.0;
  double baseline_mean_l2 = 0.0;
  double l2_ratio = 0.0;  // adaptive / baseline
  bool rates_defined = false;
  int adaptive_successes = 0;
  int baseline_successes = 0;
  int reverified_successes = 0;
  std::string config_json;

  std::string to_json() const;
};

// Runs plain C&W against the target and the detector-aware attack against
// (target, alarm) on the same samples with the same parameters.
AdaptiveResult adaptive_report(const NetworkModel& target, const AlarmModel& alarm,
                               const LabeledImageSet& images, const AdaptiveConfig& cfg);

}  // namespace dla
