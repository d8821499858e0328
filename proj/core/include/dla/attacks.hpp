#pragma once

#include <cstdint>
#include <string>

#include "dla/data.hpp"
#include "dla/model.hpp"

namespace dla {

enum class TargetPolicy { Untargeted, CycleFalseClasses };

struct AttackConfig {
  AttackTag kind = AttackTag::FGSM;

  // L-inf family
  float epsilon = 0.3f;
  float alpha = 0.01f;
  int iterations = 40;
  bool random_start = true;  // PGD only

  // DeepFool
  int deepfool_max_iters = 50;
  float deepfool_overshoot = 0.02f;

  // Carlini-Wagner
  int cw_max_iterations = 1000;
  float cw_learning_rate = 0.005f;
  int cw_binary_search_steps = 9;
  float cw_initial_c = 0.01f;
  float cw_confidence = 0.0f;  // kappa
  int cw_batch_size = 100;
  bool cw_early_abort = true;

  TargetPolicy target_policy = TargetPolicy::CycleFalseClasses;
  std::uint64_t seed = 0;
  // Class-balanced sample cap applied before crafting; <=0 means no cap.
  int cap_per_class = 0;

  void validate() const;
  std::string to_json() const;
  static AttackConfig from_json(const std::string& json);
};

// x' = clip01(x + eps * sign(d loss / d x)), per sample.
Tensor fgsm(const NetworkModel& model, const Tensor& x, const std::vector<int>& true_labels,
            float epsilon);

// Iterated FGSM steps projected onto the eps-ball around x and [0,1].
Tensor bim(const NetworkModel& model, const Tensor& x, const std::vector<int>& true_labels,
           float epsilon, float alpha, int iterations);

// bim with optional uniform random start inside the eps-ball.
Tensor pgd(const NetworkModel& model, const Tensor& x, const std::vector<int>& true_labels,
           float epsilon, float alpha, int iterations, bool random_start, std::uint64_t seed = 0);

struct DeepFoolResult {
  Tensor perturbed;
  std::vector<int> iterations_used;
};
// Minimal-perturbation attack by iterative decision-boundary linearization.
// Inputs already misclassified are returned unchanged.
DeepFoolResult deepfool(const NetworkModel& model, const Tensor& x,
                        const std::vector<int>& true_labels, int max_iters, float overshoot);

struct CwResult {
  Tensor perturbed;                  // best (lowest-L2 successful) or original on failure
  std::vector<std::uint8_t> success;
  std::vector<float> best_l2;        // valid where success
};
// L2 attack over w with x' = (tanh(w)+1)/2 and an outer binary search on the
// objective constant. Targeted when targets[i] >= 0, untargeted against
// true_labels[i] otherwise.
CwResult carlini_wagner_l2(const NetworkModel& model, const Tensor& x,
                           const std::vector<int>& true_labels, const std::vector<int>& targets,
                           const AttackConfig& cfg);

// Runs the configured attack over a (possibly capped) image set and keeps
// only samples whose crafted output flips the model's label.
AdversarialSet craft_set(const NetworkModel& model, const LabeledImageSet& data,
                         const AttackConfig& cfg);

// Replays adversarial images against another model; keeps the ones that fool it.
AdversarialSet transfer_set(const NetworkModel& victim, const AdversarialSet& adv);

// Benign controls: original images plus random noise matched per sample to
// the recorded distortion under the attack's native metric, filtered to
// samples the target still classifies correctly.
LabeledImageSet noise_matched_benign(const NetworkModel& model, const AdversarialSet& adv,
                                     std::uint64_t seed);

}  // namespace dla
