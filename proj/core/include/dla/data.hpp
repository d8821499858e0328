#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dla/tensor.hpp"

namespace dla {

enum class Split { Train, Test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

enum class AttackTag { FGSM, BIM, PGD, DeepFool, CW, Transfer, Adaptive, Combined, Control };
std::string to_string(AttackTag t);
AttackTag attack_tag_from_string(const std::string& s);

// Benign images with class labels. Pixels are stored in [0,1].
struct LabeledImageSet {
  Tensor images;  // [N,1,H,W]
  std::vector<int> labels;
  Split split = Split::Train;

  int count() const { return images.ndim() ? images.dim(0) : 0; }
  // Throws InputError when pixel range or label/count invariants are broken.
  void validate(int class_count = 10) const;

  LabeledImageSet select(const std::vector<int>& indices) const;
  // Class-balanced prefix subset: up to per_class samples of each label, in
  // original order. per_class <= 0 keeps everything.
  LabeledImageSet cap_per_class(int per_class) const;
};

// Paired benign/adversarial samples for one attack, successful records only
// unless stated otherwise by the producer.
struct AdversarialSet {
  Tensor originals;   // [M,1,H,W]
  Tensor perturbed;   // [M,1,H,W]
  std::vector<int> true_labels;
  std::vector<int> predicted_labels;  // on perturbed, crafting model
  std::vector<int> intended_targets;  // -1 for untargeted attacks
  std::vector<float> l2;
  std::vector<float> linf;
  std::vector<std::uint8_t> success;
  AttackTag attack_tag = AttackTag::FGSM;
  Split source_split = Split::Train;
  std::string model_id;          // crafting target
  std::string config_json = "{}";  // attack parameters for provenance

  int count() const { return originals.ndim() ? originals.dim(0) : 0; }
  void validate() const;
  AdversarialSet select(const std::vector<int>& indices) const;
};

// Concatenated dense-layer activations, one row per sample.
struct ActivationTraceSet {
  Tensor traces;  // [M,d]
  std::vector<int> labels;  // 0 = benign, 1 = adversarial
  AttackTag attack_tag = AttackTag::FGSM;
  std::string target_model_id;
  Split source_split = Split::Train;

  int count() const { return traces.ndim() ? traces.dim(0) : 0; }
  int width() const { return traces.ndim() == 2 ? traces.dim(1) : 0; }
  void validate() const;
  ActivationTraceSet select(const std::vector<int>& indices) const;
};

void save_traces(const ActivationTraceSet& set, const std::filesystem::path& path);
ActivationTraceSet load_traces(const std::filesystem::path& path);

void save_adversarial(const AdversarialSet& set, const std::filesystem::path& path);
AdversarialSet load_adversarial(const std::filesystem::path& path);

// Interleaves both classes into one shuffled set. If sizes differ the larger
// side is subsampled uniformly at random so classes stay balanced.
ActivationTraceSet balanced_merge(const ActivationTraceSet& benign,
                                  const ActivationTraceSet& adversarial, std::uint64_t seed);

// Concatenation with identical width/model binding (labels kept).
ActivationTraceSet concat_traces(const std::vector<ActivationTraceSet>& sets, AttackTag tag);

}  // namespace dla
