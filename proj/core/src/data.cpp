#include "dla/data.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include "dla/container.hpp"
#include "dla/errors.hpp"
#include "dla/rng.hpp"

namespace dla {

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw InputError("unknown split tag '" + s + "'");
}

std::string to_string(AttackTag t) {
  switch (t) {
    case AttackTag::FGSM: return "fgsm";
    case AttackTag::BIM: return "bim";
    case AttackTag::PGD: return "pgd";
    case AttackTag::DeepFool: return "deepfool";
    case AttackTag::CW: return "cw";
    case AttackTag::Transfer: return "transfer";
    case AttackTag::Adaptive: return "adaptive";
    case AttackTag::Combined: return "combined";
    case AttackTag::Control: return "control";
  }
  return "unknown";
}

AttackTag attack_tag_from_string(const std::string& s) {
  if (s == "fgsm") return AttackTag::FGSM;
  if (s == "bim") return AttackTag::BIM;
  if (s == "pgd") return AttackTag::PGD;
  if (s == "deepfool") return AttackTag::DeepFool;
  if (s == "cw") return AttackTag::CW;
  if (s == "transfer") return AttackTag::Transfer;
  if (s == "adaptive") return AttackTag::Adaptive;
  if (s == "combined") return AttackTag::Combined;
  if (s == "control") return AttackTag::Control;
  throw InputError("unknown attack tag '" + s + "'");
}

void LabeledImageSet::validate(int class_count) const {
  if (images.ndim() != 4) throw InputError("image set: images must be [N,C,H,W]");
  if (images.dim(0) != static_cast<int>(labels.size())) {
    throw InputError("image set: image count " + std::to_string(images.dim(0)) +
                     " does not match label count " + std::to_string(labels.size()));
  }
  for (float v : images.data) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw InputError("image set: pixel value outside [0,1]");
    }
  }
  for (int l : labels) {
    if (l < 0 || l >= class_count) throw InputError("image set: label out of range");
  }
}

namespace {

Tensor select_rows4d(const Tensor& t, const std::vector<int>& indices) {
  const std::int64_t stride = t.size() / std::max(1, t.dim(0));
  Tensor out = Tensor::zeros(
      {static_cast<int>(indices.size()), t.dim(1), t.dim(2), t.dim(3)});
  for (size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(t.data.begin() + indices[i] * stride, stride, out.data.begin() + static_cast<std::int64_t>(i) * stride);
  }
  return out;
}

template <typename T>
std::vector<T> select_vec(const std::vector<T>& v, const std::vector<int>& indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(v[static_cast<size_t>(i)]);
  return out;
}

}  // namespace

LabeledImageSet LabeledImageSet::select(const std::vector<int>& indices) const {
  LabeledImageSet out;
  out.images = select_rows4d(images, indices);
  out.labels = select_vec(labels, indices);
  out.split = split;
  return out;
}

LabeledImageSet LabeledImageSet::cap_per_class(int per_class) const {
  if (per_class <= 0) return *this;
  std::unordered_map<int, int> taken;
  std::vector<int> keep;
  for (int i = 0; i < count(); ++i) {
    if (taken[labels[static_cast<size_t>(i)]] < per_class) {
      ++taken[labels[static_cast<size_t>(i)]];
      keep.push_back(i);
    }
  }
  return select(keep);
}

void AdversarialSet::validate() const {
  const size_t m = static_cast<size_t>(count());
  check_same_shape(originals, perturbed, "adversarial set");
  if (true_labels.size() != m || predicted_labels.size() != m || intended_targets.size() != m ||
      l2.size() != m || linf.size() != m || success.size() != m) {
    throw InputError("adversarial set: per-sample field lengths disagree");
  }
  for (float v : perturbed.data) {
    if (!(v >= 0.0f && v <= 1.0f)) throw InputError("adversarial set: perturbed pixel outside [0,1]");
  }
  const std::int64_t stride = m ? originals.size() / static_cast<std::int64_t>(m) : 0;
  for (size_t i = 0; i < m; ++i) {
    if (success[i] && predicted_labels[i] == true_labels[i]) {
      throw InputError("adversarial set: success record does not flip the label");
    }
    const float rl2 = l2_distance(originals.data.data() + static_cast<std::int64_t>(i) * stride,
                                  perturbed.data.data() + static_cast<std::int64_t>(i) * stride, stride);
    const float rli = linf_distance(originals.data.data() + static_cast<std::int64_t>(i) * stride,
                                    perturbed.data.data() + static_cast<std::int64_t>(i) * stride, stride);
    if (std::abs(rl2 - l2[i]) > 1e-5f || std::abs(rli - linf[i]) > 1e-5f) {
      throw InputError("adversarial set: stored distortion does not match recomputed norm");
    }
  }
}

AdversarialSet AdversarialSet::select(const std::vector<int>& indices) const {
  AdversarialSet out;
  out.originals = select_rows4d(originals, indices);
  out.perturbed = select_rows4d(perturbed, indices);
  out.true_labels = select_vec(true_labels, indices);
  out.predicted_labels = select_vec(predicted_labels, indices);
  out.intended_targets = select_vec(intended_targets, indices);
  out.l2 = select_vec(l2, indices);
  out.linf = select_vec(linf, indices);
  out.success = select_vec(success, indices);
  out.attack_tag = attack_tag;
  out.source_split = source_split;
  out.model_id = model_id;
  out.config_json = config_json;
  return out;
}

void ActivationTraceSet::validate() const {
  if (traces.ndim() != 2) throw InputError("trace set: traces must be [M,d]");
  if (traces.dim(0) != static_cast<int>(labels.size())) {
    throw InputError("trace set: row count does not match label count");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw InputError("trace set: labels must be binary");
  }
}

ActivationTraceSet ActivationTraceSet::select(const std::vector<int>& indices) const {
  ActivationTraceSet out;
  const int d = width();
  out.traces = Tensor::zeros({static_cast<int>(indices.size()), d});
  for (size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(traces.data.begin() + static_cast<std::int64_t>(indices[i]) * d, d,
                out.traces.data.begin() + static_cast<std::int64_t>(i) * d);
  }
  out.labels = select_vec(labels, indices);
  out.attack_tag = attack_tag;
  out.target_model_id = target_model_id;
  out.source_split = source_split;
  return out;
}

void save_traces(const ActivationTraceSet& set, const std::filesystem::path& path) {
  set.validate();
  ContainerWriter w("traces");
  w.meta()["attack_tag"] = to_string(set.attack_tag);
  w.meta()["target_model_id"] = set.target_model_id;
  w.meta()["split"] = to_string(set.source_split);
  w.meta()["count"] = set.count();
  w.meta()["width"] = set.width();
  w.add_f32("traces", set.traces);
  w.add_i32("labels", std::vector<std::int32_t>(set.labels.begin(), set.labels.end()));
  w.write(path);
}

ActivationTraceSet load_traces(const std::filesystem::path& path) {
  Container c = Container::load(path);
  if (c.kind() != "traces") {
    throw FormatError("'" + path.string() + "' is a " + c.kind() + " container, expected traces");
  }
  ActivationTraceSet set;
  set.traces = c.f32("traces");
  auto lab = c.i32("labels");
  set.labels.assign(lab.begin(), lab.end());
  set.attack_tag = attack_tag_from_string(c.meta().at("attack_tag").get<std::string>());
  set.target_model_id = c.meta().at("target_model_id").get<std::string>();
  set.source_split = split_from_string(c.meta().at("split").get<std::string>());
  set.validate();
  return set;
}

void save_adversarial(const AdversarialSet& set, const std::filesystem::path& path) {
  set.validate();
  ContainerWriter w("advset");
  w.meta()["attack_tag"] = to_string(set.attack_tag);
  w.meta()["split"] = to_string(set.source_split);
  w.meta()["model_id"] = set.model_id;
  w.meta()["count"] = set.count();
  w.meta()["attack_config"] = nlohmann::json::parse(set.config_json);
  w.add_f32("originals", set.originals);
  w.add_f32("perturbed", set.perturbed);
  w.add_i32("true_labels", std::vector<std::int32_t>(set.true_labels.begin(), set.true_labels.end()));
  w.add_i32("predicted_labels",
            std::vector<std::int32_t>(set.predicted_labels.begin(), set.predicted_labels.end()));
  w.add_i32("intended_targets",
            std::vector<std::int32_t>(set.intended_targets.begin(), set.intended_targets.end()));
  w.add_f32("l2", {static_cast<int>(set.l2.size())}, set.l2.data());
  w.add_f32("linf", {static_cast<int>(set.linf.size())}, set.linf.data());
  w.add_u8("success", set.success);
  w.write(path);
}

AdversarialSet load_adversarial(const std::filesystem::path& path) {
  Container c = Container::load(path);
  if (c.kind() != "advset") {
    throw FormatError("'" + path.string() + "' is a " + c.kind() + " container, expected advset");
  }
  AdversarialSet set;
  set.originals = c.f32("originals");
  set.perturbed = c.f32("perturbed");
  auto tl = c.i32("true_labels");
  set.true_labels.assign(tl.begin(), tl.end());
  auto pl = c.i32("predicted_labels");
  set.predicted_labels.assign(pl.begin(), pl.end());
  auto it = c.i32("intended_targets");
  set.intended_targets.assign(it.begin(), it.end());
  set.l2 = c.f32("l2").data;
  set.linf = c.f32("linf").data;
  set.success = c.u8("success");
  set.attack_tag = attack_tag_from_string(c.meta().at("attack_tag").get<std::string>());
  set.source_split = split_from_string(c.meta().at("split").get<std::string>());
  set.model_id = c.meta().at("model_id").get<std::string>();
  set.config_json = c.meta().at("attack_config").dump();
  set.validate();
  return set;
}

ActivationTraceSet balanced_merge(const ActivationTraceSet& benign,
                                  const ActivationTraceSet& adversarial, std::uint64_t seed) {
  if (benign.width() != adversarial.width()) {
    throw InputError("balanced_merge: trace widths differ, " + std::to_string(benign.width()) +
                     " vs " + std::to_string(adversarial.width()));
  }
  if (!benign.target_model_id.empty() && !adversarial.target_model_id.empty() &&
      benign.target_model_id != adversarial.target_model_id) {
    throw InputError("balanced_merge: trace sets come from different target models");
  }

  auto subsample = [](const ActivationTraceSet& s, int n, std::mt19937& rng) {
    std::vector<int> idx(static_cast<size_t>(s.count()));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < n; ++i) {  // partial Fisher-Yates
      const int j = i + static_cast<int>(rng() % static_cast<std::uint32_t>(idx.size() - static_cast<size_t>(i)));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(n));
    std::sort(idx.begin(), idx.end());
    return s.select(idx);
  };

  std::mt19937 rng(static_cast<std::uint32_t>(splitmix64(seed)));
  const int n = std::min(benign.count(), adversarial.count());
  ActivationTraceSet b = benign.count() > n ? subsample(benign, n, rng) : benign;
  ActivationTraceSet a = adversarial.count() > n ? subsample(adversarial, n, rng) : adversarial;

  ActivationTraceSet out;
  const int d = benign.width();
  out.traces = Tensor::zeros({2 * n, d});
  out.labels.resize(static_cast<size_t>(2 * n));
  out.attack_tag = adversarial.attack_tag;
  out.target_model_id = adversarial.target_model_id.empty() ? benign.target_model_id
                                                            : adversarial.target_model_id;
  out.source_split = adversarial.source_split;

  std::vector<int> order(static_cast<size_t>(2 * n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int i = 0; i < 2 * n; ++i) {
    const int src = order[static_cast<size_t>(i)];
    const ActivationTraceSet& s = src < n ? b : a;
    const int row = src < n ? src : src - n;
    std::copy_n(s.traces.data.begin() + static_cast<std::int64_t>(row) * d, d,
                out.traces.data.begin() + static_cast<std::int64_t>(i) * d);
    out.labels[static_cast<size_t>(i)] = src < n ? 0 : 1;
  }
  return out;
}

ActivationTraceSet concat_traces(const std::vector<ActivationTraceSet>& sets, AttackTag tag) {
  if (sets.empty()) throw InputError("concat_traces: no inputs");
  const int d = sets[0].width();
  int total = 0;
  for (const auto& s : sets) {
    if (s.width() != d) throw InputError("concat_traces: width mismatch");
    if (s.target_model_id != sets[0].target_model_id) {
      throw InputError("concat_traces: sets from different target models");
    }
    total += s.count();
  }
  ActivationTraceSet out;
  out.traces = Tensor::zeros({total, d});
  out.labels.reserve(static_cast<size_t>(total));
  out.attack_tag = tag;
  out.target_model_id = sets[0].target_model_id;
  out.source_split = sets[0].source_split;
  std::int64_t off = 0;
  for (const auto& s : sets) {
    std::copy(s.traces.data.begin(), s.traces.data.end(), out.traces.data.begin() + off);
    off += s.traces.size();
    out.labels.insert(out.labels.end(), s.labels.begin(), s.labels.end());
  }
  return out;
}

}  // namespace dla
