#include "dla/alarm.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "dla/container.hpp"
#include "dla/errors.hpp"

namespace dla {

std::string AlarmModel::tag_string() const {
  if (meta.attack_tags.size() == 1) return to_string(meta.attack_tags[0]);
  if (meta.attack_tags.size() > 1) return "combined";
  return "untagged";
}

ActivationTraceSet extract_features(const NetworkModel& target, const Tensor& images, int label,
                                    AttackTag tag, Split split) {
  if (label != 0 && label != 1) throw InputError("extract_features: label must be 0 or 1");
  if (images.ndim() < 2) throw InputError("extract_features: images must be batched");
  Shape expected = target.input_shape;
  expected.insert(expected.begin(), images.dim(0));
  if (images.shape != expected) {
    throw InputError("extract_features: input shape " + shape_to_string(images.shape) +
                     " does not match model input " + shape_to_string(expected));
  }
  ActivationTraceSet set;
  set.traces = target.traced_batch(images).traces;
  set.labels.assign(static_cast<size_t>(images.dim(0)), label);
  set.attack_tag = tag;
  set.target_model_id = target.model_id();
  set.source_split = split;
  return set;
}

namespace {

void check_pair(const ActivationTraceSet& benign, const ActivationTraceSet& adversarial) {
  if (benign.width() != adversarial.width()) {
    throw InputError("train_alarm: trace widths differ (" + std::to_string(benign.width()) +
                     " vs " + std::to_string(adversarial.width()) + ")");
  }
  if (benign.target_model_id != adversarial.target_model_id) {
    throw BindingError("train_alarm: trace sets bound to different targets (" +
                       benign.target_model_id + " vs " + adversarial.target_model_id + ")");
  }
}

}  // namespace

AlarmModel train_alarm(const ActivationTraceSet& benign, const ActivationTraceSet& adversarial,
                       const AlarmTrainConfig& cfg) {
  check_pair(benign, adversarial);
  ActivationTraceSet merged = balanced_merge(benign, adversarial, cfg.seed);

  AlarmModel alarm;
  alarm.net = build_alarm_net(benign.width(), cfg.seed);
  alarm.meta.attack_tags = {adversarial.attack_tag};
  alarm.meta.target_model_id = adversarial.target_model_id;
  alarm.meta.epochs = cfg.epochs;
  alarm.meta.batch_size = cfg.batch_size;
  alarm.meta.seed = cfg.seed;

  TrainConfig tc;
  tc.optimizer = TrainConfig::Optimizer::Adam;
  tc.learning_rate = cfg.learning_rate;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.seed = cfg.seed;
  train(alarm.net, merged.traces, merged.labels, tc);
  return alarm;
}

AlarmModel train_combined_alarm(
    const std::vector<std::pair<ActivationTraceSet, ActivationTraceSet>>& per_attack_sets,
    const AlarmTrainConfig& cfg) {
  if (per_attack_sets.empty()) throw InputError("train_combined_alarm: no trace-set pairs");
  std::vector<ActivationTraceSet> benigns, advs;
  std::vector<AttackTag> tags;
  for (const auto& [b, a] : per_attack_sets) {
    check_pair(b, a);
    if (b.target_model_id != per_attack_sets[0].second.target_model_id) {
      throw BindingError("train_combined_alarm: pairs bound to different targets");
    }
    benigns.push_back(b);
    advs.push_back(a);
    tags.push_back(a.attack_tag);
  }
  ActivationTraceSet benign_all = concat_traces(benigns, AttackTag::Combined);
  ActivationTraceSet adv_all = concat_traces(advs, AttackTag::Combined);

  AlarmModel alarm = train_alarm(benign_all, adv_all, cfg);
  alarm.meta.attack_tags = tags;
  return alarm;
}

AlarmScores alarm_classify(const AlarmModel& alarm, const Tensor& traces) {
  if (traces.ndim() != 2 || traces.dim(1) != alarm.trace_width()) {
    throw InputError("alarm_classify: trace width " +
                     std::to_string(traces.ndim() == 2 ? traces.dim(1) : -1) +
                     " does not match alarm input width " + std::to_string(alarm.trace_width()));
  }
  Tensor probs = softmax_rows(alarm.net.forward_batch(traces));
  AlarmScores out;
  out.scores.resize(static_cast<size_t>(probs.dim(0)));
  out.verdicts.resize(static_cast<size_t>(probs.dim(0)));
  for (int i = 0; i < probs.dim(0); ++i) {
    const float s = probs.row(i)[1];
    out.scores[static_cast<size_t>(i)] = s;
    out.verdicts[static_cast<size_t>(i)] = alarm_verdict(s) ? 1 : 0;
  }
  return out;
}

AlarmScores alarm_classify(const AlarmModel& alarm, const ActivationTraceSet& traces) {
  return alarm_classify(alarm, traces.traces);
}

bool combine_verdicts(VerdictPolicy::Mode mode, const std::vector<std::uint8_t>& votes) {
  const int yes = static_cast<int>(std::count(votes.begin(), votes.end(), 1));
  switch (mode) {
    case VerdictPolicy::Mode::Any: return yes > 0;
    case VerdictPolicy::Mode::Majority: return 2 * yes > static_cast<int>(votes.size());
    case VerdictPolicy::Mode::All: return yes == static_cast<int>(votes.size());
  }
  return false;
}

SecureResult secure_classify_on_tape(Tape& tape, const NetworkModel& target,
                                     const VerdictPolicy& policy, const Tensor& x) {
  if (policy.alarms.empty()) throw InputError("secure_classify: alarm list must be non-empty");
  const std::string target_id = target.model_id();
  for (const AlarmModel* a : policy.alarms) {
    if (a->meta.target_model_id != target_id) {
      throw BindingError("secure_classify: alarm bound to target " + a->meta.target_model_id +
                         ", not " + target_id);
    }
    if (a->trace_width() != target.trace_width()) {
      throw BindingError("secure_classify: alarm trace width does not match target");
    }
  }

  const int n = x.dim(0);
  ValueId xin = tape.leaf(x);
  NetworkModel::TracedForward f = target.forward_with_trace(tape, xin);
  const Tensor& logits = tape.value(f.logits);

  SecureResult res;
  res.logits = logits;
  res.predicted_class.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    res.predicted_class[static_cast<size_t>(i)] = argmax_row(logits.row(i), target.class_count);
  }
  res.per_alarm_scores = Tensor::zeros({n, static_cast<int>(policy.alarms.size())});
  std::vector<std::vector<std::uint8_t>> votes(static_cast<size_t>(n));
  for (size_t ai = 0; ai < policy.alarms.size(); ++ai) {
    ValueId alarm_logits = policy.alarms[ai]->net.forward(tape, f.trace);
    Tensor probs = softmax_rows(tape.value(alarm_logits));
    for (int i = 0; i < n; ++i) {
      const float s = probs.row(i)[1];
      res.per_alarm_scores.row(i)[ai] = s;
      votes[static_cast<size_t>(i)].push_back(alarm_verdict(s) ? 1 : 0);
    }
  }
  res.attack_flag.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    res.attack_flag[static_cast<size_t>(i)] =
        combine_verdicts(policy.mode, votes[static_cast<size_t>(i)]) ? 1 : 0;
  }
  return res;
}

SecureResult secure_classify(const NetworkModel& target, const VerdictPolicy& policy,
                             const Tensor& x) {
  const int n = x.dim(0);
  const int batch = 256;
  SecureResult all;
  all.logits = Tensor::zeros({n, target.class_count});
  all.per_alarm_scores = Tensor::zeros({n, static_cast<int>(policy.alarms.size())});
  all.predicted_class.resize(static_cast<size_t>(n));
  all.attack_flag.resize(static_cast<size_t>(n));
  for (int start = 0; start < n; start += batch) {
    const int count = std::min(batch, n - start);
    Tape tape;
    SecureResult part = secure_classify_on_tape(tape, target, policy, slice_rows(x, start, count));
    store_rows(all.logits, part.logits, start);
    store_rows(all.per_alarm_scores, part.per_alarm_scores, start);
    std::copy(part.predicted_class.begin(), part.predicted_class.end(),
              all.predicted_class.begin() + start);
    std::copy(part.attack_flag.begin(), part.attack_flag.end(), all.attack_flag.begin() + start);
  }
  return all;
}

void save_alarm(const AlarmModel& alarm, const std::filesystem::path& path) {
  ContainerWriter w("alarm");
  w.meta()["arch"] = nlohmann::json::parse(alarm.net.arch_json());
  w.meta()["model_id"] = alarm.net.model_id();
  nlohmann::json tags = nlohmann::json::array();
  for (AttackTag t : alarm.meta.attack_tags) tags.push_back(to_string(t));
  w.meta()["alarm"] = {
      {"attack_tags", tags},
      {"target_model_id", alarm.meta.target_model_id},
      {"epochs", alarm.meta.epochs},
      {"batch_size", alarm.meta.batch_size},
      {"seed", alarm.meta.seed},
      {"trace_mode", to_string(alarm.meta.trace_mode)},
  };
  for (size_t i = 0; i < alarm.net.layers.size(); ++i) {
    const Layer& l = alarm.net.layers[i];
    if (l.weight.size() == 0) continue;
    w.add_f32("layer" + std::to_string(i) + ".weight", l.weight);
    w.add_f32("layer" + std::to_string(i) + ".bias", l.bias);
  }
  w.write(path);
}

AlarmModel load_alarm(const std::filesystem::path& path) {
  Container c = Container::load(path);
  if (c.kind() != "alarm") {
    throw FormatError("'" + path.string() + "' is a " + c.kind() + " container, expected alarm");
  }
  AlarmModel alarm;
  const nlohmann::json& arch = c.meta().at("arch");
  alarm.net.arch_name = arch.at("name").get<std::string>();
  alarm.net.input_shape = arch.at("input_shape").get<Shape>();
  alarm.net.class_count = arch.at("class_count").get<int>();
  alarm.net.trace_mode = trace_mode_from_string(arch.at("trace_mode").get<std::string>());
  size_t li = 0;
  for (const auto& j : arch.at("layers")) {
    Layer l;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "dense") {
      l.spec.kind = LayerKind::Dense;
      l.spec.units = j.at("units").get<int>();
      l.spec.is_dense_tap = j.at("tap").get<bool>();
      l.weight = c.f32("layer" + std::to_string(li) + ".weight");
      l.bias = c.f32("layer" + std::to_string(li) + ".bias");
    } else if (kind == "relu") {
      l.spec.kind = LayerKind::Relu;
    } else if (kind == "flatten") {
      l.spec.kind = LayerKind::Flatten;
    } else {
      throw FormatError("'" + path.string() + "': unexpected layer kind '" + kind +
                        "' in alarm network");
    }
    alarm.net.layers.push_back(std::move(l));
    ++li;
  }
  const std::string stored_id = c.meta().value("model_id", "");
  if (!stored_id.empty() && stored_id != alarm.net.model_id()) {
    throw FormatError("'" + path.string() + "': stored model id does not match parameters");
  }
  const nlohmann::json& am = c.meta().at("alarm");
  for (const auto& t : am.at("attack_tags")) {
    alarm.meta.attack_tags.push_back(attack_tag_from_string(t.get<std::string>()));
  }
  alarm.meta.target_model_id = am.at("target_model_id").get<std::string>();
  alarm.meta.epochs = am.at("epochs").get<int>();
  alarm.meta.batch_size = am.at("batch_size").get<int>();
  alarm.meta.seed = am.at("seed").get<std::uint64_t>();
  alarm.meta.trace_mode = trace_mode_from_string(am.at("trace_mode").get<std::string>());
  return alarm;
}

}  // namespace dla
