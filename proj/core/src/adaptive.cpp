#include "dla/adaptive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "dla/errors.hpp"
#include "dla/parallel.hpp"

namespace dla {

AdaptiveConfig AdaptiveConfig::full_preset() {
  AdaptiveConfig c;
  c.cw.kind = AttackTag::CW;
  c.cw.cw_max_iterations = 3000;
  c.cw.cw_batch_size = 100;
  c.cw.cw_learning_rate = 0.005f;
  c.cw.cw_binary_search_steps = 20;
  c.cw.cw_confidence = 0.0f;
  c.cw.cw_initial_c = 0.01f;
  return c;
}

AdaptiveConfig AdaptiveConfig::reduced_preset() {
  AdaptiveConfig c = full_preset();
  c.cw.cw_max_iterations = 300;
  return c;
}

AdaptiveOutcome adaptive_cw(const NetworkModel& target, const AlarmModel& alarm, const Tensor& x,
                            const std::vector<int>& true_labels, const std::vector<int>& targets,
                            const AdaptiveConfig& cfg) {
  if (alarm.meta.target_model_id != target.model_id()) {
    throw BindingError("adaptive_cw: alarm is bound to a different target model");
  }
  const int total = x.dim(0);
  if (total != static_cast<int>(true_labels.size()) || total != static_cast<int>(targets.size())) {
    throw InputError("adaptive_cw: labels and targets must match sample count");
  }
  bool targeted = !targets.empty() && targets[0] >= 0;
  for (int t : targets) {
    if ((t >= 0) != targeted) throw InputError("adaptive_cw: mixed targeted/untargeted batch");
  }
  const AttackConfig& cw = cfg.cw;
  const std::int64_t stride = x.size() / std::max(1, total);
  const float kappa = cw.cw_confidence;

  AdaptiveOutcome res;
  res.perturbed = x;
  res.success.assign(static_cast<size_t>(total), 0);
  res.l2.assign(static_cast<size_t>(total), 0.0f);
  res.reverified.assign(static_cast<size_t>(total), 0);

  parallel_chunks(total, cw.cw_batch_size, [&](int begin, int end) {
    const int n = end - begin;
    Tensor x0 = slice_rows(x, begin, n);
    std::vector<int> lab(targeted ? targets.begin() + begin : true_labels.begin() + begin,
                         targeted ? targets.begin() + end : true_labels.begin() + end);
    std::vector<int> truth(true_labels.begin() + begin, true_labels.begin() + end);
    // Alarm evasion pushes the benign logit above the adversarial one.
    const std::vector<int> benign_class(static_cast<size_t>(n), 0);

    Tensor w_init = x0;
    for (float& v : w_init.data) v = std::atanh((2.0f * v - 1.0f) * 0.999999f);

    Tensor weightvec = Tensor::full({n}, cfg.alarm_weight);
    std::vector<double> c(static_cast<size_t>(n), static_cast<double>(cw.cw_initial_c));
    std::vector<double> c_lo(static_cast<size_t>(n), 0.0);
    std::vector<double> c_hi(static_cast<size_t>(n), 1e10);
    std::vector<float> best_l2(static_cast<size_t>(n), std::numeric_limits<float>::infinity());
    Tensor best_x = x0;
    std::vector<std::uint8_t> ever(static_cast<size_t>(n), 0);
    const int check_every = std::max(1, cw.cw_max_iterations / 10);

    for (int bs = 0; bs < cw.cw_binary_search_steps; ++bs) {
      Tensor w = w_init;
      std::vector<float> m(w.data.size(), 0.0f), v(w.data.size(), 0.0f);
      std::vector<std::uint8_t> round_success(static_cast<size_t>(n), 0);
      Tensor cvec = Tensor::zeros({n});
      for (int i = 0; i < n; ++i) cvec.data[static_cast<size_t>(i)] = static_cast<float>(c[static_cast<size_t>(i)]);
      double prev_total = std::numeric_limits<double>::infinity();

      for (int it = 1; it <= cw.cw_max_iterations; ++it) {
        Tape tape;
        ValueId win = tape.leaf(w, /*requires_grad=*/true);
        ValueId xadv = tape.affine(tape.tanh(win), 0.5f, 0.5f);
        ValueId x0in = tape.leaf(x0);
        ValueId delta = tape.sub(xadv, x0in);
        ValueId l2sq = tape.row_sum(tape.reshape(tape.mul(delta, delta), {n, static_cast<int>(stride)}));

        NetworkModel::TracedForward f = target.forward_with_trace(tape, xadv);
        ValueId target_hinge = tape.cw_hinge(f.logits, lab, kappa, targeted);
        ValueId alarm_logits = alarm.net.forward(tape, f.trace);
        // max(Z_adv - Z_benign, -kappa), written as the targeted hinge on class 0.
        ValueId alarm_hinge = tape.cw_hinge(alarm_logits, benign_class, kappa, true);
        ValueId win_id = tape.leaf(weightvec);
        ValueId combined = tape.add(target_hinge, tape.mul(alarm_hinge, win_id));
        ValueId cin = tape.leaf(cvec);
        ValueId obj = tape.sum_all(tape.add(l2sq, tape.mul(cin, combined)));
        tape.backward(obj);

        const Tensor& tl = tape.value(f.logits);
        const Tensor& al = tape.value(alarm_logits);
        const Tensor& xv = tape.value(xadv);
        const Tensor& dv = tape.value(l2sq);
        for (int i = 0; i < n; ++i) {
          const int pred = argmax_row(tl.row(i), target.class_count);
          const bool flips = targeted ? pred == lab[static_cast<size_t>(i)]
                                      : pred != truth[static_cast<size_t>(i)];
          // verdict benign <=> adversarial probability <= 0.5 <=> Z_adv <= Z_benign
          const bool evades = al.row(i)[1] <= al.row(i)[0];
          if (!flips || !evades) continue;
          round_success[static_cast<size_t>(i)] = 1;
          const float l2 = std::sqrt(std::max(0.0f, dv.data[static_cast<size_t>(i)]));
          if (l2 < best_l2[static_cast<size_t>(i)]) {
            best_l2[static_cast<size_t>(i)] = l2;
            ever[static_cast<size_t>(i)] = 1;
            std::copy_n(xv.data.begin() + static_cast<std::int64_t>(i) * stride, stride,
                        best_x.data.begin() + static_cast<std::int64_t>(i) * stride);
          }
        }

        if (cw.cw_early_abort && it % check_every == 0) {
          const double tot = static_cast<double>(tape.value(obj).data[0]);
          if (tot > prev_total * 0.9999) break;
          prev_total = tot;
        }

        const std::vector<float>& g = tape.grad(win);
        const float bc1 = 1.0f - std::pow(0.9f, static_cast<float>(it));
        const float bc2 = 1.0f - std::pow(0.999f, static_cast<float>(it));
        for (size_t j = 0; j < w.data.size(); ++j) {
          m[j] = 0.9f * m[j] + 0.1f * g[j];
          v[j] = 0.999f * v[j] + 0.001f * g[j] * g[j];
          w.data[j] -= cw.cw_learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + 1e-8f);
        }
      }

      for (int i = 0; i < n; ++i) {
        const size_t si = static_cast<size_t>(i);
        if (round_success[si]) {
          c_hi[si] = c[si];
          c[si] = (c_lo[si] + c_hi[si]) / 2.0;
        } else {
          c_lo[si] = c[si];
          c[si] = c_hi[si] >= 1e9 ? c[si] * 10.0 : (c_lo[si] + c_hi[si]) / 2.0;
        }
      }
    }

    for (int i = 0; i < n; ++i) {
      res.success[static_cast<size_t>(begin + i)] = ever[static_cast<size_t>(i)];
      res.l2[static_cast<size_t>(begin + i)] =
          ever[static_cast<size_t>(i)] ? best_l2[static_cast<size_t>(i)] : 0.0f;
    }
    store_rows(res.perturbed, best_x, begin);
  });

  // Closed loop: every reported success must hold up under secure_classify.
  VerdictPolicy policy;
  policy.mode = VerdictPolicy::Mode::Any;
  policy.alarms = {&alarm};
  SecureResult check = secure_classify(target, policy, res.perturbed);
  for (int i = 0; i < total; ++i) {
    const size_t si = static_cast<size_t>(i);
    if (!res.success[si]) continue;
    const bool flips = targeted ? check.predicted_class[si] == targets[si]
                                : check.predicted_class[si] != true_labels[si];
    res.reverified[si] = (flips && !check.attack_flag[si]) ? 1 : 0;
    if (!res.reverified[si]) res.success[si] = 0;
  }
  return res;
}

std::string AdaptiveResult::to_json() const {
  nlohmann::json j;
  j["sample_count"] = sample_count;
  j["adaptive"] = {{"success_rate", adaptive_success_rate},
                   {"successes", adaptive_successes},
                   {"mean_l2", adaptive_mean_l2},
                   {"reverified_successes", reverified_successes}};
  j["baseline"] = {{"success_rate", baseline_success_rate},
                   {"successes", baseline_successes},
                   {"mean_l2", baseline_mean_l2}};
  j["l2_ratio"] = l2_ratio;
  j["rates_defined"] = rates_defined;
  j["config"] = nlohmann::json::parse(config_json.empty() ? "{}" : config_json);
  return j.dump();
}

AdaptiveResult adaptive_report(const NetworkModel& target, const AlarmModel& alarm,
                               const LabeledImageSet& images, const AdaptiveConfig& cfg) {
  AdaptiveResult out;
  out.sample_count = images.count();
  nlohmann::json cj;
  cj["cw"] = nlohmann::json::parse(cfg.cw.to_json());
  cj["alarm_weight"] = cfg.alarm_weight;
  out.config_json = cj.dump();
  if (images.count() == 0) {
    out.rates_defined = false;  // no division by zero on empty input
    return out;
  }

  std::vector<int> targets(static_cast<size_t>(images.count()), -1);
  if (cfg.cw.target_policy == TargetPolicy::CycleFalseClasses) {
    for (size_t i = 0; i < targets.size(); ++i) {
      targets[i] = (images.labels[i] + 1 +
                    static_cast<int>(i % static_cast<size_t>(target.class_count - 1))) %
                   target.class_count;
    }
  }

  CwResult baseline = carlini_wagner_l2(target, images.images, images.labels, targets, cfg.cw);
  AdaptiveOutcome adaptive = adaptive_cw(target, alarm, images.images, images.labels, targets, cfg);

  double base_l2 = 0.0;
  for (int i = 0; i < images.count(); ++i) {
    if (baseline.success[static_cast<size_t>(i)]) {
      ++out.baseline_successes;
      base_l2 += baseline.best_l2[static_cast<size_t>(i)];
    }
    if (adaptive.success[static_cast<size_t>(i)]) {
      ++out.adaptive_successes;
      out.adaptive_mean_l2 += adaptive.l2[static_cast<size_t>(i)];
    }
    if (adaptive.reverified[static_cast<size_t>(i)]) ++out.reverified_successes;
  }
  out.rates_defined = true;
  out.baseline_success_rate = static_cast<double>(out.baseline_successes) / images.count();
  out.adaptive_success_rate = static_cast<double>(out.adaptive_successes) / images.count();
  out.baseline_mean_l2 = out.baseline_successes ? base_l2 / out.baseline_successes
                                                : std::numeric_limits<double>::quiet_NaN();
  out.adaptive_mean_l2 = out.adaptive_successes
                             ? out.adaptive_mean_l2 / out.adaptive_successes
                             : std::numeric_limits<double>::quiet_NaN();
  out.l2_ratio = (out.baseline_successes && out.adaptive_successes)
                     ? out.adaptive_mean_l2 / out.baseline_mean_l2
                     : std::numeric_limits<double>::quiet_NaN();
  return out;
}

}  // namespace dla
