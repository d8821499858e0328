#include "dla/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "dla/errors.hpp"
#include "dla/parallel.hpp"
#include "dla/rng.hpp"

namespace dla {

namespace {

constexpr int kChunk = 128;

float clip01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

// Shared core of FGSM/BIM/PGD. Untargeted runs gradient ascent on the true
// label's loss; targeted descends toward the given label.
Tensor iterative_linf(const NetworkModel& model, const Tensor& x, const std::vector<int>& labels,
                      float epsilon, float alpha, int iterations, bool random_start, bool targeted,
                      std::uint64_t seed) {
  if (x.dim(0) != static_cast<int>(labels.size())) {
    throw InputError("linf attack: one label per sample required");
  }
  const float step = targeted ? -alpha : alpha;
  Tensor out = Tensor::zeros(x.shape);
  const std::int64_t stride = x.size() / std::max(1, x.dim(0));

  parallel_chunks(x.dim(0), kChunk, [&](int begin, int end) {
    const int n = end - begin;
    Tensor x0 = slice_rows(x, begin, n);
    std::vector<int> lab(labels.begin() + begin, labels.begin() + end);
    Tensor xk = x0;
    if (random_start) {
      for (int i = 0; i < n; ++i) {
        std::mt19937 rng = stream_rng(seed, static_cast<std::uint64_t>(begin + i));
        float* row = xk.data.data() + static_cast<std::int64_t>(i) * stride;
        for (std::int64_t j = 0; j < stride; ++j) {
          row[j] = clip01(row[j] + uniform_float(rng, -epsilon, epsilon));
        }
      }
    }
    for (int it = 0; it < iterations; ++it) {
      Tape tape;
      ValueId xin = tape.leaf(xk, /*requires_grad=*/true);
      ValueId logits = model.forward(tape, xin);
      ValueId loss = tape.softmax_cross_entropy(logits, lab, Reduction::Sum);
      tape.backward(loss);
      const std::vector<float>& g = tape.grad(xin);
      for (size_t j = 0; j < xk.data.size(); ++j) {
        float v = xk.data[j];
        if (g[j] > 0.0f) v += step;
        else if (g[j] < 0.0f) v -= step;
        v = std::min(x0.data[j] + epsilon, std::max(x0.data[j] - epsilon, v));
        xk.data[j] = clip01(v);
      }
    }
    store_rows(out, xk, begin);
  });
  return out;
}

}  // namespace

void AttackConfig::validate() const {
  switch (kind) {
    case AttackTag::FGSM:
      if (epsilon <= 0.0f) throw InputError("attack config: epsilon must be > 0");
      break;
    case AttackTag::BIM:
    case AttackTag::PGD:
      if (epsilon <= 0.0f) throw InputError("attack config: epsilon must be > 0");
      if (iterations < 1) throw InputError("attack config: iterations must be >= 1");
      if (alpha > epsilon) throw InputError("attack config: alpha must not exceed epsilon");
      break;
    case AttackTag::DeepFool:
      if (deepfool_max_iters < 1) throw InputError("attack config: iterations must be >= 1");
      break;
    case AttackTag::CW:
      if (cw_max_iterations < 1) throw InputError("attack config: iterations must be >= 1");
      if (cw_binary_search_steps < 1) {
        throw InputError("attack config: binary search steps must be >= 1");
      }
      if (cw_batch_size < 1) throw InputError("attack config: batch size must be >= 1");
      break;
    default:
      throw InputError("attack config: kind must be a craftable attack");
  }
}

std::string AttackConfig::to_json() const {
  nlohmann::json j;
  j["attack"] = to_string(kind);
  j["seed"] = seed;
  j["cap_per_class"] = cap_per_class;
  j["target_policy"] =
      target_policy == TargetPolicy::Untargeted ? "untargeted" : "cycle-false-classes";
  switch (kind) {
    case AttackTag::FGSM:
      j["epsilon"] = epsilon;
      break;
    case AttackTag::BIM:
    case AttackTag::PGD:
      j["epsilon"] = epsilon;
      j["alpha"] = alpha;
      j["iterations"] = iterations;
      if (kind == AttackTag::PGD) j["random_start"] = random_start;
      break;
    case AttackTag::DeepFool:
      j["max_iterations"] = deepfool_max_iters;
      j["overshoot"] = deepfool_overshoot;
      break;
    case AttackTag::CW:
      j["max_iterations"] = cw_max_iterations;
      j["learning_rate"] = cw_learning_rate;
      j["binary_search_steps"] = cw_binary_search_steps;
      j["initial_c"] = cw_initial_c;
      j["confidence"] = cw_confidence;
      j["batch_size"] = cw_batch_size;
      j["early_abort"] = cw_early_abort;
      break;
    default:
      break;
  }
  return j.dump();
}

AttackConfig AttackConfig::from_json(const std::string& json) {
  nlohmann::json j = nlohmann::json::parse(json);
  AttackConfig cfg;
  cfg.kind = attack_tag_from_string(j.at("attack").get<std::string>());
  cfg.seed = j.value("seed", 0ULL);
  cfg.cap_per_class = j.value("cap_per_class", 0);
  cfg.target_policy = j.value("target_policy", "cycle-false-classes") == std::string("untargeted")
                          ? TargetPolicy::Untargeted
                          : TargetPolicy::CycleFalseClasses;
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.random_start = j.value("random_start", cfg.random_start);
  cfg.deepfool_max_iters = j.value("max_iterations", cfg.deepfool_max_iters);
  cfg.deepfool_overshoot = j.value("overshoot", cfg.deepfool_overshoot);
  if (cfg.kind == AttackTag::CW) {
    cfg.cw_max_iterations = j.value("max_iterations", cfg.cw_max_iterations);
    cfg.cw_learning_rate = j.value("learning_rate", cfg.cw_learning_rate);
    cfg.cw_binary_search_steps = j.value("binary_search_steps", cfg.cw_binary_search_steps);
    cfg.cw_initial_c = j.value("initial_c", cfg.cw_initial_c);
    cfg.cw_confidence = j.value("confidence", cfg.cw_confidence);
    cfg.cw_batch_size = j.value("batch_size", cfg.cw_batch_size);
    cfg.cw_early_abort = j.value("early_abort", cfg.cw_early_abort);
  }
  return cfg;
}

Tensor fgsm(const NetworkModel& model, const Tensor& x, const std::vector<int>& true_labels,
            float epsilon) {
  return iterative_linf(model, x, true_labels, epsilon, epsilon, 1, false, false, 0);
}

Tensor bim(const NetworkModel& model, const Tensor& x, const std::vector<int>& true_labels,
           float epsilon, float alpha, int iterations) {
  return iterative_linf(model, x, true_labels, epsilon, alpha, iterations, false, false, 0);
}

Tensor pgd(const NetworkModel& model, const Tensor& x, const std::vector<int>& true_labels,
           float epsilon, float alpha, int iterations, bool random_start, std::uint64_t seed) {
  return iterative_linf(model, x, true_labels, epsilon, alpha, iterations, random_start, false,
                        seed);
}

DeepFoolResult deepfool(const NetworkModel& model, const Tensor& x,
                        const std::vector<int>& true_labels, int max_iters, float overshoot) {
  (void)true_labels;  // success bookkeeping happens in craft_set
  const int total = x.dim(0);
  const int C = model.class_count;
  const std::int64_t stride = x.size() / std::max(1, total);

  DeepFoolResult res;
  res.perturbed = Tensor::zeros(x.shape);
  res.iterations_used.assign(static_cast<size_t>(total), 0);

  parallel_chunks(total, kChunk, [&](int begin, int end) {
    const int n = end - begin;
    Tensor x0 = slice_rows(x, begin, n);
    // Accumulated perturbation per sample.
    std::vector<std::vector<float>> r(static_cast<size_t>(n),
                                      std::vector<float>(static_cast<size_t>(stride), 0.0f));
    std::vector<int> base_class(static_cast<size_t>(n), -1);
    std::vector<bool> active(static_cast<size_t>(n), true);
    std::vector<int> iters(static_cast<size_t>(n), 0);

    for (int it = 0; it <= max_iters; ++it) {
      std::vector<int> rows;
      for (int i = 0; i < n; ++i) {
        if (active[static_cast<size_t>(i)]) rows.push_back(i);
      }
      if (rows.empty()) break;

      Shape cs = x0.shape;
      cs[0] = static_cast<int>(rows.size());
      Tensor cur = Tensor::zeros(cs);
      for (size_t i = 0; i < rows.size(); ++i) {
        const float* src = x0.data.data() + static_cast<std::int64_t>(rows[i]) * stride;
        float* dst = cur.data.data() + static_cast<std::int64_t>(i) * stride;
        const std::vector<float>& ri = r[static_cast<size_t>(rows[i])];
        for (std::int64_t j = 0; j < stride; ++j) dst[j] = src[j] + ri[static_cast<size_t>(j)];
      }

      Tape tape;
      ValueId xin = tape.leaf(cur, /*requires_grad=*/true);
      ValueId logits = model.forward(tape, xin);
      const Tensor logit_vals = tape.value(logits);

      // Fix the reference class on the first pass; later passes stop samples
      // whose prediction moved off it.
      bool any_left = false;
      for (size_t i = 0; i < rows.size(); ++i) {
        const int cls = argmax_row(logit_vals.row(static_cast<int>(i)), C);
        int& base = base_class[static_cast<size_t>(rows[i])];
        if (it == 0) base = cls;
        if (cls != base || it == max_iters) {
          active[static_cast<size_t>(rows[i])] = false;
        } else {
          any_left = true;
        }
      }
      if (!any_left) break;

      // Per-class input gradients via repeated backward passes on one tape.
      std::vector<std::vector<float>> class_grads(static_cast<size_t>(C));
      for (int k = 0; k < C; ++k) {
        std::vector<int> cols(rows.size(), k);
        ValueId picked = tape.sum_all(tape.gather_cols(logits, cols));
        tape.backward(picked);
        class_grads[static_cast<size_t>(k)] = tape.grad(xin);
      }

      for (size_t i = 0; i < rows.size(); ++i) {
        const int sample = rows[i];
        if (!active[static_cast<size_t>(sample)]) continue;
        const int c = base_class[static_cast<size_t>(sample)];
        const float* z = logit_vals.row(static_cast<int>(i));
        const std::int64_t off = static_cast<std::int64_t>(i) * stride;

        double best_score = 0.0;
        int best_k = -1;
        double best_wnorm2 = 0.0;
        for (int k = 0; k < C; ++k) {
          if (k == c) continue;
          double wnorm2 = 0.0;
          const float* gk = class_grads[static_cast<size_t>(k)].data() + off;
          const float* gc = class_grads[static_cast<size_t>(c)].data() + off;
          for (std::int64_t j = 0; j < stride; ++j) {
            const double w = static_cast<double>(gk[j]) - gc[j];
            wnorm2 += w * w;
          }
          if (wnorm2 < 1e-20) continue;
          const double fk = std::abs(static_cast<double>(z[k]) - z[c]);
          const double score = fk / std::sqrt(wnorm2);
          if (best_k < 0 || score < best_score) {
            best_score = score;
            best_k = k;
            best_wnorm2 = wnorm2;
          }
        }
        if (best_k < 0) {
          active[static_cast<size_t>(sample)] = false;
          continue;
        }
        const float* gk = class_grads[static_cast<size_t>(best_k)].data() + off;
        const float* gc = class_grads[static_cast<size_t>(c)].data() + off;
        const double fk = std::abs(static_cast<double>(z[best_k]) - z[c]);
        const double scale = fk / best_wnorm2;
        std::vector<float>& ri = r[static_cast<size_t>(sample)];
        for (std::int64_t j = 0; j < stride; ++j) {
          ri[static_cast<size_t>(j)] += static_cast<float>(scale * (static_cast<double>(gk[j]) - gc[j]));
        }
        ++iters[static_cast<size_t>(sample)];
      }
    }

    Tensor out = x0;
    for (int i = 0; i < n; ++i) {
      float* row = out.data.data() + static_cast<std::int64_t>(i) * stride;
      const std::vector<float>& ri = r[static_cast<size_t>(i)];
      for (std::int64_t j = 0; j < stride; ++j) {
        row[j] = clip01(row[j] + (1.0f + overshoot) * ri[static_cast<size_t>(j)]);
      }
      res.iterations_used[static_cast<size_t>(begin + i)] = iters[static_cast<size_t>(i)];
    }
    store_rows(res.perturbed, out, begin);
  });
  return res;
}

CwResult carlini_wagner_l2(const NetworkModel& model, const Tensor& x,
                           const std::vector<int>& true_labels, const std::vector<int>& targets,
                           const AttackConfig& cfg) {
  const int total = x.dim(0);
  if (total != static_cast<int>(true_labels.size()) || total != static_cast<int>(targets.size())) {
    throw InputError("cw: labels and targets must match sample count");
  }
  bool targeted = !targets.empty() && targets[0] >= 0;
  for (int t : targets) {
    if ((t >= 0) != targeted) throw InputError("cw: mixed targeted/untargeted batch");
  }
  const std::int64_t stride = x.size() / std::max(1, total);
  const float kappa = cfg.cw_confidence;

  CwResult res;
  res.perturbed = x;
  res.success.assign(static_cast<size_t>(total), 0);
  res.best_l2.assign(static_cast<size_t>(total), 0.0f);

  parallel_chunks(total, cfg.cw_batch_size, [&](int begin, int end) {
    const int n = end - begin;
    Tensor x0 = slice_rows(x, begin, n);
    std::vector<int> lab(targeted ? targets.begin() + begin : true_labels.begin() + begin,
                         targeted ? targets.begin() + end : true_labels.begin() + end);
    std::vector<int> truth(true_labels.begin() + begin, true_labels.begin() + end);

    Tensor w_init = x0;
    for (float& v : w_init.data) {
      v = std::atanh((2.0f * v - 1.0f) * 0.999999f);
    }

    std::vector<double> c(static_cast<size_t>(n), static_cast<double>(cfg.cw_initial_c));
    std::vector<double> c_lo(static_cast<size_t>(n), 0.0);
    std::vector<double> c_hi(static_cast<size_t>(n), 1e10);
    std::vector<float> best_l2(static_cast<size_t>(n), std::numeric_limits<float>::infinity());
    Tensor best_x = x0;
    std::vector<std::uint8_t> ever(static_cast<size_t>(n), 0);

    const int check_every = std::max(1, cfg.cw_max_iterations / 10);

    for (int bs = 0; bs < cfg.cw_binary_search_steps; ++bs) {
      Tensor w = w_init;
      std::vector<float> m(w.data.size(), 0.0f), v(w.data.size(), 0.0f);
      std::vector<std::uint8_t> round_success(static_cast<size_t>(n), 0);
      Tensor cvec = Tensor::zeros({n});
      for (int i = 0; i < n; ++i) cvec.data[static_cast<size_t>(i)] = static_cast<float>(c[static_cast<size_t>(i)]);
      double prev_total = std::numeric_limits<double>::infinity();

      for (int it = 1; it <= cfg.cw_max_iterations; ++it) {
        Tape tape;
        ValueId win = tape.leaf(w, /*requires_grad=*/true);
        ValueId xadv = tape.affine(tape.tanh(win), 0.5f, 0.5f);
        ValueId x0in = tape.leaf(x0);
        ValueId delta = tape.sub(xadv, x0in);
        ValueId delta2d = tape.reshape(tape.mul(delta, delta), {n, static_cast<int>(stride)});
        ValueId l2sq = tape.row_sum(delta2d);
        ValueId logits = model.forward(tape, xadv);
        ValueId hinge = tape.cw_hinge(logits, lab, kappa, targeted);
        ValueId cin = tape.leaf(cvec);
        ValueId obj = tape.sum_all(tape.add(l2sq, tape.mul(cin, hinge)));
        tape.backward(obj);

        // Track best candidates from this iterate.
        const Tensor& lv = tape.value(logits);
        const Tensor& xv = tape.value(xadv);
        const Tensor& dv = tape.value(l2sq);
        for (int i = 0; i < n; ++i) {
          const int pred = argmax_row(lv.row(i), model.class_count);
          const bool ok = targeted ? pred == lab[static_cast<size_t>(i)]
                                   : pred != truth[static_cast<size_t>(i)];
          if (!ok) continue;
          round_success[static_cast<size_t>(i)] = 1;
          const float l2 = std::sqrt(std::max(0.0f, dv.data[static_cast<size_t>(i)]));
          if (l2 < best_l2[static_cast<size_t>(i)]) {
            best_l2[static_cast<size_t>(i)] = l2;
            ever[static_cast<size_t>(i)] = 1;
            std::copy_n(xv.data.begin() + static_cast<std::int64_t>(i) * stride, stride,
                        best_x.data.begin() + static_cast<std::int64_t>(i) * stride);
          }
        }

        if (cfg.cw_early_abort && it % check_every == 0) {
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
          w.data[j] -= cfg.cw_learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + 1e-8f);
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
      res.best_l2[static_cast<size_t>(begin + i)] = ever[static_cast<size_t>(i)]
                                                        ? best_l2[static_cast<size_t>(i)]
                                                        : 0.0f;
    }
    store_rows(res.perturbed, best_x, begin);
  });
  return res;
}

namespace {

std::vector<int> cycle_targets(const std::vector<int>& labels, int class_count) {
  std::vector<int> t(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    t[i] = (labels[i] + 1 + static_cast<int>(i % static_cast<size_t>(class_count - 1))) %
           class_count;
  }
  return t;
}

}  // namespace

AdversarialSet craft_set(const NetworkModel& model, const LabeledImageSet& data,
                         const AttackConfig& cfg) {
  cfg.validate();
  LabeledImageSet subset = data.cap_per_class(cfg.cap_per_class);
  const int n = subset.count();
  const bool cycle = cfg.target_policy == TargetPolicy::CycleFalseClasses;

  std::vector<int> targets(static_cast<size_t>(n), -1);
  Tensor perturbed;
  switch (cfg.kind) {
    case AttackTag::FGSM:
      perturbed = fgsm(model, subset.images, subset.labels, cfg.epsilon);
      break;
    case AttackTag::BIM:
      if (cycle) targets = cycle_targets(subset.labels, model.class_count);
      perturbed = iterative_linf(model, subset.images, cycle ? targets : subset.labels,
                                 cfg.epsilon, cfg.alpha, cfg.iterations, false, cycle, cfg.seed);
      break;
    case AttackTag::PGD:
      if (cycle) targets = cycle_targets(subset.labels, model.class_count);
      perturbed = iterative_linf(model, subset.images, cycle ? targets : subset.labels,
                                 cfg.epsilon, cfg.alpha, cfg.iterations, cfg.random_start, cycle,
                                 cfg.seed);
      break;
    case AttackTag::DeepFool:
      perturbed = deepfool(model, subset.images, subset.labels, cfg.deepfool_max_iters,
                           cfg.deepfool_overshoot)
                      .perturbed;
      break;
    case AttackTag::CW: {
      if (cycle) targets = cycle_targets(subset.labels, model.class_count);
      perturbed = carlini_wagner_l2(model, subset.images, subset.labels, targets, cfg).perturbed;
      break;
    }
    default:
      throw InputError("craft_set: unsupported attack kind");
  }

  const std::vector<int> predicted = model.predict(perturbed);
  std::vector<int> keep;
  for (int i = 0; i < n; ++i) {
    if (predicted[static_cast<size_t>(i)] != subset.labels[static_cast<size_t>(i)]) keep.push_back(i);
  }
  if (keep.empty()) {
    std::cerr << "warning: " << to_string(cfg.kind)
              << " produced no successful adversarial examples\n";
  }

  const std::int64_t stride = subset.images.size() / std::max(1, n);
  AdversarialSet out;
  Shape shape = subset.images.shape;
  shape[0] = static_cast<int>(keep.size());
  out.originals = Tensor::zeros(shape);
  out.perturbed = Tensor::zeros(shape);
  std::vector<int> histogram(static_cast<size_t>(model.class_count), 0);
  for (size_t i = 0; i < keep.size(); ++i) {
    const int src = keep[i];
    std::copy_n(subset.images.data.begin() + src * stride, stride,
                out.originals.data.begin() + static_cast<std::int64_t>(i) * stride);
    std::copy_n(perturbed.data.begin() + src * stride, stride,
                out.perturbed.data.begin() + static_cast<std::int64_t>(i) * stride);
    out.true_labels.push_back(subset.labels[static_cast<size_t>(src)]);
    out.predicted_labels.push_back(predicted[static_cast<size_t>(src)]);
    out.intended_targets.push_back(targets[static_cast<size_t>(src)]);
    out.l2.push_back(l2_distance(out.originals.row(static_cast<int>(i)),
                                 out.perturbed.row(static_cast<int>(i)), stride));
    out.linf.push_back(linf_distance(out.originals.row(static_cast<int>(i)),
                                     out.perturbed.row(static_cast<int>(i)), stride));
    out.success.push_back(1);
    ++histogram[static_cast<size_t>(predicted[static_cast<size_t>(src)])];
  }
  out.attack_tag = cfg.kind;
  out.source_split = subset.split;
  out.model_id = model.model_id();

  nlohmann::json meta;
  meta["config"] = nlohmann::json::parse(cfg.to_json());
  meta["attempted"] = n;
  meta["succeeded"] = keep.size();
  meta["achieved_label_histogram"] = histogram;
  out.config_json = meta.dump();
  out.validate();
  return out;
}

AdversarialSet transfer_set(const NetworkModel& victim, const AdversarialSet& adv) {
  const std::vector<int> predicted = victim.predict(adv.perturbed);
  std::vector<int> keep;
  for (int i = 0; i < adv.count(); ++i) {
    if (predicted[static_cast<size_t>(i)] != adv.true_labels[static_cast<size_t>(i)]) keep.push_back(i);
  }
  AdversarialSet out = adv.select(keep);
  for (size_t i = 0; i < keep.size(); ++i) {
    out.predicted_labels[i] = predicted[static_cast<size_t>(keep[i])];
  }
  out.attack_tag = AttackTag::Transfer;
  out.model_id = victim.model_id();

  nlohmann::json meta = nlohmann::json::parse(adv.config_json);
  meta["transfer_source_model"] = adv.model_id;
  meta["transfer_source_attack"] = to_string(adv.attack_tag);
  meta["transfer_kept"] = keep.size();
  meta["transfer_attempted"] = adv.count();
  out.config_json = meta.dump();
  out.validate();
  return out;
}

LabeledImageSet noise_matched_benign(const NetworkModel& model, const AdversarialSet& adv,
                                     std::uint64_t seed) {
  const int n = adv.count();
  const std::int64_t stride = n ? adv.originals.size() / n : 0;
  const bool l2_metric = adv.attack_tag == AttackTag::CW || adv.attack_tag == AttackTag::DeepFool;

  Tensor noisy = adv.originals;
  for (int i = 0; i < n; ++i) {
    std::mt19937 rng = stream_rng(seed, static_cast<std::uint64_t>(i));
    float* row = noisy.row(i);
    if (l2_metric) {
      const float radius = adv.l2[static_cast<size_t>(i)];
      std::vector<float> dir(static_cast<size_t>(stride));
      double norm2 = 0.0;
      for (auto& v : dir) {
        v = normal_float(rng);
        norm2 += static_cast<double>(v) * v;
      }
      const float scale = norm2 > 0.0 ? radius / static_cast<float>(std::sqrt(norm2)) : 0.0f;
      for (std::int64_t j = 0; j < stride; ++j) {
        row[j] = clip01(row[j] + dir[static_cast<size_t>(j)] * scale);
      }
    } else {
      const float eps = adv.linf[static_cast<size_t>(i)];
      for (std::int64_t j = 0; j < stride; ++j) {
        const float sign = (rng() & 1u) ? 1.0f : -1.0f;
        row[j] = clip01(row[j] + sign * eps);
      }
    }
  }

  const std::vector<int> predicted = model.predict(noisy);
  std::vector<int> keep;
  for (int i = 0; i < n; ++i) {
    if (predicted[static_cast<size_t>(i)] == adv.true_labels[static_cast<size_t>(i)]) keep.push_back(i);
  }

  LabeledImageSet out;
  Shape shape = adv.originals.shape;
  shape[0] = static_cast<int>(keep.size());
  out.images = Tensor::zeros(shape);
  for (size_t i = 0; i < keep.size(); ++i) {
    std::copy_n(noisy.data.begin() + static_cast<std::int64_t>(keep[i]) * stride, stride,
                out.images.data.begin() + static_cast<std::int64_t>(i) * stride);
    out.labels.push_back(adv.true_labels[static_cast<size_t>(keep[i])]);
  }
  out.split = adv.source_split;
  return out;
}

}  // namespace dla
