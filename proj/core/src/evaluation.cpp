#include "dla/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dla/errors.hpp"

namespace dla {

Metrics metrics(const ConfusionCounts& c) {
  if (c.total() <= 0) throw InputError("metrics: no samples");
  Metrics m;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (c.tp + c.fp > 0) {
    m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  } else {
    m.degenerate = true;
  }
  if (c.tp + c.fn > 0) {
    m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  } else {
    m.degenerate = true;
  }
  if (m.precision + m.recall > 0.0) {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  } else {
    m.f1 = 0.0;
    m.degenerate = true;
  }
  if (c.fp + c.tn > 0) {
    m.fpr = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
  } else {
    m.degenerate = true;
  }
  if (c.fn + c.tp > 0) {
    m.fnr = static_cast<double>(c.fn) / static_cast<double>(c.fn + c.tp);
  } else {
    m.degenerate = true;
  }
  return m;
}

ConfusionCounts count_verdicts(const std::vector<std::uint8_t>& verdicts,
                               const std::vector<int>& labels) {
  if (verdicts.size() != labels.size()) {
    throw InputError("count_verdicts: verdicts and labels differ in length");
  }
  ConfusionCounts c;
  for (size_t i = 0; i < verdicts.size(); ++i) {
    const bool pred = verdicts[i] != 0;
    const bool truth = labels[i] != 0;
    if (pred && truth) ++c.tp;
    else if (!pred && !truth) ++c.tn;
    else if (pred && !truth) ++c.fp;
    else ++c.fn;
  }
  return c;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["counts"] = {{"tp", counts.tp}, {"tn", counts.tn}, {"fp", counts.fp}, {"fn", counts.fn}};
  j["metrics"] = {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
                  {"f1", m.f1},             {"fpr", m.fpr},             {"fnr", m.fnr},
                  {"degenerate", m.degenerate}};
  j["meta"] = meta;
  return j;
}

EvalReport evaluate_alarm(const AlarmModel& alarm, const ActivationTraceSet& test_set,
                          const std::string& name) {
  if (!alarm.meta.target_model_id.empty() && !test_set.target_model_id.empty() &&
      alarm.meta.target_model_id != test_set.target_model_id) {
    throw BindingError("evaluate_alarm: trace set bound to target " + test_set.target_model_id +
                       ", alarm expects " + alarm.meta.target_model_id);
  }
  AlarmScores scores = alarm_classify(alarm, test_set);
  EvalReport r;
  r.name = name;
  r.counts = count_verdicts(scores.verdicts, test_set.labels);
  r.m = metrics(r.counts);
  r.meta["alarm_tags"] = alarm.tag_string();
  r.meta["test_attack"] = to_string(test_set.attack_tag);
  r.meta["samples"] = test_set.count();
  r.meta["target_model_id"] = test_set.target_model_id;
  return r;
}

double CrossTestMatrix::row_mean_f1(size_t row) const {
  double acc = 0.0;
  for (const CrossCell& c : cells[row]) acc += c.f1;
  return cells[row].empty() ? 0.0 : acc / static_cast<double>(cells[row].size());
}

double CrossTestMatrix::column_mean_f1(size_t col, int skip_row) const {
  double acc = 0.0;
  int n = 0;
  for (size_t r = 0; r < cells.size(); ++r) {
    if (static_cast<int>(r) == skip_row) continue;
    acc += cells[r][col].f1;
    ++n;
  }
  return n ? acc / n : 0.0;
}

nlohmann::json CrossTestMatrix::to_json() const {
  nlohmann::json j;
  j["alarms"] = alarm_names;
  j["test_sets"] = set_names;
  nlohmann::json rows = nlohmann::json::array();
  for (size_t r = 0; r < cells.size(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (const CrossCell& c : cells[r]) {
      row.push_back({{"accuracy", c.accuracy}, {"f1", c.f1}});
    }
    rows.push_back(std::move(row));
  }
  j["cells"] = std::move(rows);
  return j;
}

std::string CrossTestMatrix::render() const {
  std::ostringstream os;
  os << "alarm \\ test set";
  for (const auto& s : set_names) os << "\t" << s;
  os << "\n";
  for (size_t r = 0; r < cells.size(); ++r) {
    os << alarm_names[r];
    for (const CrossCell& c : cells[r]) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "\t%.3f/%.3f", c.accuracy, c.f1);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

CrossTestMatrix cross_test(const std::vector<const AlarmModel*>& alarms,
                           const std::vector<std::string>& alarm_names,
                           const std::vector<ActivationTraceSet>& test_sets,
                           const std::vector<std::string>& set_names) {
  if (alarms.empty() || test_sets.empty()) throw InputError("cross_test: empty inputs");
  if (alarms.size() != alarm_names.size() || test_sets.size() != set_names.size()) {
    throw InputError("cross_test: names do not match inputs");
  }
  const std::string target_id = alarms[0]->meta.target_model_id;
  for (const AlarmModel* a : alarms) {
    if (a->meta.target_model_id != target_id) {
      throw BindingError("cross_test: alarms bound to different targets");
    }
  }
  for (const ActivationTraceSet& s : test_sets) {
    if (s.target_model_id != target_id) {
      throw BindingError("cross_test: test set bound to a different target");
    }
    if (s.source_split != Split::Test) {
      throw InputError("cross_test: test sets must come from the test split");
    }
  }

  CrossTestMatrix m;
  m.alarm_names = alarm_names;
  m.set_names = set_names;
  m.cells.resize(alarms.size());
  for (size_t r = 0; r < alarms.size(); ++r) {
    m.cells[r].resize(test_sets.size());
    for (size_t c = 0; c < test_sets.size(); ++c) {
      AlarmScores s = alarm_classify(*alarms[r], test_sets[c]);
      Metrics mm = metrics(count_verdicts(s.verdicts, test_sets[c].labels));
      m.cells[r][c] = {mm.accuracy, mm.f1};
    }
  }
  return m;
}

EvalReport misclassification_control(const NetworkModel& target, const LabeledImageSet& train,
                                     const LabeledImageSet& test, const ControlConfig& cfg) {
  auto split_by_correctness = [&](const LabeledImageSet& data) {
    const std::vector<int> pred = target.predict(data.images);
    std::vector<int> correct, incorrect;
    for (int i = 0; i < data.count(); ++i) {
      if (pred[static_cast<size_t>(i)] == data.labels[static_cast<size_t>(i)]) correct.push_back(i);
      else incorrect.push_back(i);
    }
    return std::make_pair(correct, incorrect);
  };

  auto [train_ok, train_err] = split_by_correctness(train);
  auto [test_ok, test_err] = split_by_correctness(test);

  EvalReport r;
  r.name = "misclassification-control";
  r.meta["target_model_id"] = target.model_id();
  r.meta["train_misclassified"] = train_err.size();
  r.meta["test_misclassified"] = test_err.size();
  if (static_cast<int>(train_err.size()) < cfg.min_misclassified) {
    r.meta["warning"] = "fewer than " + std::to_string(cfg.min_misclassified) +
                        " misclassified training samples; control is unreliable";
  }
  if (train_err.empty() || test_err.empty()) {
    r.meta["warning"] = "no misclassified samples available; control not trainable";
    r.m.degenerate = true;
    return r;
  }

  auto traces_of = [&](const LabeledImageSet& data, const std::vector<int>& idx, int label,
                       Split split) {
    return extract_features(target, data.select(idx).images, label, AttackTag::Control, split);
  };
  ActivationTraceSet benign_tr = traces_of(train, train_ok, 0, Split::Train);
  ActivationTraceSet err_tr = traces_of(train, train_err, 1, Split::Train);

  AlarmTrainConfig at = cfg.alarm;
  at.seed = cfg.seed;
  AlarmModel alarm = train_alarm(benign_tr, err_tr, at);

  ActivationTraceSet benign_te = traces_of(test, test_ok, 0, Split::Test);
  ActivationTraceSet err_te = traces_of(test, test_err, 1, Split::Test);
  ActivationTraceSet merged = balanced_merge(benign_te, err_te, cfg.seed + 1);

  AlarmScores scores = alarm_classify(alarm, merged);
  r.counts = count_verdicts(scores.verdicts, merged.labels);
  r.m = metrics(r.counts);
  r.meta["evaluated_samples"] = merged.count();
  return r;
}

EvalReport noise_control_eval(const AlarmModel& alarm, const NetworkModel& target,
                              const LabeledImageSet& noisy_benign,
                              const LabeledImageSet& clean_benign, const AdversarialSet& adv_test,
                              std::uint64_t seed) {
  ActivationTraceSet noisy_tr =
      extract_features(target, noisy_benign.images, 0, adv_test.attack_tag, Split::Test);
  ActivationTraceSet adv_tr =
      extract_features(target, adv_test.perturbed, 1, adv_test.attack_tag, Split::Test);

  // Clean negatives matched in count to the adversarial positives.
  ActivationTraceSet clean_tr =
      extract_features(target, clean_benign.images, 0, adv_test.attack_tag, Split::Test);
  if (clean_tr.count() > adv_tr.count()) {
    ActivationTraceSet sub = balanced_merge(clean_tr, adv_tr, seed);
    std::vector<int> keep;
    for (int i = 0; i < sub.count(); ++i) {
      if (sub.labels[static_cast<size_t>(i)] == 0) keep.push_back(i);
    }
    clean_tr = sub.select(keep);
    clean_tr.attack_tag = adv_test.attack_tag;
  }

  std::vector<ActivationTraceSet> negs = {clean_tr, noisy_tr};
  ActivationTraceSet negatives = concat_traces(negs, adv_test.attack_tag);
  std::vector<ActivationTraceSet> all = {negatives, adv_tr};
  ActivationTraceSet merged = concat_traces(all, adv_test.attack_tag);

  AlarmScores scores = alarm_classify(alarm, merged);
  EvalReport r;
  r.name = "noise-control";
  r.counts = count_verdicts(scores.verdicts, merged.labels);
  r.m = metrics(r.counts);
  r.meta["attack"] = to_string(adv_test.attack_tag);
  r.meta["clean_negatives"] = clean_tr.count();
  r.meta["noisy_negatives"] = noisy_tr.count();
  r.meta["positives"] = adv_tr.count();
  r.meta["target_model_id"] = target.model_id();
  return r;
}

PcaResult pca_project(const ActivationTraceSet& traces, int k) {
  const int m = traces.count();
  const int d = traces.width();
  if (k < 1) throw InputError("pca_project: k must be >= 1");
  if (k > d) throw InputError("pca_project: k exceeds trace width");
  if (m < k) throw InputError("pca_project: need at least k samples");

  using Mat = Eigen::MatrixXd;
  Mat x(m, d);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < d; ++j) x(i, j) = traces.traces.row(i)[j];
  }
  Eigen::VectorXd mean = x.colwise().mean();
  x.rowwise() -= mean.transpose();
  Mat cov = (x.transpose() * x) / std::max(1, m - 1);

  Eigen::SelfAdjointEigenSolver<Mat> solver(cov);
  if (solver.info() != Eigen::Success) throw InputError("pca_project: eigendecomposition failed");
  // SelfAdjointEigenSolver returns ascending eigenvalues; take the top k.
  const Eigen::VectorXd evals = solver.eigenvalues();
  const Mat evecs = solver.eigenvectors();
  const double total = std::max(evals.sum(), 1e-300);

  PcaResult res;
  res.components = Tensor::zeros({k, d});
  res.coordinates = Tensor::zeros({m, k});
  res.mean.resize(static_cast<size_t>(d));
  for (int j = 0; j < d; ++j) res.mean[static_cast<size_t>(j)] = static_cast<float>(mean(j));
  for (int c = 0; c < k; ++c) {
    const int src = d - 1 - c;
    res.explained_variance.push_back(evals(src));
    res.explained_variance_ratio.push_back(evals(src) / total);
    for (int j = 0; j < d; ++j) {
      res.components.row(c)[j] = static_cast<float>(evecs(j, src));
    }
  }
  Mat proj(d, k);
  for (int c = 0; c < k; ++c) proj.col(c) = evecs.col(d - 1 - c);
  Mat coords = x * proj;
  for (int i = 0; i < m; ++i) {
    for (int c = 0; c < k; ++c) res.coordinates.row(i)[c] = static_cast<float>(coords(i, c));
  }
  return res;
}

void write_pca_tsv(const PcaResult& pca, const ActivationTraceSet& traces,
                   const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("write_pca_tsv: cannot open '" + path.string() + "'");
  const int k = pca.coordinates.dim(1);
  f << "label";
  for (int c = 0; c < k; ++c) f << "\tpc" << (c + 1);
  f << "\n";
  char buf[64];
  for (int i = 0; i < pca.coordinates.dim(0); ++i) {
    f << traces.labels[static_cast<size_t>(i)];
    for (int c = 0; c < k; ++c) {
      std::snprintf(buf, sizeof(buf), "\t%.6g", static_cast<double>(pca.coordinates.row(i)[c]));
      f << buf;
    }
    f << "\n";
  }
}

void emit_report(const nlohmann::json& results, const std::filesystem::path& json_path) {
  std::ofstream f(json_path, std::ios::trunc | std::ios::binary);
  if (!f) throw IoError("emit_report: cannot open '" + json_path.string() + "'");
  f << results.dump(2) << "\n";
  if (!f) throw IoError("emit_report: write failed for '" + json_path.string() + "'");
}

namespace {
void render_json(const nlohmann::json& j, const std::string& prefix, std::ostringstream& os) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      render_json(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), os);
    }
  } else if (j.is_array()) {
    for (size_t i = 0; i < j.size(); ++i) {
      render_json(j[i], prefix + "[" + std::to_string(i) + "]", os);
    }
  } else {
    os << prefix << "\t" << j.dump() << "\n";
  }
}
}  // namespace

std::string render_report_table(const nlohmann::json& results) {
  std::ostringstream os;
  os << "field\tvalue\n";
  render_json(results, "", os);
  return os.str();
}

void emit_report(const nlohmann::json& results, const std::filesystem::path& json_path,
                 const std::filesystem::path& table_path) {
  emit_report(results, json_path);
  std::ofstream f(table_path, std::ios::trunc | std::ios::binary);
  if (!f) throw IoError("emit_report: cannot open '" + table_path.string() + "'");
  f << render_report_table(results);
}

}  // namespace dla
