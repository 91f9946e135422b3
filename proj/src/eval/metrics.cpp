#include "cwhar/metrics.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "cwhar/dataset.h"
#include "cwhar/errors.h"
#include "cwhar/ops.h"

namespace cwhar::eval {

ConfusionMatrix::ConfusionMatrix() : ConfusionMatrix(std::vector<std::string>(kActivityNames.begin(), kActivityNames.end())) {}

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> class_names)
    : names_(std::move(class_names)), counts_(names_.size() * names_.size(), 0) {
  if (names_.empty()) throw ArgumentError("confusion matrix needs at least one class");
}

std::uint64_t ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
  if (truth >= size() || predicted >= size()) throw ArgumentError("confusion index out of range");
  return counts_[truth * size() + predicted];
}

void ConfusionMatrix::set(std::size_t truth, std::size_t predicted, std::uint64_t count) {
  if (truth >= size() || predicted >= size()) throw ArgumentError("confusion index out of range");
  counts_[truth * size() + predicted] = count;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) { set(truth, predicted, at(truth, predicted) + 1); }

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.names_ != names_) throw ArgumentError("cannot merge confusion matrices over different classes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

nlohmann::json ConfusionMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < size(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < size(); ++p) row.push_back(at(t, p));
    rows.push_back(std::move(row));
  }
  return {{"class_names", names_}, {"counts", rows}};
}

ConfusionMatrix ConfusionMatrix::from_json(const nlohmann::json& j) {
  ConfusionMatrix cm(j.at("class_names").get<std::vector<std::string>>());
  const auto& rows = j.at("counts");
  if (rows.size() != cm.size()) throw FormatError("confusion matrix row count does not match class count");
  for (std::size_t t = 0; t < cm.size(); ++t) {
    if (rows[t].size() != cm.size()) throw FormatError("confusion matrix is not square");
    for (std::size_t p = 0; p < cm.size(); ++p) cm.set(t, p, rows[t][p].get<std::uint64_t>());
  }
  return cm;
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream out;
  out << "true\\predicted";
  for (const auto& n : names_) out << ',' << n;
  out << '\n';
  for (std::size_t t = 0; t < size(); ++t) {
    out << names_[t];
    for (std::size_t p = 0; p < size(); ++p) out << ',' << at(t, p);
    out << '\n';
  }
  return out.str();
}

namespace {

double safe_ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

std::vector<double> per_class_f1(const ConfusionMatrix& cm) {
  const std::size_t k = cm.size();
  std::vector<double> f1(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    double tp = static_cast<double>(cm.at(c, c)), row = 0.0, col = 0.0;
    for (std::size_t o = 0; o < k; ++o) {
      row += static_cast<double>(cm.at(c, o));
      col += static_cast<double>(cm.at(o, c));
    }
    const double precision = safe_ratio(tp, col);
    const double recall = safe_ratio(tp, row);
    f1[c] = safe_ratio(2.0 * precision * recall, precision + recall);
  }
  return f1;
}

double macro_f1(const ConfusionMatrix& cm) {
  const auto f1 = per_class_f1(cm);
  double s = 0.0;
  for (double v : f1) s += v;
  return s / static_cast<double>(f1.size());
}

double accuracy(const ConfusionMatrix& cm) {
  std::uint64_t diag = 0;
  for (std::size_t c = 0; c < cm.size(); ++c) diag += cm.at(c, c);
  const std::uint64_t total = cm.total();
  return total ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t c = 0; c < per_class_f1.size(); ++c) per_class[confusion.class_names()[c]] = per_class_f1[c];
  return {{"accuracy", accuracy},
          {"macro_f1", macro_f1},
          {"per_class_f1", per_class},
          {"n_samples", n_samples},
          {"confusion", confusion.to_json()}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.confusion = ConfusionMatrix::from_json(j.at("confusion"));
    r.accuracy = j.at("accuracy").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.n_samples = j.at("n_samples").get<std::size_t>();
    for (const auto& name : r.confusion.class_names()) r.per_class_f1.push_back(j.at("per_class_f1").at(name).get<double>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed metrics report: ") + e.what());
  }
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ArgumentError("metrics need at least one evaluated sample");
  MetricsReport r;
  r.confusion = cm;
  r.accuracy = accuracy(cm);
  r.per_class_f1 = per_class_f1(cm);
  r.macro_f1 = macro_f1(cm);
  r.n_samples = static_cast<std::size_t>(cm.total());
  return r;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ArgumentError("argmax of an empty row");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

ExampleSet classification_examples(const nn::ModelBundle& model, std::span<const SyncedSample* const> samples) {
  if (samples.empty()) throw ArgumentError("no samples to classify");
  ExampleSet ex;
  if (model.is_joint()) {
    std::vector<Tensor> parts;
    for (Modality m : model.config().joint_inputs) {
      parts.push_back(stack_view(samples, m));
      for (const SyncedSample* s : samples) ex.labels.push_back(s->label);
    }
    ex.inputs.push_back(concat_rows(parts));
    return ex;
  }
  for (std::size_t v = 0; v < model.classifier_views(); ++v) {
    ex.inputs.push_back(stack_view(samples, model.config().views[v].modality));
  }
  for (const SyncedSample* s : samples) ex.labels.push_back(s->label);
  return ex;
}

ExampleSet classification_examples(const nn::ModelBundle& model, std::span<const SyncedSample> samples) {
  std::vector<const SyncedSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return classification_examples(model, std::span<const SyncedSample* const>(ptrs));
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() == 0) throw ShapeError("gather_rows needs at least one axis");
  const std::size_t n = x.dim(0);
  const std::size_t stride = n ? x.numel() / n : 0;
  std::vector<double> out;
  out.reserve(rows.size() * stride);
  const auto src = x.data();
  for (std::size_t r : rows) {
    if (r >= n) throw ShapeError("gather_rows index " + std::to_string(r) + " out of range " + std::to_string(n));
    out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(r * stride),
               src.begin() + static_cast<std::ptrdiff_t>((r + 1) * stride));
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  return Tensor::from(std::move(shape), std::move(out));
}

Tensor predict_logits(nn::ModelBundle& model, const ExampleSet& examples, std::size_t batch_size) {
  if (examples.size() == 0) throw ArgumentError("no examples to classify");
  if (batch_size == 0) throw ArgumentError("batch size must be positive");
  NoGradGuard no_grad;
  std::vector<Tensor> chunks;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t stop = std::min(examples.size(), start + batch_size);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    std::vector<Tensor> inputs;
    for (const auto& in : examples.inputs) inputs.push_back(gather_rows(in, idx));
    chunks.push_back(model.logits(inputs, BatchNormMode::eval));
  }
  return chunks.size() == 1 ? chunks[0] : concat_rows(chunks);
}

ConfusionMatrix confusion_from_logits(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("logits " + shape_str(logits.shape()) + " do not match " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t k = logits.dim(1);
  std::vector<std::string> names(kActivityNames.begin(), kActivityNames.end());
  if (k != names.size()) {
    names.clear();
    for (std::size_t c = 0; c < k; ++c) names.push_back("class" + std::to_string(c));
  }
  ConfusionMatrix cm(std::move(names));
  const auto data = logits.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    cm.add(labels[i], argmax(data.subspan(i * k, k)));
  }
  return cm;
}

MetricsReport evaluate(nn::ModelBundle& model, std::span<const SyncedSample> test_set) {
  if (test_set.empty()) throw ArgumentError("cannot evaluate on an empty test set");
  const ExampleSet ex = classification_examples(model, test_set);
  return metrics_from_confusion(confusion_from_logits(predict_logits(model, ex), ex.labels));
}

// ----------------------------------------------------------------------------

std::string shots_label(std::optional<std::size_t> shots) { return shots ? std::to_string(*shots) : "all"; }

namespace {

// "all" sorts after every finite shot count.
bool shots_less(std::optional<std::size_t> a, std::optional<std::size_t> b) {
  if (!a) return false;
  if (!b) return true;
  return *a < *b;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

const MethodCurve& Comparison::curve(const std::string& method) const {
  for (const auto& c : curves) {
    if (c.method == method) return c;
  }
  throw ArgumentError("no curve for method '" + method + "'");
}

nlohmann::json Comparison::to_json() const {
  nlohmann::json jr = nlohmann::json::array();
  for (const auto& r : rows) {
    jr.push_back({{"name", r.name},
                  {"method", r.method},
                  {"shots", shots_label(r.shots)},
                  {"macro_f1", r.macro_f1},
                  {"accuracy", r.accuracy},
                  {"delta_macro_f1_pp", opt_json(r.delta_macro_f1_pp)},
                  {"delta_accuracy_pp", opt_json(r.delta_accuracy_pp)},
                  {"per_class_delta_pp", r.per_class_delta_pp}});
  }
  nlohmann::json jc = nlohmann::json::array();
  for (const auto& c : curves) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : c.points) {
      pts.push_back({{"shots", shots_label(p.shots)},
                     {"mean_macro_f1", p.mean_macro_f1},
                     {"std_macro_f1", p.std_macro_f1},
                     {"mean_accuracy", p.mean_accuracy},
                     {"runs", p.runs}});
    }
    jc.push_back({{"method", c.method}, {"points", pts}});
  }
  return {{"reference_method", reference_method},
          {"delta_unit", "percentage points"},
          {"class_names", class_names},
          {"rows", jr},
          {"curves", jc}};
}

std::string Comparison::table_csv() const {
  std::ostringstream out;
  out << "name,method,shots,macro_f1,accuracy,delta_macro_f1_pp,delta_accuracy_pp";
  for (const auto& n : class_names) out << ",delta_f1_pp_" << n;
  out << '\n';
  for (const auto& r : rows) {
    out << r.name << ',' << r.method << ',' << shots_label(r.shots) << ',' << fmt(r.macro_f1) << ',' << fmt(r.accuracy)
        << ',' << (r.delta_macro_f1_pp ? fmt(*r.delta_macro_f1_pp) : "") << ','
        << (r.delta_accuracy_pp ? fmt(*r.delta_accuracy_pp) : "");
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      out << ',' << (c < r.per_class_delta_pp.size() ? fmt(r.per_class_delta_pp[c]) : "");
    }
    out << '\n';
  }
  return out.str();
}

std::string Comparison::curves_csv() const {
  std::ostringstream out;
  out << "method,shots,mean_macro_f1,std_macro_f1,mean_accuracy,runs\n";
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      out << c.method << ',' << shots_label(p.shots) << ',' << fmt(p.mean_macro_f1) << ',' << fmt(p.std_macro_f1) << ','
          << fmt(p.mean_accuracy) << ',' << p.runs << '\n';
    }
  }
  return out.str();
}

Comparison compare_runs(std::span<const RunSummary> runs, std::optional<std::string> reference_method) {
  if (runs.size() < 2) throw ArgumentError("comparison needs at least 2 runs, got " + std::to_string(runs.size()));
  Comparison cmp;
  cmp.class_names = runs[0].metrics.confusion.class_names();
  for (const auto& r : runs) {
    if (r.metrics.confusion.class_names() != cmp.class_names) {
      throw ArgumentError("run '" + r.name + "' was evaluated over a different class set");
    }
    if (r.metrics.per_class_f1.size() != cmp.class_names.size()) {
      throw ArgumentError("run '" + r.name + "' has " + std::to_string(r.metrics.per_class_f1.size()) +
                          " per-class scores for " + std::to_string(cmp.class_names.size()) + " classes");
    }
  }
  cmp.reference_method = reference_method.value_or(runs[0].method);

  // Group by method and shots, keeping first-appearance order of methods.
  std::vector<std::string> methods;
  std::map<std::pair<std::string, std::optional<std::size_t>>, std::vector<const RunSummary*>,
           std::less<>>
      groups;
  for (const auto& r : runs) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    groups[{r.method, r.shots}].push_back(&r);
  }
  if (std::find(methods.begin(), methods.end(), cmp.reference_method) == methods.end()) {
    throw ArgumentError("reference method '" + cmp.reference_method + "' has no runs");
  }

  const std::size_t k = cmp.class_names.size();
  struct Mean {
    double f1 = 0.0, acc = 0.0, sq = 0.0;
    std::vector<double> per_class;
  };
  auto mean_of = [&](const std::vector<const RunSummary*>& group) {
    Mean m;
    m.per_class.assign(k, 0.0);
    for (const auto* r : group) {
      m.f1 += r->metrics.macro_f1;
      m.acc += r->metrics.accuracy;
      m.sq += r->metrics.macro_f1 * r->metrics.macro_f1;
      for (std::size_t c = 0; c < k; ++c) m.per_class[c] += r->metrics.per_class_f1[c];
    }
    const double n = static_cast<double>(group.size());
    m.f1 /= n;
    m.acc /= n;
    m.sq /= n;
    for (double& v : m.per_class) v /= n;
    return m;
  };

  for (const auto& r : runs) {
    ComparisonRow row{r.name, r.method, r.shots, r.metrics.macro_f1, r.metrics.accuracy, {}, {}, {}};
    auto ref = groups.find(std::make_pair(cmp.reference_method, r.shots));
    if (ref != groups.end()) {
      const Mean m = mean_of(ref->second);
      row.delta_macro_f1_pp = 100.0 * (r.metrics.macro_f1 - m.f1);
      row.delta_accuracy_pp = 100.0 * (r.metrics.accuracy - m.acc);
      for (std::size_t c = 0; c < k; ++c) row.per_class_delta_pp.push_back(100.0 * (r.metrics.per_class_f1[c] - m.per_class[c]));
    }
    cmp.rows.push_back(std::move(row));
  }

  for (const auto& method : methods) {
    MethodCurve curve{method, {}};
    for (const auto& [key, group] : groups) {
      if (key.first != method) continue;
      const Mean m = mean_of(group);
      curve.points.push_back({key.second, m.f1, m.acc, std::sqrt(std::max(0.0, m.sq - m.f1 * m.f1)), group.size()});
    }
    std::stable_sort(curve.points.begin(), curve.points.end(),
                     [](const CurvePoint& a, const CurvePoint& b) { return shots_less(a.shots, b.shots); });
    cmp.curves.push_back(std::move(curve));
  }
  return cmp;
}

}  // namespace cwhar::eval
