#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cwhar/model.h"
#include "cwhar/spectrogram.h"

namespace cwhar::eval {

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  ConfusionMatrix();  // the seven activity classes
  explicit ConfusionMatrix(std::vector<std::string> class_names);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& class_names() const { return names_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const;
  void set(std::size_t truth, std::size_t predicted, std::uint64_t count);
  void add(std::size_t truth, std::size_t predicted);
  std::uint64_t total() const;
  // Sums counts; differing class names throw ArgumentError.
  void merge(const ConfusionMatrix& other);

  nlohmann::json to_json() const;
  static ConfusionMatrix from_json(const nlohmann::json& j);
  std::string to_csv() const;

 private:
  std::vector<std::string> names_;
  std::vector<std::uint64_t> counts_;
};

/// Precision, recall and F1 per class with 0/0 read as 0.
std::vector<double> per_class_f1(const ConfusionMatrix& cm);
/// Unweighted mean of per_class_f1 over every class, absent ones included.
double macro_f1(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);

struct MetricsReport {
  double accuracy = 0.0;
  std::vector<double> per_class_f1;
  double macro_f1 = 0.0;
  ConfusionMatrix confusion;
  std::size_t n_samples = 0;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

/// ArgumentError when the matrix is empty.
MetricsReport metrics_from_confusion(const ConfusionMatrix& cm);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Classifier inputs for a set of samples: one B×H×W tensor per classifier
/// view. A joint model contributes one example per joint modality, stacked
/// modality-major.
struct ExampleSet {
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;
  std::size_t size() const { return labels.size(); }
};

ExampleSet classification_examples(const nn::ModelBundle& model, std::span<const SyncedSample* const> samples);
ExampleSet classification_examples(const nn::ModelBundle& model, std::span<const SyncedSample> samples);

/// Copies the listed rows of the leading axis into a new leaf tensor.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// Logits for a whole example set in eval mode without recording gradients.
Tensor predict_logits(nn::ModelBundle& model, const ExampleSet& examples, std::size_t batch_size = 128);

ConfusionMatrix confusion_from_logits(const Tensor& logits, std::span<const std::size_t> labels);

/// Empty test sets throw ArgumentError.
MetricsReport evaluate(nn::ModelBundle& model, std::span<const SyncedSample> test_set);

// ----------------------------------------------------------------------------
// Run comparison

struct RunSummary {
  std::string name;    // unique run label
  std::string method;  // runs sharing a method are averaged into one curve
  std::optional<std::size_t> shots;  // nullopt: whole training split
  MetricsReport metrics;
};

struct ComparisonRow {
  std::string name;
  std::string method;
  std::optional<std::size_t> shots;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  // Against the reference method's mean at the same shot count, in
  // percentage points; absent when the reference has no such runs.
  std::optional<double> delta_macro_f1_pp;
  std::optional<double> delta_accuracy_pp;
  std::vector<double> per_class_delta_pp;
};

struct CurvePoint {
  std::optional<std::size_t> shots;
  double mean_macro_f1 = 0.0;
  double mean_accuracy = 0.0;
  double std_macro_f1 = 0.0;  // population standard deviation
  std::size_t runs = 0;
};

struct MethodCurve {
  std::string method;
  std::vector<CurvePoint> points;  // ascending shots, "all" last
};

struct Comparison {
  std::string reference_method;
  std::vector<std::string> class_names;
  std::vector<ComparisonRow> rows;
  std::vector<MethodCurve> curves;  // in order of first appearance

  const MethodCurve& curve(const std::string& method) const;
  nlohmann::json to_json() const;
  std::string table_csv() const;
  std::string curves_csv() const;
};

/// Needs at least two runs with identical class lists (ArgumentError
/// otherwise). The reference defaults to the first run's method.
Comparison compare_runs(std::span<const RunSummary> runs, std::optional<std::string> reference_method = std::nullopt);

std::string shots_label(std::optional<std::size_t> shots);

}  // namespace cwhar::eval
