#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "cwhar/errors.h"
#include "cwhar/metrics.h"
#include "cwhar/svg.h"
#include "cwhar/synthetic.h"
#include "helpers.h"

using namespace cwhar;
using namespace cwhar::eval;

namespace {

// Per-class F1 straight from the definitions, one class at a time.
std::vector<double> f1_oracle(const std::vector<std::vector<std::uint64_t>>& m) {
  const std::size_t k = m.size();
  std::vector<double> out;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = static_cast<double>(m[c][c]), fp = 0.0, fn = 0.0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += static_cast<double>(m[o][c]);
      fn += static_cast<double>(m[c][o]);
    }
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    out.push_back(p + r > 0 ? 2 * p * r / (p + r) : 0.0);
  }
  return out;
}

ConfusionMatrix from_counts(const std::vector<std::vector<std::uint64_t>>& m, std::vector<std::string> names = {}) {
  if (names.empty())
    for (std::size_t i = 0; i < m.size(); ++i) names.push_back("c" + std::to_string(i));
  ConfusionMatrix cm(names);
  for (std::size_t t = 0; t < m.size(); ++t)
    for (std::size_t p = 0; p < m.size(); ++p) cm.set(t, p, m[t][p]);
  return cm;
}

MetricsReport report_with(double f1_shift) {
  ConfusionMatrix cm;
  for (std::size_t c = 0; c < 7; ++c) cm.set(c, c, 4);
  cm.set(0, 1, static_cast<std::uint64_t>(f1_shift));
  return metrics_from_confusion(cm);
}

nn::ModelBundle single_view_model() {
  nn::EncoderConfig e;
  e.input_height = 12;
  e.input_width = 16;
  e.upsample = 1;
  e.widths = {4, 6, 8};
  nn::BundleConfig bc;
  bc.views = {{Modality::csi1, e}};
  bc.fusion = nn::Fusion::single;
  bc.hidden_units = 8;
  return nn::ModelBundle::create(bc, 3);
}

}  // namespace

TEST_CASE("binary hand example: F1 2/3 and 0.8, macro 0.73333") {
  const ConfusionMatrix cm = from_counts({{1, 1}, {0, 2}});
  const auto f1 = per_class_f1(cm);
  CHECK(f1[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(f1[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(macro_f1(cm) == doctest::Approx(0.73333).epsilon(1e-5));
  CHECK(accuracy(cm) == 0.75);
}

TEST_CASE("per-class F1 matches a loop oracle on 100 random matrices") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<std::uint64_t>> m(7, std::vector<std::uint64_t>(7));
    for (auto& row : m)
      for (auto& v : row) v = rng.uniform(0, 1) < 0.3 ? 0 : rng.below(20);
    m[0][0] += 1;  // never empty
    const ConfusionMatrix cm = from_counts(m);
    const auto f1 = per_class_f1(cm);
    const auto oracle = f1_oracle(m);
    for (std::size_t c = 0; c < 7; ++c) {
      CHECK(std::abs(f1[c] - oracle[c]) <= 1e-12);
      CHECK((f1[c] >= 0.0 && f1[c] <= 1.0));
    }
    CHECK(std::abs(macro_f1(cm) - std::accumulate(oracle.begin(), oracle.end(), 0.0) / 7.0) <= 1e-12);
    std::uint64_t trace = 0, total = 0;
    for (std::size_t i = 0; i < 7; ++i) {
      trace += m[i][i];
      for (auto v : m[i]) total += v;
    }
    CHECK(accuracy(cm) == static_cast<double>(trace) / static_cast<double>(total));
    CHECK(cm.total() == total);

    // Relabelling rows, columns and names together leaves macro F1 alone.
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<std::vector<std::uint64_t>> pm(7, std::vector<std::uint64_t>(7));
    for (std::size_t t = 0; t < 7; ++t)
      for (std::size_t p = 0; p < 7; ++p) pm[perm[t]][perm[p]] = m[t][p];
    CHECK(std::abs(macro_f1(from_counts(pm)) - macro_f1(cm)) <= 1e-12);
  }
}

TEST_CASE("degenerate classes score zero, never NaN") {
  ConfusionMatrix diag;
  for (std::size_t c = 0; c < 7; ++c) diag.set(c, c, 3);
  CHECK(macro_f1(diag) == 1.0);
  CHECK(accuracy(diag) == 1.0);

  // Everything predicted as class 0, only classes 0..2 present.
  ConfusionMatrix wrong;
  wrong.set(0, 0, 2);
  wrong.set(1, 0, 2);
  wrong.set(2, 0, 2);
  const auto f1 = per_class_f1(wrong);
  CHECK(f1[0] == doctest::Approx(0.5));  // P 1/3, R 1
  for (std::size_t c = 1; c < 7; ++c) CHECK(f1[c] == 0.0);
  CHECK(macro_f1(wrong) == doctest::Approx(0.5 / 7.0));
  CHECK_THROWS_AS(metrics_from_confusion(ConfusionMatrix()), ArgumentError);
}

TEST_CASE("argmax ties go to the lowest index") {
  const std::vector<double> v{0.1, 0.7, 0.7, -1.0};
  CHECK(argmax(v) == 1);
  const std::vector<double> flat(7, 0.0);
  CHECK(argmax(flat) == 0);
  const auto cm = confusion_from_logits(Tensor::zeros({3, 7}), std::vector<std::size_t>{0, 4, 6});
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(4, 0) == 1);
  CHECK(cm.at(6, 0) == 1);
}

TEST_CASE("confusion matrix JSON, CSV and merge") {
  ConfusionMatrix cm = from_counts({{1, 1}, {0, 2}}, {"walk", "sit"});
  const ConfusionMatrix back = ConfusionMatrix::from_json(cm.to_json());
  CHECK(back.class_names() == cm.class_names());
  CHECK(back.at(0, 1) == 1);
  CHECK(cm.to_csv() == "true\\predicted,walk,sit\nwalk,1,1\nsit,0,2\n");
  cm.merge(back);
  CHECK(cm.at(1, 1) == 4);
  CHECK(cm.total() == 8);
  CHECK_THROWS_AS(cm.merge(from_counts({{1, 0}, {0, 1}}, {"a", "b"})), ArgumentError);
  CHECK_THROWS_AS(cm.at(2, 0), ArgumentError);

  const MetricsReport r = metrics_from_confusion(cm);
  const MetricsReport rb = MetricsReport::from_json(r.to_json());
  CHECK(rb.macro_f1 == r.macro_f1);
  CHECK(rb.per_class_f1 == r.per_class_f1);
  CHECK(rb.n_samples == 8);
  CHECK_THROWS_AS(MetricsReport::from_json(nlohmann::json{{"accuracy", 1}}), FormatError);
}

TEST_CASE("evaluate: constant predictor oracle, determinism, empty set") {
  SyntheticOptions o = synthetic_profile("desk");
  o.per_class = 3;
  const auto data = generate_synthetic_dataset(o);
  nn::ModelBundle m = single_view_model();
  Tensor w = m.classifier().output.weight, bias = m.classifier().output.bias;  // shared handles
  std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0);
  std::fill(bias.mutable_data().begin(), bias.mutable_data().end(), 0.0);
  bias.mutable_data()[2] = 1.0;

  const MetricsReport r = evaluate(m, std::span<const SyncedSample>(data));
  CHECK(r.n_samples == 21);
  CHECK(r.accuracy == doctest::Approx(1.0 / 7.0));
  // Class 2: precision 1/7, recall 1, F1 = 0.25.
  CHECK(r.per_class_f1[2] == doctest::Approx(0.25));
  CHECK(r.macro_f1 == doctest::Approx(0.25 / 7.0));

  nn::ModelBundle fresh = single_view_model();
  const MetricsReport a = evaluate(fresh, std::span<const SyncedSample>(data));
  const MetricsReport b = evaluate(fresh, std::span<const SyncedSample>(data));
  CHECK(a.to_json() == b.to_json());
  CHECK_THROWS_AS(evaluate(fresh, std::span<const SyncedSample>()), ArgumentError);
}

TEST_CASE("compare_runs: zero deltas for identical reports, shot curves, class-set mismatch") {
  std::vector<RunSummary> runs;
  for (std::size_t shots : {1, 5, 10}) {
    for (int seed = 0; seed < 2; ++seed) {
      runs.push_back({"base-" + std::to_string(shots) + "-" + std::to_string(seed), "baseline", shots, report_with(seed)});
      runs.push_back({"con-" + std::to_string(shots) + "-" + std::to_string(seed), "contrastive", shots, report_with(0)});
    }
  }
  const Comparison cmp = compare_runs(runs, "baseline");
  CHECK(cmp.curves.size() == 2);
  CHECK(cmp.curve("contrastive").points.size() == 3);
  CHECK(cmp.curve("baseline").points[0].runs == 2);
  CHECK(cmp.curve("contrastive").points[2].shots == std::optional<std::size_t>(10));

  const double ref_f1 = (report_with(0).macro_f1 + report_with(1).macro_f1) / 2.0;
  for (const auto& row : cmp.rows) {
    REQUIRE(row.delta_macro_f1_pp.has_value());
    CHECK(*row.delta_macro_f1_pp == doctest::Approx(100.0 * (row.macro_f1 - ref_f1)).epsilon(1e-12));
    CHECK(row.per_class_delta_pp.size() == 7);
  }
  CHECK(cmp.curve("baseline").points[0].std_macro_f1 == doctest::Approx(std::abs(report_with(0).macro_f1 - report_with(1).macro_f1) / 2.0));

  const std::vector<RunSummary> same{{"a", "m", 5, report_with(0)}, {"b", "m", 5, report_with(0)}};
  for (const auto& row : compare_runs(same).rows) CHECK(*row.delta_macro_f1_pp == 0.0);

  const std::vector<RunSummary> unmatched{{"a", "m", 5, report_with(0)}, {"b", "n", 1, report_with(0)}};
  CHECK_FALSE(compare_runs(unmatched).rows[1].delta_macro_f1_pp.has_value());

  CHECK_THROWS_AS(compare_runs(std::span<const RunSummary>(same.data(), 1)), ArgumentError);
  std::vector<RunSummary> mixed = same;
  mixed[1].metrics = metrics_from_confusion(from_counts({{1, 0}, {0, 1}}));
  CHECK_THROWS_AS(compare_runs(mixed), ArgumentError);
  CHECK_THROWS_AS(compare_runs(same, "other"), ArgumentError);

  const std::string table = cmp.table_csv();
  CHECK(table.starts_with("name,method,shots,macro_f1,accuracy,delta_macro_f1_pp,delta_accuracy_pp,delta_f1_pp_"));
  CHECK(std::count(table.begin(), table.end(), '\n') == 13);
  const std::string curves = cmp.curves_csv();
  CHECK(std::count(curves.begin(), curves.end(), '\n') == 7);
}

TEST_CASE("SVG output is deterministic and well formed") {
  LineChart c;
  c.title = "F1 & shots";
  c.x_label = "shots";
  c.y_label = "macro F1";
  c.series = {{"contrastive", {1, 5, 10}, {0.7, 0.9, 0.95}}, {"baseline", {1, 5, 10}, {0.5, 0.8, 0.9}}};
  c.y_min = 0.0;
  c.y_max = 1.0;
  const std::string a = render_svg(c), b = render_svg(c);
  CHECK(a == b);
  CHECK((a.starts_with("<?xml") || a.starts_with("<svg")));
  CHECK(a.find("</svg>") != std::string::npos);
  CHECK(a.find("F1 &amp; shots") != std::string::npos);
  CHECK(a.find("F1 & shots") == std::string::npos);

  BarChart bars;
  bars.title = "per class";
  bars.bars = {{"walk", 0.5, 0.1}, {"sit", -0.2, 0.0}};
  const std::string s = render_svg(bars);
  CHECK(s == render_svg(bars));
  CHECK(s.find("walk") != std::string::npos);
}
