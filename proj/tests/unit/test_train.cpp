#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "cwhar/errors.h"
#include "cwhar/synthetic.h"
#include "cwhar/train.h"
#include "helpers.h"

using namespace cwhar;
using namespace cwhar::train;

namespace {

nn::EncoderConfig tiny_encoder() {
  nn::EncoderConfig e;
  e.input_height = 12;
  e.input_width = 16;
  e.upsample = 1;
  e.widths = {4, 6, 8};
  return e;
}

nn::ModelBundle two_view_bundle(std::uint64_t seed) {
  nn::BundleConfig bc;
  bc.views = {{Modality::csi1, tiny_encoder()}, {Modality::csi2, tiny_encoder()}};
  bc.projection_dim = 16;
  bc.hidden_units = 16;
  return nn::ModelBundle::create(bc, seed);
}

std::vector<SyncedSample> desk(std::size_t per_class, double sigma = 0.15, std::uint64_t seed = 0) {
  SyntheticOptions o = synthetic_profile("desk");
  o.per_class = per_class;
  o.noise_sigma = sigma;
  o.seed = seed;
  return generate_synthetic_dataset(o);
}

TrainConfig quick(std::size_t epochs, std::uint64_t seed = 0) {
  TrainConfig c;
  c.epochs = epochs;
  c.seed = seed;
  return c;
}

std::vector<std::size_t> predictions(const Tensor& logits) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.dim(1); ++c)
      if (logits.at({i, c}) > logits.at({i, best})) best = c;
    out.push_back(best);
  }
  return out;
}

}  // namespace

TEST_CASE("sgd step and zero gradients") {
  std::vector<double> p{1.0};
  const std::vector<double> g{2.0};
  MomentState st;
  optimizer_step(p, g, st, 1, {OptimizerKind::sgd, 0.1});
  CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-15));

  for (OptimizerKind k : {OptimizerKind::sgd, OptimizerKind::adam_like}) {
    std::vector<double> q{0.5, -3.0, 7.25};
    const auto before = q;
    MomentState s;
    const std::vector<double> zero(3, 0.0);
    for (std::uint64_t t = 1; t <= 5; ++t) optimizer_step(q, zero, s, t, {k, 0.1});
    CHECK(q == before);
  }
}

TEST_CASE("adam_like first step moves every parameter by about the learning rate") {
  // m̂ = g = 1, v̂ = g² = 1, so the step is lr·1/(1 + ε).
  std::vector<double> p(4, 2.0);
  const std::vector<double> g(4, 1.0);
  MomentState st;
  optimizer_step(p, g, st, 1, {OptimizerKind::adam_like, 1e-3});
  for (double v : p) CHECK(v == doctest::Approx(2.0 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-14));
  CHECK(st.m[0] == doctest::Approx(0.1));
  CHECK(st.v[0] == doctest::Approx(0.001));

  // A second identical gradient keeps the corrected step at lr.
  optimizer_step(p, g, st, 2, {OptimizerKind::adam_like, 1e-3});
  CHECK(p[0] == doctest::Approx(2.0 - 2e-3).epsilon(1e-10));
}

TEST_CASE("optimizer size mismatch is a shape error") {
  std::vector<double> p(3, 0.0);
  const std::vector<double> g(2, 1.0);
  MomentState st;
  CHECK_THROWS_AS(optimizer_step(p, g, st, 1, {}), ShapeError);
  MomentState bad{std::vector<double>(5), std::vector<double>(5)};
  const std::vector<double> g3(3, 1.0);
  CHECK_THROWS_AS(optimizer_step(p, g3, bad, 1, {}), ShapeError);
}

TEST_CASE("optimizer names round trip") {
  CHECK(parse_optimizer(optimizer_name(OptimizerKind::sgd)) == OptimizerKind::sgd);
  CHECK(parse_optimizer("adam_like") == OptimizerKind::adam_like);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), ArgumentError);
}

TEST_CASE("few_shot_sample: exact class balance, input order, seeded") {
  const auto data = desk(12);
  for (std::size_t k : {1, 5, 10}) {
    const auto sub = few_shot_sample(std::span<const SyncedSample>(data), k, 3);
    CHECK(sub.size() == 7 * k);
    std::map<std::size_t, std::size_t> counts;
    for (const auto& s : sub) ++counts[s.label];
    for (std::size_t c = 0; c < 7; ++c) CHECK(counts[c] == k);
    for (std::size_t i = 1; i < sub.size(); ++i) CHECK(sub[i - 1].id < sub[i].id);
    CHECK(few_shot_sample(std::span<const SyncedSample>(data), k, 3) == sub);
  }
  CHECK(few_shot_sample(std::span<const SyncedSample>(data), 5, 3) != few_shot_sample(std::span<const SyncedSample>(data), 5, 4));
  CHECK_THROWS_AS(few_shot_sample(std::span<const SyncedSample>(data), 13, 0), ArgumentError);
  CHECK_THROWS_AS(few_shot_sample(std::span<const SyncedSample>(data), 0, 0), ArgumentError);
}

TEST_CASE("train config and run record serialize losslessly") {
  TrainConfig c = quick(7, 9);
  c.shots = 5;
  c.optimizer = OptimizerKind::sgd;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.shots == std::optional<std::size_t>(5));

  RunRecord r;
  r.kind = "finetune";
  r.loss = {2.0, 1.5};
  r.val_macro_f1 = {std::nullopt, 0.25};
  r.seed = 4;
  const RunRecord rb = RunRecord::from_json(r.to_json());
  CHECK(rb.loss == r.loss);
  CHECK(rb.val_macro_f1 == r.val_macro_f1);
  const std::string csv = r.loss_csv();
  CHECK(csv.starts_with("epoch,loss,val_macro_f1\n"));
  CHECK(csv.find("\n1,2,\n") != std::string::npos);
  CHECK_THROWS_AS(RunRecord::from_json(nlohmann::json::array()), FormatError);
}

TEST_CASE("train_classifier separates linearly separable embeddings") {
  nn::ModelBundle b = two_view_bundle(1);
  const std::size_t d = b.config().classifier_input_dim();
  REQUIRE(d >= 7);
  Rng rng(2);
  std::vector<double> f;
  std::vector<std::size_t> y;
  for (std::size_t i = 0; i < 70; ++i) {
    const std::size_t c = i % 7;
    for (std::size_t j = 0; j < d; ++j) f.push_back((j == c ? 3.0 : 0.0) + 0.1 * rng.normal());
    y.push_back(c);
  }
  const Tensor features = Tensor::from({70, d}, f);
  const RunRecord rec = train_classifier(features, y, b, quick(200));
  CHECK(rec.loss.size() == 200);
  CHECK(rec.loss.back() < rec.loss.front());
  CHECK(predictions(b.classify(features)) == y);

  nn::ModelBundle still = two_view_bundle(1);
  const auto before = nn::deep_copy(still.parameters("classifier"));
  TrainConfig zero = quick(3);
  zero.learning_rate = 0.0;
  train_classifier(features, y, still, zero);
  CHECK(nn::bitwise_equal(before, still.parameters("classifier")));
}

TEST_CASE("finetune requires frozen encoders and leaves them bit-identical") {
  const auto data = desk(3);
  nn::ModelBundle b = two_view_bundle(5);
  CHECK_THROWS_AS(finetune(std::span<const SyncedSample>(data), b, quick(1)), ArgumentError);

  // Move the BN running statistics off their initial values first.
  pretrain(std::span<const SyncedSample>(data), b, {Modality::csi1, Modality::csi2}, quick(1));
  b.freeze("encoders");
  const auto params = nn::deep_copy(b.parameters("encoders"));
  const auto buffers = nn::deep_copy(b.buffers("encoders"));
  const auto heads = nn::deep_copy(b.parameters("heads"));
  const auto cls = nn::deep_copy(b.parameters("classifier"));
  const RunRecord rec = finetune(std::span<const SyncedSample>(data), b, quick(5), std::span<const SyncedSample>(data));
  CHECK(nn::bitwise_equal(params, b.parameters("encoders")));
  CHECK(nn::bitwise_equal(buffers, b.buffers("encoders")));
  CHECK(nn::bitwise_equal(heads, b.parameters("heads")));
  CHECK_FALSE(nn::bitwise_equal(cls, b.parameters("classifier")));
  CHECK(rec.details.at("frozen_bitwise_identical") == true);
  CHECK(rec.details.at("encoder_checksum_before") == rec.details.at("encoder_checksum_after"));
  CHECK(rec.loss.size() == 5);
  for (const auto& f : rec.val_macro_f1) CHECK(f.has_value());

  const std::vector<SyncedSample> six_classes(data.begin(), data.begin() + 18);
  CHECK_THROWS_AS(finetune(std::span<const SyncedSample>(six_classes), b, quick(1)), ArgumentError);
}

TEST_CASE("pretrain with zero learning rate changes no parameter") {
  const auto data = desk(2);
  nn::ModelBundle b = two_view_bundle(6);
  const auto before = nn::deep_copy(b.parameters());
  TrainConfig c = quick(1);
  c.learning_rate = 0.0;
  const RunRecord rec = pretrain(std::span<const SyncedSample>(data), b, {Modality::csi1, Modality::csi2}, c);
  CHECK(rec.loss.size() == 1);
  CHECK(rec.kind == "pretrain");
  CHECK(nn::bitwise_equal(before, b.parameters()));

  c.batch_size = 1;
  CHECK_THROWS_AS(pretrain(std::span<const SyncedSample>(data), b, {Modality::csi1, Modality::csi2}, c), ArgumentError);
  c = quick(0);
  CHECK_THROWS_AS(pretrain(std::span<const SyncedSample>(data), b, {Modality::csi1, Modality::csi2}, c), ArgumentError);
}

TEST_CASE("pretrain only updates the encoders and heads of the chosen views") {
  const auto data = desk(2);
  nn::ModelBundle b = two_view_bundle(7);
  const auto cls = nn::deep_copy(b.parameters("classifier"));
  const auto enc = nn::deep_copy(b.parameters("encoders"));
  pretrain(std::span<const SyncedSample>(data), b, {Modality::csi1, Modality::csi2}, quick(1));
  CHECK(nn::bitwise_equal(cls, b.parameters("classifier")));
  CHECK_FALSE(nn::bitwise_equal(enc, b.parameters("encoders")));
}

TEST_CASE("pretrain is bit-for-bit deterministic") {
  const auto data = desk(3);
  nn::ModelBundle a = two_view_bundle(8), b = two_view_bundle(8);
  const RunRecord ra = pretrain(std::span<const SyncedSample>(data), a, {Modality::csi1, Modality::csi2}, quick(3, 2));
  const RunRecord rb = pretrain(std::span<const SyncedSample>(data), b, {Modality::csi1, Modality::csi2}, quick(3, 2));
  CHECK(ra.loss == rb.loss);
  CHECK(nn::bitwise_equal(a.parameters(), b.parameters()));
  CHECK(nn::bitwise_equal(a.buffers(), b.buffers()));
}

TEST_CASE("pretraining loss falls over 30 epochs") {
  // 50 per class, rho 0.9, sigma 0.1; averaged over three seeds.
  const auto data = desk(50, 0.1);
  double first = 0.0, last = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    nn::ModelBundle b = two_view_bundle(seed);
    const RunRecord r = pretrain(std::span<const SyncedSample>(data), b, {Modality::csi1, Modality::csi2}, quick(30, seed));
    REQUIRE(r.loss.size() == 30);
    first += r.loss.front() / 3.0;
    last += r.loss.back() / 3.0;
  }
  MESSAGE("epoch 1 " << first << ", epoch 30 " << last);
  CHECK(last < first);
}

TEST_CASE("supervised baseline: one encoder, deterministic, all classes required") {
  const auto data = desk(3);
  const auto a = train_supervised_baseline(std::span<const SyncedSample>(data), tiny_encoder(), BaselineViews::single, quick(3, 1));
  const auto b = train_supervised_baseline(std::span<const SyncedSample>(data), tiny_encoder(), BaselineViews::single, quick(3, 1));
  CHECK(a.model.num_views() == 1);
  CHECK(a.record.kind == "baseline");
  CHECK(a.record.loss == b.record.loss);
  CHECK(nn::bitwise_equal(a.model.parameters(), b.model.parameters()));
  CHECK(a.record.details.at("examples") == 21);

  const auto j = train_supervised_baseline(std::span<const SyncedSample>(data), tiny_encoder(), BaselineViews::joint, quick(1, 1));
  CHECK(j.model.num_views() == 1);
  CHECK(j.model.is_joint());
  CHECK(j.record.details.at("examples") == 42);

  const std::vector<SyncedSample> partial(data.begin(), data.begin() + 9);
  CHECK_THROWS_AS(train_supervised_baseline(std::span<const SyncedSample>(partial), tiny_encoder(), BaselineViews::single, quick(1)),
                  ArgumentError);
  CHECK(parse_baseline_views("joint") == BaselineViews::joint);
  CHECK_THROWS_AS(parse_baseline_views("pwr"), ArgumentError);
}
