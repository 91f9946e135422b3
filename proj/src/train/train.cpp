#include "cwhar/train.h"

#include <chrono>
#include <cmath>
#include <sstream>

#include "cwhar/dataset.h"
#include "cwhar/errors.h"
#include "cwhar/ops.h"
#include "cwhar/rng.h"

namespace cwhar::train {

namespace {

constexpr std::uint64_t kPretrainStream = 0x5054;
constexpr std::uint64_t kClassifierStream = 0x4354;
constexpr std::uint64_t kBaselineStream = 0x4254;
constexpr std::uint64_t kFewShotStream = 0x4653;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Re-throws library errors with a location prefix, keeping their type.
template <typename F>
auto with_context(const std::string& where, F&& body) {
  try {
    return body();
  } catch (const NumericError& e) {
    throw NumericError(where + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(where + ": " + e.what());
  }
}

std::string epoch_batch(std::size_t epoch, std::size_t batch) {
  return "epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(batch + 1);
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::uint64_t tag, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::stream(seed, {tag, epoch});
  rng.shuffle(std::span(order));
  return order;
}

void check_common(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ArgumentError("epochs must be at least 1");
  if (cfg.batch_size < 1) throw ArgumentError("batch_size must be at least 1");
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ArgumentError("learning_rate must be finite and non-negative");
  }
}

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << v;
  return out.str();
}

std::vector<std::uint64_t> sample_ids(std::span<const SyncedSample> samples) {
  std::vector<std::uint64_t> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.id);
  return ids;
}

std::vector<std::size_t> labels_of(std::span<const SyncedSample> samples) {
  std::vector<std::size_t> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  return labels;
}

// Frozen-encoder features for a set of samples, computed in eval mode.
Tensor fused_features(nn::ModelBundle& bundle, const eval::ExampleSet& ex, std::size_t chunk = 128) {
  NoGradGuard no_grad;
  std::vector<Tensor> parts;
  for (std::size_t start = 0; start < ex.size(); start += chunk) {
    const std::size_t stop = std::min(ex.size(), start + chunk);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    std::vector<Tensor> embeddings;
    for (std::size_t v = 0; v < ex.inputs.size(); ++v) {
      embeddings.push_back(bundle.embed(v, eval::gather_rows(ex.inputs[v], idx), BatchNormMode::eval));
    }
    parts.push_back(bundle.fuse(embeddings).detach());
  }
  return parts.size() == 1 ? parts[0] : concat_rows(parts);
}

std::vector<NamedTensor> trainable(const nn::ModelBundle& bundle, std::string_view selector) {
  std::vector<NamedTensor> out;
  for (auto& p : bundle.parameters(selector)) {
    if (p.tensor.requires_grad()) out.push_back(p);
  }
  return out;
}

}  // namespace

// ----------------------------------------------------------------------------

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"optimizer", optimizer_name(optimizer)},
          {"adam_betas", {0.9, 0.999}},
          {"adam_epsilon", 1e-8},
          {"temperature", temperature},
          {"seed", seed},
          {"shots", shots ? nlohmann::json(*shots) : nlohmann::json("all")}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  try {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    c.temperature = j.value("temperature", c.temperature);
    c.seed = j.value("seed", c.seed);
    if (j.contains("shots") && !j.at("shots").is_string() && !j.at("shots").is_null()) {
      c.shots = j.at("shots").get<std::size_t>();
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed train config: ") + e.what());
  }
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json f1 = nlohmann::json::array();
  for (const auto& v : val_macro_f1) f1.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  return {{"kind", kind},
          {"seed", seed},
          {"epochs", loss.size()},
          {"loss", loss},
          {"val_macro_f1", f1},
          {"val_split", "held-out 20% test split"},
          {"wall_clock_seconds", wall_clock_seconds},
          {"config", config},
          {"details", details}};
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  try {
    RunRecord r;
    r.kind = j.at("kind").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.loss = j.at("loss").get<std::vector<double>>();
    for (const auto& v : j.at("val_macro_f1")) {
      r.val_macro_f1.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    }
    r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    r.config = j.value("config", nlohmann::json::object());
    r.details = j.value("details", nlohmann::json::object());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed run record: ") + e.what());
  }
}

std::string RunRecord::loss_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss,val_macro_f1\n";
  for (std::size_t e = 0; e < loss.size(); ++e) {
    out << (e + 1) << ',' << loss[e] << ',';
    if (e < val_macro_f1.size() && val_macro_f1[e]) out << *val_macro_f1[e];
    out << '\n';
  }
  return out.str();
}

void require_all_classes(std::span<const std::size_t> labels, std::string_view what) {
  if (labels.empty()) throw ArgumentError(std::string(what) + " is empty");
  std::array<std::size_t, kNumClasses> counts{};
  for (std::size_t l : labels) {
    if (l >= kNumClasses) throw DataError(std::string(what) + " holds an invalid label");
    ++counts[l];
  }
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0) {
      throw ArgumentError(std::string(what) + " has no samples of class '" + std::string(kActivityNames[c]) + "'");
    }
  }
}

// ----------------------------------------------------------------------------

RunRecord pretrain(std::span<const SyncedSample> train_set, nn::ModelBundle& bundle, contrastive::ViewPair views,
                   const TrainConfig& cfg, std::span<const SyncedSample> validation) {
  check_common(cfg);
  if (cfg.batch_size < 2) throw ArgumentError("pretraining needs batch_size >= 2");
  if (train_set.size() < 2) throw ArgumentError("pretraining needs at least 2 samples");
  for (const auto& s : train_set) {
    s.view(views.first);
    s.view(views.second);
  }
  const std::size_t v1 = bundle.view_index(views.first);
  const std::size_t v2 = bundle.view_index(views.second);

  std::vector<NamedTensor> params;
  for (std::size_t v : {v1, v2}) {
    const std::string idx = std::to_string(v + 1);
    for (auto& p : trainable(bundle, "encoder" + idx)) params.push_back(p);
    for (auto& p : trainable(bundle, "head" + idx)) params.push_back(p);
  }
  Optimizer opt(params, cfg.optimizer_config());
  const contrastive::LossConfig loss_cfg{cfg.temperature};

  RunRecord rec;
  rec.kind = "pretrain";
  rec.seed = cfg.seed;
  rec.config = {{"train", cfg.to_json()},
                {"bundle", bundle.config().to_json()},
                {"views", {modality_name(views.first), modality_name(views.second)}},
                {"train_ids", sample_ids(train_set)}};
  nlohmann::json gaps = nlohmann::json::array();
  const auto start = Clock::now();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(train_set.size(), cfg.seed, kPretrainStream, epoch);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 + 1 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      if (b1 - b0 < 2) break;
      std::vector<const SyncedSample*> batch;
      for (std::size_t i = b0; i < b1; ++i) batch.push_back(&train_set[order[i]]);
      const double loss = with_context(epoch_batch(epoch, batches), [&] {
        opt.zero_grad();
        const auto pb = contrastive::assemble_projection_batch(batch, bundle, views, BatchNormMode::train);
        const auto result = contrastive::nt_xent(pb, loss_cfg);
        backward(result.loss);
        opt.step();
        return result.loss.item();
      });
      total += loss;
      ++batches;
    }
    rec.loss.push_back(total / static_cast<double>(batches));
    rec.val_macro_f1.push_back(std::nullopt);
    if (validation.size() >= 2) {
      NoGradGuard no_grad;
      const auto pb = contrastive::assemble_projection_batch(validation, bundle, views, BatchNormMode::eval);
      gaps.push_back(contrastive::alignment(pb).gap());
    }
  }
  rec.wall_clock_seconds = seconds_since(start);
  if (!gaps.empty()) rec.details["val_alignment_gap"] = gaps;
  return rec;
}

RunRecord train_classifier(const Tensor& features, std::span<const std::size_t> labels, nn::ModelBundle& bundle,
                           const TrainConfig& cfg, const Tensor* val_features, std::span<const std::size_t> val_labels) {
  check_common(cfg);
  if (features.rank() != 2 || features.dim(0) != labels.size()) {
    throw ShapeError("features " + shape_str(features.shape()) + " do not match " + std::to_string(labels.size()) +
                     " labels");
  }
  if (bundle.classifier_frozen()) throw ArgumentError("classifier is frozen");
  Optimizer opt(trainable(bundle, "classifier"), cfg.optimizer_config());

  RunRecord rec;
  rec.kind = "classifier";
  rec.seed = cfg.seed;
  const auto start = Clock::now();
  const std::size_t n = labels.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(n, cfg.seed, kClassifierStream, epoch);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(n, b0 + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                   order.begin() + static_cast<std::ptrdiff_t>(b1));
      std::vector<std::size_t> y;
      for (std::size_t i : idx) y.push_back(labels[i]);
      total += with_context(epoch_batch(epoch, batches), [&] {
        opt.zero_grad();
        const Tensor loss = cross_entropy(bundle.classify(eval::gather_rows(features, idx)), y);
        backward(loss);
        opt.step();
        return loss.item();
      });
      ++batches;
    }
    rec.loss.push_back(total / static_cast<double>(batches));
    if (val_features && !val_labels.empty()) {
      NoGradGuard no_grad;
      const auto cm = eval::confusion_from_logits(bundle.classify(*val_features), val_labels);
      rec.val_macro_f1.push_back(eval::macro_f1(cm));
    } else {
      rec.val_macro_f1.push_back(std::nullopt);
    }
  }
  rec.wall_clock_seconds = seconds_since(start);
  return rec;
}

RunRecord finetune(std::span<const SyncedSample> labelled, nn::ModelBundle& bundle, const TrainConfig& cfg,
                   std::span<const SyncedSample> validation) {
  check_common(cfg);
  for (std::size_t v = 0; v < bundle.num_views(); ++v) {
    if (!bundle.encoder_frozen(v)) {
      throw ArgumentError("fine-tuning requires frozen encoders (encoder" + std::to_string(v + 1) + " is trainable)");
    }
  }
  const auto labels = labels_of(labelled);
  require_all_classes(labels, "labelled subset");

  const auto frozen_before = nn::deep_copy(bundle.parameters("encoders"));
  const auto buffers_before = nn::deep_copy(bundle.buffers("encoders"));
  const eval::ExampleSet ex = eval::classification_examples(bundle, labelled);
  const Tensor features = fused_features(bundle, ex);
  Tensor val_features;
  std::vector<std::size_t> val_labels;
  if (!validation.empty()) {
    const eval::ExampleSet vex = eval::classification_examples(bundle, validation);
    val_features = fused_features(bundle, vex);
    val_labels = vex.labels;
  }

  RunRecord rec = train_classifier(features, ex.labels, bundle, cfg, validation.empty() ? nullptr : &val_features,
                                   val_labels);
  rec.kind = "finetune";
  rec.config = {{"train", cfg.to_json()}, {"bundle", bundle.config().to_json()}};
  rec.details["subset_ids"] = sample_ids(labelled);
  rec.details["subset_size"] = labelled.size();
  rec.details["encoder_checksum_before"] = hex64(nn::tensor_checksum(frozen_before));
  rec.details["encoder_checksum_after"] = hex64(nn::tensor_checksum(bundle.parameters("encoders")));
  rec.details["frozen_bitwise_identical"] =
      nn::bitwise_equal(frozen_before, bundle.parameters("encoders")) && nn::bitwise_equal(buffers_before, bundle.buffers("encoders"));
  return rec;
}

// ----------------------------------------------------------------------------

std::string_view baseline_views_name(BaselineViews v) { return v == BaselineViews::single ? "csi1" : "joint"; }

BaselineViews parse_baseline_views(std::string_view name) {
  if (name == "csi1" || name == "single") return BaselineViews::single;
  if (name == "joint") return BaselineViews::joint;
  throw ArgumentError("unknown baseline views '" + std::string(name) + "' (expected csi1 or joint)");
}

BaselineResult train_supervised_baseline(std::span<const SyncedSample> labelled, const nn::EncoderConfig& encoder,
                                         BaselineViews views, const TrainConfig& cfg,
                                         std::span<const SyncedSample> validation, std::size_t hidden_units) {
  check_common(cfg);
  require_all_classes(labels_of(labelled), "labelled set");

  nn::BundleConfig bc;
  bc.views = {{Modality::csi1, encoder}};
  bc.fusion = nn::Fusion::single;
  bc.hidden_units = hidden_units;
  if (views == BaselineViews::joint) bc.joint_inputs = {Modality::csi1, Modality::csi2};
  BaselineResult out{nn::ModelBundle::create(bc, cfg.seed), {}};
  nn::ModelBundle& model = out.model;

  const eval::ExampleSet ex = eval::classification_examples(model, labelled);
  std::optional<eval::ExampleSet> vex;
  if (!validation.empty()) vex = eval::classification_examples(model, validation);

  std::vector<NamedTensor> params = trainable(model, "encoder1");
  for (auto& p : trainable(model, "classifier")) params.push_back(p);
  Optimizer opt(params, cfg.optimizer_config());

  RunRecord& rec = out.record;
  rec.kind = "baseline";
  rec.seed = cfg.seed;
  rec.config = {{"train", cfg.to_json()}, {"bundle", bc.to_json()}, {"views", baseline_views_name(views)}};
  rec.details["subset_ids"] = sample_ids(labelled);
  rec.details["subset_size"] = labelled.size();
  rec.details["examples"] = ex.size();
  const auto start = Clock::now();
  const std::size_t n = ex.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(n, cfg.seed, kBaselineStream, epoch);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(n, b0 + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                   order.begin() + static_cast<std::ptrdiff_t>(b1));
      std::vector<std::size_t> y;
      for (std::size_t i : idx) y.push_back(ex.labels[i]);
      total += with_context(epoch_batch(epoch, batches), [&] {
        opt.zero_grad();
        const Tensor inputs[] = {eval::gather_rows(ex.inputs[0], idx)};
        const Tensor loss = cross_entropy(model.logits(inputs, BatchNormMode::train), y);
        backward(loss);
        opt.step();
        return loss.item();
      });
      ++batches;
    }
    rec.loss.push_back(total / static_cast<double>(batches));
    if (vex) {
      const auto cm = eval::confusion_from_logits(eval::predict_logits(model, *vex), vex->labels);
      rec.val_macro_f1.push_back(eval::macro_f1(cm));
    } else {
      rec.val_macro_f1.push_back(std::nullopt);
    }
  }
  rec.wall_clock_seconds = seconds_since(start);
  return out;
}

std::vector<SyncedSample> few_shot_sample(std::span<const SyncedSample> train_set, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ArgumentError("shots must be at least 1");
  std::array<std::vector<std::size_t>, kNumClasses> members;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    if (train_set[i].label >= kNumClasses) throw DataError("sample " + std::to_string(train_set[i].id) + " has invalid label");
    members[train_set[i].label].push_back(i);
  }
  std::vector<bool> chosen(train_set.size(), false);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (members[c].size() < k) {
      throw ArgumentError(std::to_string(k) + "-shot subset needs " + std::to_string(k) + " samples of class '" +
                          std::string(kActivityNames[c]) + "', training split has " + std::to_string(members[c].size()));
    }
    Rng rng = Rng::stream(seed, {kFewShotStream, c});
    rng.shuffle(std::span(members[c]));
    for (std::size_t j = 0; j < k; ++j) chosen[members[c][j]] = true;
  }
  std::vector<SyncedSample> out;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    if (chosen[i]) out.push_back(train_set[i]);
  }
  return out;
}

}  // namespace cwhar::train
