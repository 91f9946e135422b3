#include "cwhar/model.h"

#include <bit>
#include <cstring>

#include "cwhar/container.h"
#include "cwhar/errors.h"

namespace cwhar::nn {

namespace fs = std::filesystem;

std::string_view fusion_name(Fusion f) {
  switch (f) {
    case Fusion::concat:
      return "concat";
    case Fusion::single:
      return "single";
    case Fusion::mean:
      return "mean";
  }
  return "concat";
}

Fusion parse_fusion(std::string_view name) {
  if (name == "concat") return Fusion::concat;
  if (name == "single") return Fusion::single;
  if (name == "mean") return Fusion::mean;
  throw ArgumentError("unknown fusion '" + std::string(name) + "' (expected concat, single or mean)");
}

std::size_t BundleConfig::classifier_input_dim() const {
  if (views.empty()) throw ConfigError("bundle needs at least one view");
  switch (fusion) {
    case Fusion::single:
      return views[0].encoder.embedding_dim();
    case Fusion::mean: {
      const std::size_t d = views[0].encoder.embedding_dim();
      for (const auto& v : views) {
        if (v.encoder.embedding_dim() != d) throw ConfigError("mean fusion needs equal embedding widths");
      }
      return d;
    }
    case Fusion::concat: {
      std::size_t d = 0;
      for (const auto& v : views) d += v.encoder.embedding_dim();
      return d;
    }
  }
  return 0;
}

nlohmann::json BundleConfig::to_json() const {
  nlohmann::json jv = nlohmann::json::array();
  for (const auto& v : views) jv.push_back({{"modality", modality_name(v.modality)}, {"encoder", v.encoder.to_json()}});
  return {{"views", jv},
          {"fusion", fusion_name(fusion)},
          {"projection_dim", projection_dim},
          {"hidden_units", hidden_units},
          {"num_classes", num_classes},
          {"joint_inputs", [&] {
             nlohmann::json a = nlohmann::json::array();
             for (Modality m : joint_inputs) a.push_back(modality_name(m));
             return a;
           }()}};
}

BundleConfig BundleConfig::from_json(const nlohmann::json& j) {
  try {
    BundleConfig c;
    for (const auto& v : j.at("views")) {
      c.views.push_back({parse_modality(v.at("modality").get<std::string>()), EncoderConfig::from_json(v.at("encoder"))});
    }
    c.fusion = parse_fusion(j.at("fusion").get<std::string>());
    c.projection_dim = j.at("projection_dim").get<std::size_t>();
    c.hidden_units = j.at("hidden_units").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    if (j.contains("joint_inputs")) {
      for (const auto& m : j.at("joint_inputs")) c.joint_inputs.push_back(parse_modality(m.get<std::string>()));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed bundle config: ") + e.what());
  }
}

Tensor project(const Tensor& h, const Linear& head) { return head.forward(h); }

Tensor classify(const Tensor& features, const Classifier& classifier) {
  return classifier.output.forward(relu(classifier.hidden.forward(features)));
}

ModelBundle ModelBundle::create(BundleConfig config, std::uint64_t seed) {
  if (config.views.empty() || config.views.size() > 2) throw ConfigError("a bundle holds one or two views");
  if (!config.joint_inputs.empty() && (config.views.size() != 1 || config.fusion != Fusion::single)) {
    throw ConfigError("joint inputs need a single-view bundle with single fusion");
  }
  if (config.projection_dim == 0 || config.hidden_units == 0 || config.num_classes == 0) {
    throw ConfigError("layer widths must be positive");
  }
  ModelBundle b;
  b.config_ = std::move(config);
  for (std::size_t v = 0; v < b.config_.views.size(); ++v) {
    Rng enc_rng = Rng::stream(seed, {1, v});
    b.encoders_.emplace_back(b.config_.views[v].encoder, enc_rng);
    Rng head_rng = Rng::stream(seed, {2, v});
    b.heads_.emplace_back(b.encoders_.back().embedding_dim(), b.config_.projection_dim, head_rng);
  }
  b.encoder_frozen_.assign(b.encoders_.size(), false);
  b.head_frozen_.assign(b.heads_.size(), false);
  b.reset_classifier(seed);
  return b;
}

void ModelBundle::reset_classifier(std::uint64_t seed) {
  Rng cls_rng = Rng::stream(seed, {3});
  classifier_.hidden = Linear(config_.classifier_input_dim(), config_.hidden_units, cls_rng);
  classifier_.output = Linear(config_.hidden_units, config_.num_classes, cls_rng);
  sync_requires_grad();
}

ModelBundle ModelBundle::clone() const {
  ModelBundle b = create(config_, 0);
  auto copy = [](const std::vector<NamedTensor>& from, std::vector<NamedTensor> to) {
    for (std::size_t i = 0; i < from.size(); ++i) {
      auto src = from[i].tensor.data();
      auto dst = to[i].tensor.mutable_data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  };
  copy(parameters(), b.parameters());
  copy(buffers(), b.buffers());
  b.encoder_frozen_ = encoder_frozen_;
  b.head_frozen_ = head_frozen_;
  b.classifier_frozen_ = classifier_frozen_;
  b.sync_requires_grad();
  return b;
}

std::size_t ModelBundle::view_index(Modality m) const {
  for (std::size_t v = 0; v < config_.views.size(); ++v) {
    if (config_.views[v].modality == m) return v;
  }
  for (Modality j : config_.joint_inputs) {
    if (j == m) return 0;
  }
  throw DataError("model has no encoder for view " + std::string(modality_name(m)));
}

Tensor ModelBundle::embed(std::size_t view, const Tensor& x, BatchNormMode mode) {
  if (encoder_frozen_.at(view)) mode = BatchNormMode::eval;
  return encoders_.at(view).forward(x, mode);
}

Tensor ModelBundle::project(std::size_t view, const Tensor& h) const { return nn::project(h, heads_.at(view)); }

std::size_t ModelBundle::classifier_views() const {
  return config_.fusion == Fusion::single ? 1 : encoders_.size();
}

Tensor ModelBundle::fuse(std::span<const Tensor> embeddings) const {
  if (embeddings.size() != classifier_views()) {
    throw ShapeError("fusion expects " + std::to_string(classifier_views()) + " embeddings, got " +
                     std::to_string(embeddings.size()));
  }
  switch (config_.fusion) {
    case Fusion::single:
      return embeddings[0];
    case Fusion::concat:
      return embeddings.size() == 1 ? embeddings[0] : concat_cols(embeddings);
    case Fusion::mean: {
      Tensor acc = embeddings[0];
      for (std::size_t i = 1; i < embeddings.size(); ++i) acc = add(acc, embeddings[i]);
      return scale(acc, 1.0 / static_cast<double>(embeddings.size()));
    }
  }
  return embeddings[0];
}

Tensor ModelBundle::classify(const Tensor& features) const { return nn::classify(features, classifier_); }

Tensor ModelBundle::logits(std::span<const Tensor> view_inputs, BatchNormMode mode) {
  if (view_inputs.size() != classifier_views()) {
    throw ShapeError("classification expects " + std::to_string(classifier_views()) + " view inputs, got " +
                     std::to_string(view_inputs.size()));
  }
  std::vector<Tensor> embeddings;
  for (std::size_t v = 0; v < view_inputs.size(); ++v) embeddings.push_back(embed(v, view_inputs[v], mode));
  return classify(fuse(embeddings));
}

void ModelBundle::set_frozen(std::string_view selector, bool frozen) {
  auto check_view = [&](std::size_t v) {
    if (v >= encoders_.size()) throw ArgumentError("selector '" + std::string(selector) + "' names a missing view");
  };
  if (selector == "encoders") {
    encoder_frozen_.assign(encoders_.size(), frozen);
  } else if (selector == "encoder1" || selector == "encoder2") {
    const std::size_t v = selector.back() == '1' ? 0 : 1;
    check_view(v);
    encoder_frozen_[v] = frozen;
  } else if (selector == "heads") {
    head_frozen_.assign(heads_.size(), frozen);
  } else if (selector == "head1" || selector == "head2") {
    const std::size_t v = selector.back() == '1' ? 0 : 1;
    check_view(v);
    head_frozen_[v] = frozen;
  } else if (selector == "classifier") {
    classifier_frozen_ = frozen;
  } else if (selector == "all") {
    encoder_frozen_.assign(encoders_.size(), frozen);
    head_frozen_.assign(heads_.size(), frozen);
    classifier_frozen_ = frozen;
  } else {
    throw ArgumentError("unknown component selector '" + std::string(selector) + "'");
  }
  sync_requires_grad();
}

void ModelBundle::freeze(std::string_view selector) { set_frozen(selector, true); }

void ModelBundle::unfreeze(std::string_view selector) { set_frozen(selector, false); }

void ModelBundle::sync_requires_grad() {
  auto apply = [](std::vector<NamedTensor> params, bool frozen) {
    for (auto& p : params) p.tensor.set_requires_grad(!frozen);
  };
  for (std::size_t v = 0; v < encoders_.size(); ++v) {
    apply(parameters("encoder" + std::to_string(v + 1)), encoder_frozen_[v]);
    apply(parameters("head" + std::to_string(v + 1)), head_frozen_[v]);
  }
  apply(parameters("classifier"), classifier_frozen_);
}

std::vector<NamedTensor> ModelBundle::parameters(std::string_view selector) const {
  std::vector<NamedTensor> out;
  for (std::size_t v = 0; v < encoders_.size(); ++v) {
    const std::string idx = std::to_string(v + 1);
    const bool all = selector == "all";
    if (all || selector == "encoders" || selector == "encoder" + idx) encoders_[v].append_params(out, "encoder" + idx);
  }
  for (std::size_t v = 0; v < heads_.size(); ++v) {
    const std::string idx = std::to_string(v + 1);
    if (selector == "all" || selector == "heads" || selector == "head" + idx) {
      append_params(out, "head" + idx, heads_[v]);
    }
  }
  if (selector == "all" || selector == "classifier") {
    append_params(out, "classifier.hidden", classifier_.hidden);
    append_params(out, "classifier.output", classifier_.output);
  }
  return out;
}

std::vector<NamedTensor> ModelBundle::parameters() const { return parameters("all"); }

std::vector<NamedTensor> ModelBundle::trainable_parameters() const {
  std::vector<NamedTensor> out;
  for (auto& p : parameters()) {
    if (p.tensor.requires_grad()) out.push_back(p);
  }
  return out;
}

std::vector<NamedTensor> ModelBundle::buffers(std::string_view selector) const {
  std::vector<NamedTensor> out;
  for (std::size_t v = 0; v < encoders_.size(); ++v) {
    const std::string idx = std::to_string(v + 1);
    if (selector == "all" || selector == "encoders" || selector == "encoder" + idx) {
      encoders_[v].append_buffers(out, "encoder" + idx);
    }
  }
  return out;
}

std::vector<NamedTensor> ModelBundle::buffers() const { return buffers("all"); }

std::uint64_t tensor_checksum(std::span<const NamedTensor> tensors) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& t : tensors) {
    for (double v : t.tensor.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFFU;
        h *= 0x100000001B3ULL;
      }
    }
  }
  return h;
}

bool bitwise_equal(std::span<const NamedTensor> a, std::span<const NamedTensor> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].tensor.shape() != b[i].tensor.shape()) return false;
    const auto x = a[i].tensor.data();
    const auto y = b[i].tensor.data();
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

std::vector<NamedTensor> deep_copy(std::span<const NamedTensor> tensors) {
  std::vector<NamedTensor> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.push_back({t.name, t.tensor.detach()});
  return out;
}

void save_checkpoint(const ModelBundle& bundle, const fs::path& dir, const nlohmann::json& extra) {
  BlobWriter writer(dir, "params.bin");
  nlohmann::json tensors = nlohmann::json::array();
  auto emit = [&](const std::vector<NamedTensor>& list, const char* kind) {
    for (const auto& t : list) {
      nlohmann::json entry = writer.append(t.tensor.data(), t.tensor.shape()).to_json();
      entry["name"] = t.name;
      entry["kind"] = kind;
      tensors.push_back(std::move(entry));
    }
  };
  emit(bundle.parameters(), "parameter");
  emit(bundle.buffers(), "buffer");
  writer.close();

  nlohmann::json frozen = nlohmann::json::object();
  for (std::size_t v = 0; v < bundle.num_views(); ++v) {
    frozen["encoder" + std::to_string(v + 1)] = bundle.encoder_frozen(v);
    frozen["head" + std::to_string(v + 1)] = bundle.head_frozen(v);
  }
  frozen["classifier"] = bundle.classifier_frozen();

  nlohmann::json manifest = {{"format_version", kContainerFormatVersion},
                             {"kind", "checkpoint"},
                             {"config", bundle.config().to_json()},
                             {"frozen", frozen},
                             {"metadata", extra},
                             {"tensors", tensors}};
  write_json_file(dir / kManifestName, manifest);
}

ModelBundle load_checkpoint(const fs::path& dir, nlohmann::json* extra) {
  const nlohmann::json manifest = read_json_file(dir / kManifestName);
  try {
    if (manifest.at("format_version").get<int>() != kContainerFormatVersion) {
      throw FormatError("checkpoint format_version " + manifest.at("format_version").dump() + " is not supported");
    }
    if (manifest.at("kind").get<std::string>() != "checkpoint") throw FormatError(dir.string() + " is not a checkpoint");
    ModelBundle bundle = ModelBundle::create(BundleConfig::from_json(manifest.at("config")), 0);

    std::vector<NamedTensor> targets = bundle.parameters();
    const auto bufs = bundle.buffers();
    targets.insert(targets.end(), bufs.begin(), bufs.end());
    const auto& entries = manifest.at("tensors");
    if (entries.size() != targets.size()) {
      throw FormatError("checkpoint holds " + std::to_string(entries.size()) + " tensors, model needs " +
                        std::to_string(targets.size()));
    }
    BlobReader reader(dir);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto& entry = entries[i];
      const std::string name = entry.at("name").get<std::string>();
      if (name != targets[i].name) throw FormatError("checkpoint tensor " + name + " found where " + targets[i].name + " expected");
      const BlobRef ref = BlobRef::from_json(entry);
      if (ref.shape != targets[i].tensor.shape()) {
        throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(ref.shape) + ", model needs " +
                          shape_str(targets[i].tensor.shape()));
      }
      const auto values = reader.read_as_double(ref, "tensor " + name);
      auto dst = targets[i].tensor.mutable_data();
      std::copy(values.begin(), values.end(), dst.begin());
    }

    const auto& frozen = manifest.at("frozen");
    for (std::size_t v = 0; v < bundle.num_views(); ++v) {
      if (frozen.value("encoder" + std::to_string(v + 1), false)) bundle.freeze("encoder" + std::to_string(v + 1));
      if (frozen.value("head" + std::to_string(v + 1), false)) bundle.freeze("head" + std::to_string(v + 1));
    }
    if (frozen.value("classifier", false)) bundle.freeze("classifier");
    if (extra) *extra = manifest.value("metadata", nlohmann::json::object());
    return bundle;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + ": malformed checkpoint manifest: " + e.what());
  }
}

}  // namespace cwhar::nn
