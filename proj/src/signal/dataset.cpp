#include "cwhar/dataset.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>

#include "cwhar/container.h"
#include "cwhar/errors.h"
#include "cwhar/rng.h"

namespace cwhar {

namespace fs = std::filesystem;

std::array<std::size_t, kNumClasses> class_counts(std::span<const SyncedSample> samples) {
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& s : samples) {
    if (s.label >= kNumClasses) throw DataError("sample " + std::to_string(s.id) + " has invalid label");
    ++counts[s.label];
  }
  return counts;
}

Split split_dataset(std::span<const SyncedSample> samples, double train_fraction, bool stratified, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ArgumentError("train_fraction must lie strictly between 0 and 1");
  }
  const std::size_t n = samples.size();
  const auto total_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
  std::vector<bool> in_train(n, false);

  if (!stratified) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng::stream(seed, {0x5B17});
    rng.shuffle(std::span(order));
    for (std::size_t i = 0; i < total_train; ++i) in_train[order[i]] = true;
  } else {
    std::array<std::vector<std::size_t>, kNumClasses> members;
    for (std::size_t i = 0; i < n; ++i) {
      if (samples[i].label >= kNumClasses) throw DataError("sample " + std::to_string(samples[i].id) + " has invalid label");
      members[samples[i].label].push_back(i);
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (members[c].size() < 2) {
        throw ArgumentError("stratified split needs at least 2 samples of class '" + std::string(kActivityNames[c]) +
                            "', found " + std::to_string(members[c].size()));
      }
    }
    // Largest-remainder apportionment of the train quota.
    std::array<std::size_t, kNumClasses> quota{};
    std::array<double, kNumClasses> remainder{};
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const double exact = static_cast<double>(members[c].size()) * static_cast<double>(total_train) / static_cast<double>(n);
      quota[c] = static_cast<std::size_t>(std::floor(exact));
      remainder[c] = exact - static_cast<double>(quota[c]);
      assigned += quota[c];
    }
    std::array<std::size_t, kNumClasses> by_remainder{};
    for (std::size_t c = 0; c < kNumClasses; ++c) by_remainder[c] = c;
    std::stable_sort(by_remainder.begin(), by_remainder.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t r = 0; assigned < total_train && r < kNumClasses; ++r) {
      const std::size_t c = by_remainder[r];
      if (quota[c] < members[c].size()) {
        ++quota[c];
        ++assigned;
      }
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      Rng rng = Rng::stream(seed, {0x5B17, c + 1});
      rng.shuffle(std::span(members[c]));
      for (std::size_t k = 0; k < quota[c]; ++k) in_train[members[c][k]] = true;
    }
  }

  Split split;
  for (std::size_t i = 0; i < n; ++i) (in_train[i] ? split.train : split.test).push_back(samples[i]);
  return split;
}

void save_dataset(std::span<const SyncedSample> samples, const fs::path& dir, const nlohmann::json& generator) {
  BlobWriter writer(dir, "data.bin");
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& s : samples) {
    nlohmann::json views = nlohmann::json::array();
    for (const auto& [modality, spec] : s.views) {
      nlohmann::json v = writer.append(std::span<const float>(spec.values), Shape{spec.height, spec.width}).to_json();
      v["modality"] = modality_name(modality);
      views.push_back(std::move(v));
    }
    nlohmann::json entry = {{"id", s.id}, {"label", kActivityNames.at(s.label)}, {"views", views}};
    entry["subject"] = s.subject ? nlohmann::json(*s.subject) : nlohmann::json(nullptr);
    entry["layout"] = s.layout ? nlohmann::json(*s.layout) : nlohmann::json(nullptr);
    entry["position"] = s.position ? nlohmann::json(*s.position) : nlohmann::json(nullptr);
    entries.push_back(std::move(entry));
  }
  writer.close();

  nlohmann::json counts = nlohmann::json::object();
  const auto cc = class_counts(samples);
  for (std::size_t c = 0; c < kNumClasses; ++c) counts[std::string(kActivityNames[c])] = cc[c];

  write_json_file(dir / kManifestName, {{"format_version", kContainerFormatVersion},
                                        {"kind", "dataset"},
                                        {"generator", generator},
                                        {"class_counts", counts},
                                        {"samples", entries}});
}

namespace {

std::optional<int> optional_int(const nlohmann::json& entry, const char* key) {
  if (!entry.contains(key) || entry.at(key).is_null()) return std::nullopt;
  return entry.at(key).get<int>();
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / kManifestName)) throw FormatError("no dataset manifest at " + (dir / kManifestName).string());
  const nlohmann::json manifest = read_json_file(dir / kManifestName);
  Dataset ds;
  std::string context = dir.string();
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kContainerFormatVersion) {
      throw FormatError("dataset format_version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kContainerFormatVersion) + ")");
    }
    if (manifest.value("kind", "dataset") != "dataset") throw FormatError(dir.string() + " is not a dataset");
    ds.generator = manifest.value("generator", nlohmann::json(nullptr));
    BlobReader reader(dir);
    std::set<std::uint64_t> seen;
    for (const auto& entry : manifest.at("samples")) {
      SyncedSample s;
      s.id = entry.at("id").get<std::uint64_t>();
      context = "sample " + std::to_string(s.id);
      if (!seen.insert(s.id).second) throw FormatError(context + ": duplicate id");
      const auto label = activity_index(entry.at("label").get<std::string>());
      if (!label) throw FormatError(context + ": unknown label '" + entry.at("label").get<std::string>() + "'");
      s.label = *label;
      s.subject = optional_int(entry, "subject");
      s.layout = optional_int(entry, "layout");
      s.position = optional_int(entry, "position");
      for (const auto& v : entry.at("views")) {
        const Modality m = parse_modality(v.at("modality").get<std::string>());
        const BlobRef ref = BlobRef::from_json(v);
        if (ref.shape.size() != 2) throw FormatError(context + ": spectrogram shape must have two extents");
        const std::string view_context = context + " view " + std::string(modality_name(m));
        s.views[m] = Spectrogram{m, ref.shape[0], ref.shape[1], reader.read_f32(ref, view_context)};
      }
      ds.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(context + ": malformed manifest: " + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(context + ": " + e.what());
  }
  return ds;
}

std::uint64_t dataset_fingerprint(std::span<const SyncedSample> samples) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xFFU;
      h *= 0x100000001B3ULL;
    }
  };
  for (const auto& s : samples) {
    feed(s.id);
    feed(s.label);
    for (const auto& [m, spec] : s.views) {
      feed(static_cast<std::uint64_t>(m));
      feed(spec.height);
      feed(spec.width);
      for (float v : spec.values) feed(std::bit_cast<std::uint32_t>(v));
    }
  }
  return h;
}

Tensor stack_view(std::span<const SyncedSample* const> samples, Modality modality) {
  if (samples.empty()) throw ShapeError("stack_view: empty batch");
  const Spectrogram& first = samples[0]->view(modality);
  const std::size_t h = first.height, w = first.width;
  std::vector<double> values;
  values.reserve(samples.size() * h * w);
  for (const SyncedSample* s : samples) {
    const Spectrogram& spec = s->view(modality);
    if (spec.height != h || spec.width != w) {
      throw ShapeError("sample " + std::to_string(s->id) + " " + std::string(modality_name(modality)) + " view is " +
                       std::to_string(spec.height) + "x" + std::to_string(spec.width) + ", batch expects " +
                       std::to_string(h) + "x" + std::to_string(w));
    }
    values.insert(values.end(), spec.values.begin(), spec.values.end());
  }
  return Tensor::from({samples.size(), h, w}, std::move(values));
}

Tensor stack_view(std::span<const SyncedSample> samples, Modality modality) {
  std::vector<const SyncedSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return stack_view(std::span<const SyncedSample* const>(ptrs), modality);
}

}  // namespace cwhar
