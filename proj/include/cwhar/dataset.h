#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "cwhar/spectrogram.h"
#include "cwhar/tensor.h"

namespace cwhar {

struct Dataset {
  std::vector<SyncedSample> samples;
  // Generator parameters when the data is synthetic, null otherwise.
  nlohmann::json generator;
};

std::array<std::size_t, kNumClasses> class_counts(std::span<const SyncedSample> samples);

struct Split {
  std::vector<SyncedSample> train;
  std::vector<SyncedSample> test;
};

/// Seeded random partition. The train side gets round(n·train_fraction)
/// samples; when stratified, per-class quotas are apportioned by largest
/// remainder so every class is within one sample of its exact share.
/// Both sides keep the input order.
Split split_dataset(std::span<const SyncedSample> samples, double train_fraction = 0.8, bool stratified = true,
                    std::uint64_t seed = 0);

/// Writes manifest.json and data.bin (little-endian f32) into `dir`.
void save_dataset(std::span<const SyncedSample> samples, const std::filesystem::path& dir,
                  const nlohmann::json& generator = nullptr);
/// Throws FormatError naming the offending sample on version mismatch,
/// truncated blobs or shape/byte-length disagreement.
Dataset load_dataset(const std::filesystem::path& dir);

/// FNV-1a over ids, labels and every view's values; identifies a dataset
/// independently of where it is stored.
std::uint64_t dataset_fingerprint(std::span<const SyncedSample> samples);

/// Stacks one view of several samples into a B×H×W tensor. Missing views
/// throw DataError naming the sample; differing extents throw ShapeError.
Tensor stack_view(std::span<const SyncedSample* const> samples, Modality modality);
Tensor stack_view(std::span<const SyncedSample> samples, Modality modality);

}  // namespace cwhar
