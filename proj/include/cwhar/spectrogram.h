#pragma once

#include <complex>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "cwhar/types.h"

namespace cwhar {

/// Time–frequency magnitude matrix: rows are frequency bins, columns are
/// time frames, row-major 32-bit values.
struct Spectrogram {
  Modality modality = Modality::csi1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  float at(std::size_t row, std::size_t col) const { return values[row * width + col]; }
  bool operator==(const Spectrogram&) const = default;
};

/// One time point seen by several synchronized receivers.
struct SyncedSample {
  std::uint64_t id = 0;
  std::size_t label = 0;  // index into kActivityNames
  std::map<Modality, Spectrogram> views;
  std::optional<int> subject;
  std::optional<int> layout;
  std::optional<int> position;

  bool has_view(Modality m) const { return views.contains(m); }
  // DataError naming the sample when the view is missing.
  const Spectrogram& view(Modality m) const;
  bool operator==(const SyncedSample&) const = default;
};

/// Per-spectrogram min-max scaling to [0, 1] in place. A constant input
/// (including all zeros) maps to all zeros.
void normalize_min_max(std::span<double> values);
std::vector<float> normalize_to_f32(std::vector<double> values);

struct StftOptions {
  std::size_t window_length = 64;
  std::size_t hop = 8;
};

/// Hann-windowed short-time DFT magnitudes, min-max normalized.
///
/// Complex input keeps all `window_length` bins in natural DFT order (bin k
/// at row k). Real input keeps the `window_length/2 + 1` non-negative bins.
/// Frame count is floor((len − window_length)/hop) + 1.
Spectrogram stft_spectrogram(std::span<const std::complex<double>> series, StftOptions options,
                             Modality modality = Modality::csi1);
Spectrogram stft_spectrogram(std::span<const double> series, StftOptions options,
                             Modality modality = Modality::csi1);

}  // namespace cwhar
