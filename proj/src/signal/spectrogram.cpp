#include "cwhar/spectrogram.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "cwhar/errors.h"

namespace cwhar {

const Spectrogram& SyncedSample::view(Modality m) const {
  auto it = views.find(m);
  if (it == views.end()) {
    throw DataError("sample " + std::to_string(id) + " has no " + std::string(modality_name(m)) + " view");
  }
  return it->second;
}

void normalize_min_max(std::span<double> values) {
  if (values.empty()) return;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  const double range = hi - lo;
  if (!(range > 0.0)) {
    std::fill(values.begin(), values.end(), 0.0);
    return;
  }
  for (double& v : values) v = (v - lo) / range;
}

std::vector<float> normalize_to_f32(std::vector<double> values) {
  normalize_min_max(values);
  return {values.begin(), values.end()};
}

namespace {

struct FftwPlanDeleter {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};
struct FftwBufferDeleter {
  void operator()(fftw_complex* p) const { fftw_free(p); }
};

Spectrogram stft_impl(std::span<const std::complex<double>> series, StftOptions options, Modality modality,
                      std::size_t kept_bins) {
  const std::size_t n = options.window_length;
  if (n == 0 || options.hop == 0) throw ArgumentError("stft: window length and hop must be positive");
  if (series.size() < n) {
    throw ArgumentError("stft: series of length " + std::to_string(series.size()) + " is shorter than the window (" +
                        std::to_string(n) + ")");
  }
  const std::size_t frames = (series.size() - n) / options.hop + 1;

  std::unique_ptr<fftw_complex, FftwBufferDeleter> in(fftw_alloc_complex(n));
  std::unique_ptr<fftw_complex, FftwBufferDeleter> out(fftw_alloc_complex(n));
  std::unique_ptr<fftw_plan_s, FftwPlanDeleter> plan(
      fftw_plan_dft_1d(static_cast<int>(n), in.get(), out.get(), FFTW_FORWARD, FFTW_ESTIMATE));

  std::vector<double> window(n);
  for (std::size_t i = 0; i < n; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }

  std::vector<double> mags(kept_bins * frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t start = f * options.hop;
    for (std::size_t i = 0; i < n; ++i) {
      const std::complex<double> v = series[start + i] * window[i];
      in.get()[i][0] = v.real();
      in.get()[i][1] = v.imag();
    }
    fftw_execute(plan.get());
    for (std::size_t k = 0; k < kept_bins; ++k) {
      mags[k * frames + f] = std::hypot(out.get()[k][0], out.get()[k][1]);
    }
  }
  return Spectrogram{modality, kept_bins, frames, normalize_to_f32(std::move(mags))};
}

}  // namespace

Spectrogram stft_spectrogram(std::span<const std::complex<double>> series, StftOptions options, Modality modality) {
  return stft_impl(series, options, modality, options.window_length);
}

Spectrogram stft_spectrogram(std::span<const double> series, StftOptions options, Modality modality) {
  std::vector<std::complex<double>> complex_series(series.begin(), series.end());
  return stft_impl(complex_series, options, modality, options.window_length / 2 + 1);
}

}  // namespace cwhar
