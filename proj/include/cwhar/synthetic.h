#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cwhar/spectrogram.h"

namespace cwhar {

/// Doppler track of one activity over its active window u ∈ [0, 1]:
///   f(u) = offset + amplitude·sin(π·cycles·u) + ripple_amplitude·sin(2π·ripple_cycles·u)
/// in units of the Doppler half-band. `mirror` adds a reflected copy −f(u)
/// at that relative strength (limb motion).
struct ClassSignature {
  std::string name;
  double amplitude = 0.0;
  double cycles = 1.0;
  double offset = 0.0;
  double ripple_amplitude = 0.0;
  double ripple_cycles = 0.0;
  double duration = 0.5;  // fraction of the observation window
  double mirror = 0.0;
};

std::vector<ClassSignature> default_class_signatures();

/// Fixed per-receiver rendering of the shared latent.
struct ViewTransform {
  Modality modality = Modality::csi1;
  std::size_t height = 0;
  std::size_t width = 0;
  // Receiver-geometry Doppler projection; negative flips the sign.
  double doppler_scale = 1.0;
  // Odd-length mixing kernel applied along the frequency axis.
  std::vector<double> mixing{1.0};
  double gain = 1.0;
  // Direction of the receiver's bistatic bisector, radians. Together with the
  // subject's heading it sets how much of the Doppler the view sees.
  double bearing = 0.0;

  static ViewTransform identity(Modality m, std::size_t height, std::size_t width);
};

struct SyntheticOptions {
  std::string profile = "full";
  std::size_t per_class = 50;
  double noise_sigma = 0.1;
  // View correlation: each view adds independent σ·(1−ρ)·N(0,1) noise.
  double rho = 0.9;
  std::uint64_t seed = 0;
  std::size_t subjects = 5;
  // Largest shift of the activity centre from the window centre, as a
  // fraction of the window.
  double onset_jitter = 0.1;
  // Smallest Doppler projection a view keeps when the subject moves across
  // its bisector; 1 disables the geometry effect.
  double projection_floor = 0.2;
  std::size_t latent_height = 128;
  std::size_t latent_width = 256;
  std::vector<ClassSignature> signatures = default_class_signatures();
  std::vector<ViewTransform> views;

  nlohmann::json to_json() const;
};

/// Named defaults. "full": CSI 65×501, PWR 100×41. "desk": CSI 12×16,
/// PWR 16×8, sized for single-core experiments.
SyntheticOptions synthetic_profile(std::string_view name);
std::vector<std::string> synthetic_profile_names();

/// Renders `per_class` samples for every signature. Sample id i uses its
/// own random substream, so content does not depend on generation order.
/// Ids are class-major: id = class·per_class + k.
std::vector<SyncedSample> generate_synthetic_dataset(const SyntheticOptions& options);

}  // namespace cwhar
