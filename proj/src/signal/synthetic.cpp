#include "cwhar/synthetic.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cwhar/errors.h"
#include "cwhar/rng.h"

namespace cwhar {

namespace {

constexpr double kPi = std::numbers::pi;

// Substream tags.
constexpr std::uint64_t kLatentStream = 0x4C41;
constexpr std::uint64_t kViewStream = 0x5649;

struct Grid {
  std::size_t height, width;
  std::vector<double> values;

  double at(long row, long col) const {
    row = std::clamp<long>(row, 0, static_cast<long>(height) - 1);
    col = std::clamp<long>(col, 0, static_cast<long>(width) - 1);
    return values[static_cast<std::size_t>(row) * width + static_cast<std::size_t>(col)];
  }
};

double track(const ClassSignature& s, double u) {
  return s.offset + s.amplitude * std::sin(kPi * s.cycles * u) +
         s.ripple_amplitude * std::sin(2.0 * kPi * s.ripple_cycles * u);
}

double ridge(double f, double centre, double width) {
  const double d = (f - centre) / width;
  return std::exp(-0.5 * d * d);
}

// Row i of an H-row grid sits at Doppler 1 − 2(i + 0.5)/H (top row positive).
double row_doppler(double row, std::size_t height) { return 1.0 - 2.0 * (row + 0.5) / static_cast<double>(height); }

struct Latent {
  Grid grid;
  int subject = 0, layout = 0, position = 0;
  double heading = 0.0;
};

Latent render_latent(const SyntheticOptions& opt, const ClassSignature& sig, Rng& rng) {
  Latent out;
  const int subject = out.subject = static_cast<int>(rng.below(opt.subjects));
  out.layout = static_cast<int>(rng.below(3));
  out.position = static_cast<int>(rng.below(9));
  // Positions fan out over a half circle; each layout rotates the room.
  out.heading = kPi * (static_cast<double>((out.position + 3 * out.layout) % 9) + rng.uniform(0.0, 1.0)) / 9.0;

  const double rank = opt.subjects > 1 ? static_cast<double>(subject) / static_cast<double>(opt.subjects - 1) : 0.5;
  const double amp_scale = (0.8 + 0.4 * rank) * rng.uniform(0.9, 1.1);
  const double speed = (1.1 - 0.2 * rank) * rng.uniform(0.85, 1.15);
  const double duration = std::min(0.95, sig.duration * speed);
  // Windows are segmented around the activity; the centre jitters.
  const double slack = 1.0 - duration;
  const double onset = std::clamp(0.5 * slack + rng.uniform(-1.0, 1.0) * opt.onset_jitter, 0.0, slack);
  const double intensity = rng.uniform(0.7, 1.0);
  const double width = 0.06 * rng.uniform(0.8, 1.25);
  const double static_line = rng.uniform(0.15, 0.4);

  Grid g{opt.latent_height, opt.latent_width, std::vector<double>(opt.latent_height * opt.latent_width)};
  for (std::size_t i = 0; i < g.height; ++i) {
    const double f = row_doppler(static_cast<double>(i), g.height);
    for (std::size_t j = 0; j < g.width; ++j) {
      const double t = (static_cast<double>(j) + 0.5) / static_cast<double>(g.width);
      double v = static_line * ridge(f, 0.0, 0.03);
      if (t >= onset && t <= onset + duration) {
        const double u = (t - onset) / duration;
        const double centre = amp_scale * track(sig, u);
        const double envelope = intensity * (0.3 + 0.7 * std::sin(kPi * u));
        v += envelope * ridge(f, centre, width);
        if (sig.mirror > 0.0) v += sig.mirror * envelope * ridge(f, -centre, width);
      }
      g.values[i * g.width + j] = v;
    }
  }
  out.grid = std::move(g);
  return out;
}

double sample_bilinear(const Grid& g, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const double wy = y - fy, wx = x - fx;
  const long r = static_cast<long>(fy), c = static_cast<long>(fx);
  return (1 - wy) * ((1 - wx) * g.at(r, c) + wx * g.at(r, c + 1)) + wy * ((1 - wx) * g.at(r + 1, c) + wx * g.at(r + 1, c + 1));
}

std::vector<double> render_view(const Grid& latent, const ViewTransform& vt, double projection, double independent_sigma,
                                Rng& rng) {
  const std::size_t h = vt.height, w = vt.width;
  // Supersampling factor per axis so downsampling averages over the footprint.
  const std::size_t sy = std::max<std::size_t>(1, (latent.height + h - 1) / h);
  const std::size_t sx = std::max<std::size_t>(1, (latent.width + w - 1) / w);
  std::vector<double> img(h * w, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < sy; ++a) {
        const double row = static_cast<double>(i) - 0.5 + (static_cast<double>(a) + 0.5) / static_cast<double>(sy);
        const double f_latent = row_doppler(row, h) / (vt.doppler_scale * projection);
        if (std::abs(f_latent) > 1.0) continue;
        const double y = (1.0 - f_latent) * 0.5 * static_cast<double>(latent.height) - 0.5;
        for (std::size_t b = 0; b < sx; ++b) {
          const double t = (static_cast<double>(j) + (static_cast<double>(b) + 0.5) / static_cast<double>(sx)) /
                           static_cast<double>(w);
          const double x = t * static_cast<double>(latent.width) - 0.5;
          acc += sample_bilinear(latent, y, x);
        }
      }
      img[i * w + j] = acc / static_cast<double>(sy * sx);
    }
  }
  // Frequency-axis mixing with zero padding.
  const long half = static_cast<long>(vt.mixing.size() / 2);
  std::vector<double> mixed(h * w, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t k = 0; k < vt.mixing.size(); ++k) {
      const long src = static_cast<long>(i) + static_cast<long>(k) - half;
      if (src < 0 || src >= static_cast<long>(h)) continue;
      for (std::size_t j = 0; j < w; ++j) mixed[i * w + j] += vt.mixing[k] * img[static_cast<std::size_t>(src) * w + j];
    }
  }
  for (double& v : mixed) v *= vt.gain;
  if (independent_sigma > 0.0) {
    for (double& v : mixed) v += independent_sigma * rng.normal();
  }
  return mixed;
}

void validate(const SyntheticOptions& opt) {
  if (opt.per_class < 1) throw ArgumentError("per_class must be at least 1");
  if (!(opt.noise_sigma >= 0.0) || !std::isfinite(opt.noise_sigma)) {
    throw ArgumentError("noise sigma must be finite and >= 0, got " + std::to_string(opt.noise_sigma));
  }
  if (!(opt.rho >= 0.0 && opt.rho <= 1.0)) {
    throw ArgumentError("rho must lie in [0, 1], got " + std::to_string(opt.rho));
  }
  if (!(opt.onset_jitter >= 0.0 && opt.onset_jitter <= 0.5)) throw ArgumentError("onset_jitter must lie in [0, 0.5]");
  if (!(opt.projection_floor > 0.0 && opt.projection_floor <= 1.0)) {
    throw ArgumentError("projection_floor must lie in (0, 1]");
  }
  if (opt.subjects < 1) throw ArgumentError("subjects must be at least 1");
  if (opt.latent_height < 2 || opt.latent_width < 2) throw ArgumentError("latent grid must be at least 2x2");
  if (opt.signatures.empty() || opt.signatures.size() > kNumClasses) {
    throw ArgumentError("between 1 and " + std::to_string(kNumClasses) + " class signatures required");
  }
  if (opt.views.empty()) throw ArgumentError("at least one view transform required");
  for (const auto& v : opt.views) {
    if (v.height == 0 || v.width == 0) throw ArgumentError("view extents must be positive");
    if (v.doppler_scale == 0.0 || !std::isfinite(v.doppler_scale)) throw ArgumentError("doppler_scale must be nonzero");
    if (v.mixing.empty() || v.mixing.size() % 2 == 0) throw ArgumentError("mixing kernel must have odd length");
  }
}

}  // namespace

std::vector<ClassSignature> default_class_signatures() {
  // name, amplitude, cycles, offset, ripple amp, ripple cycles, duration, mirror
  return {
      {"lay", -0.6, 1.0, 0.0, 0.0, 0.0, 0.55, 0.0},
      {"pickup", -0.5, 2.0, 0.0, 0.0, 0.0, 0.5, 0.0},
      {"sit", -0.45, 1.0, 0.0, 0.0, 0.0, 0.3, 0.0},
      {"stand", 0.45, 1.0, 0.0, 0.0, 0.0, 0.3, 0.0},
      {"standff", 0.7, 1.0, 0.0, 0.0, 0.0, 0.5, 0.0},
      {"walk", 0.0, 1.0, 0.35, 0.15, 4.0, 0.85, 0.5},
      {"wave", 0.25, 8.0, 0.0, 0.0, 0.0, 0.6, 0.6},
  };
}

ViewTransform ViewTransform::identity(Modality m, std::size_t height, std::size_t width) {
  return {m, height, width, 1.0, {1.0}, 1.0, 0.0};
}

nlohmann::json SyntheticOptions::to_json() const {
  nlohmann::json sigs = nlohmann::json::array();
  for (const auto& s : signatures) {
    sigs.push_back({{"name", s.name},
                    {"amplitude", s.amplitude},
                    {"cycles", s.cycles},
                    {"offset", s.offset},
                    {"ripple_amplitude", s.ripple_amplitude},
                    {"ripple_cycles", s.ripple_cycles},
                    {"duration", s.duration},
                    {"mirror", s.mirror}});
  }
  nlohmann::json vts = nlohmann::json::array();
  for (const auto& v : views) {
    vts.push_back({{"modality", modality_name(v.modality)},
                   {"shape", {v.height, v.width}},
                   {"doppler_scale", v.doppler_scale},
                   {"mixing", v.mixing},
                   {"gain", v.gain},
                   {"bearing", v.bearing}});
  }
  return {{"algorithm", "xoshiro256** seeded by splitmix64, per-sample substreams"},
          {"profile", profile},
          {"per_class", per_class},
          {"noise_sigma", noise_sigma},
          {"rho", rho},
          {"seed", seed},
          {"subjects", subjects},
          {"onset_jitter", onset_jitter},
          {"projection_floor", projection_floor},
          {"latent_shape", {latent_height, latent_width}},
          {"class_signatures", sigs},
          {"view_transforms", vts}};
}

SyntheticOptions synthetic_profile(std::string_view name) {
  SyntheticOptions opt;
  opt.profile = std::string(name);
  std::size_t csi_h, csi_w, pwr_h, pwr_w;
  if (name == "full") {
    csi_h = 65, csi_w = 501, pwr_h = 100, pwr_w = 41;
    opt.latent_height = 128;
    opt.latent_width = 256;
  } else if (name == "desk") {
    csi_h = 12, csi_w = 16, pwr_h = 16, pwr_w = 8;
    opt.latent_height = 48;
    opt.latent_width = 64;
  } else {
    throw ArgumentError("unknown synthetic profile '" + std::string(name) + "' (expected full or desk)");
  }
  opt.views = {
      {Modality::csi1, csi_h, csi_w, 1.0, {0.25, 0.5, 0.25}, 1.0, 0.0},
      {Modality::csi2, csi_h, csi_w, -0.7, {0.15, 0.7, 0.15}, 0.8, kPi / 2.0},
      {Modality::pwr, pwr_h, pwr_w, 0.9, {0.1, 0.8, 0.1}, 1.2, kPi / 4.0},
  };
  return opt;
}

std::vector<std::string> synthetic_profile_names() { return {"full", "desk"}; }

std::vector<SyncedSample> generate_synthetic_dataset(const SyntheticOptions& opt) {
  validate(opt);
  std::vector<SyncedSample> samples;
  samples.reserve(opt.per_class * opt.signatures.size());
  const double independent = opt.noise_sigma * (1.0 - opt.rho);
  for (std::size_t c = 0; c < opt.signatures.size(); ++c) {
    const auto label = activity_index(opt.signatures[c].name);
    if (!label) throw ArgumentError("class signature '" + opt.signatures[c].name + "' is not an activity label");
    for (std::size_t k = 0; k < opt.per_class; ++k) {
      SyncedSample s;
      s.id = c * opt.per_class + k;
      s.label = *label;
      Rng latent_rng = Rng::stream(opt.seed, {kLatentStream, s.id});
      const Latent latent = render_latent(opt, opt.signatures[c], latent_rng);
      s.subject = latent.subject;
      s.layout = latent.layout;
      s.position = latent.position;
      for (const auto& vt : opt.views) {
        Rng view_rng = Rng::stream(opt.seed, {kViewStream, s.id, static_cast<std::uint64_t>(vt.modality)});
        const double projection =
            opt.projection_floor + (1.0 - opt.projection_floor) * std::abs(std::cos(latent.heading - vt.bearing));
        s.views[vt.modality] = Spectrogram{vt.modality, vt.height, vt.width,
                                           normalize_to_f32(render_view(latent.grid, vt, projection, independent, view_rng))};
      }
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

}  // namespace cwhar
