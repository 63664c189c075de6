#pragma once

// Optophysiological forward model for ground-truthed synthetic recordings.
//
// Per channel c and sample time t:
//   s_c(t) = DC_c * (1 - melanin * k_c) - AC_c(t) * pulse(t) + n_c(t)
// with the red and blue AC amplitudes tied by the calibration line so that
//   (AC_red / DC_red) / (AC_blue / DC_blue) = (a - spo2(t)) / b
// while the green AC-to-DC ratio is green_ac_ratio * perfusion, free of SpO2
// and of the slow perfusion swing (a decoy channel).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "oxipipe/error.hpp"
#include "oxipipe/frameio.hpp"
#include "oxipipe/random.hpp"
#include "oxipipe/signal.hpp"

namespace oxipipe::synth {

using json = nlohmann::json;

enum class HandSide { palm, back };

struct SubjectProfile {
  double skin_tone = 0.3;  // melanin factor, 0 = lightest
  HandSide hand_side = HandSide::back;
  Rgb base_dc{170.0, 130.0, 110.0};
  double perfusion = 0.02;  // red/blue AC-to-DC scale at R = 1
  double noise_sigma = 0.5;

  Rgb melanin_weights{0.3, 0.5, 0.7};
  double palm_ac_factor = 0.6;
  double green_ac_ratio = 1.0;
  // Slow perfusion swing shared by red and blue; cancels in the ratio.
  double perfusion_modulation = 0.15;
  double modulation_period_s = 23.0;
  // Hand-motion episodes that scale the noise of every channel at once.
  double burst_rate_hz = 0.1;
  double burst_gain = 4.0;
  double burst_min_s = 1.0;
  double burst_max_s = 3.0;

  bool operator==(const SubjectProfile&) const = default;

  double side_factor() const { return hand_side == HandSide::palm ? palm_ac_factor : 1.0; }

  Rgb effective_dc() const {
    Rgb dc{};
    for (std::size_t c = 0; c < kChannels; ++c) dc[c] = base_dc[c] * (1.0 - skin_tone * melanin_weights[c]);
    return dc;
  }

  void validate() const {
    if (!(skin_tone >= 0.0 && skin_tone <= 1.0)) fail(Errc::InvalidProfile, "skin_tone must be in [0,1]");
    if (!(perfusion >= 0.0 && perfusion <= 0.1)) fail(Errc::InvalidProfile, "perfusion must be in [0, 0.1]");
    if (!(noise_sigma >= 0.0)) fail(Errc::InvalidProfile, "noise_sigma must be >= 0");
    if (!(palm_ac_factor > 0.0 && palm_ac_factor <= 1.0))
      fail(Errc::InvalidProfile, "palm_ac_factor must be in (0,1]");
    if (!(green_ac_ratio >= 0.0 && green_ac_ratio <= 5.0))
      fail(Errc::InvalidProfile, "green_ac_ratio must be in [0,5]");
    if (!(perfusion_modulation >= 0.0 && perfusion_modulation < 1.0))
      fail(Errc::InvalidProfile, "perfusion_modulation must be in [0,1)");
    if (!(modulation_period_s > 0.0)) fail(Errc::InvalidProfile, "modulation_period_s must be positive");
    if (!(burst_rate_hz >= 0.0 && burst_gain >= 0.0 && burst_min_s > 0.0 && burst_max_s >= burst_min_s))
      fail(Errc::InvalidProfile, "invalid burst parameters");
    for (std::size_t c = 0; c < kChannels; ++c) {
      if (!(melanin_weights[c] >= 0.0 && melanin_weights[c] <= 1.0))
        fail(Errc::InvalidProfile, "melanin weights must be in [0,1]");
    }
    for (double v : effective_dc()) {
      if (!(v > 0.0 && v < 255.0)) fail(Errc::InvalidProfile, "effective DC must stay inside (0,255)");
    }
  }
};

struct CalibrationModel {
  double a = 110.0;
  double b = 25.0;

  double ratio_for(double spo2) const { return (a - spo2) / b; }
  double spo2_for(double ratio) const { return a - b * ratio; }

  void validate() const {
    if (!(b > 0.0)) fail(Errc::InvalidProfile, "calibration slope b must be positive");
    if (!(a - b >= 0.0 && a - b <= 100.0)) fail(Errc::InvalidProfile, "a - b must lie in [0,100]");
  }
};

struct BreathingDips {
  double baseline = 98.0;
  double nadir = 85.0;
};

struct ConstantSpo2 {
  double value = 98.0;
};

// Heart rate, breathing-cycle boundaries and the SpO2 course over time.
struct PhysioTrace {
  double heart_rate_hz = 1.2;
  std::vector<double> boundaries_s;  // strictly increasing, front() == 0
  std::variant<BreathingDips, ConstantSpo2> shape = BreathingDips{};

  static PhysioTrace breathing(std::size_t cycles = 3, double cycle_s = 60.0, double heart_rate_hz = 1.2,
                               BreathingDips dips = {}) {
    PhysioTrace p;
    p.heart_rate_hz = heart_rate_hz;
    for (std::size_t i = 0; i <= cycles; ++i) p.boundaries_s.push_back(static_cast<double>(i) * cycle_s);
    p.shape = dips;
    return p;
  }

  static PhysioTrace constant(double spo2, double duration_s, double heart_rate_hz = 1.2) {
    PhysioTrace p;
    p.heart_rate_hz = heart_rate_hz;
    p.boundaries_s = {0.0, duration_s};
    p.shape = ConstantSpo2{spo2};
    return p;
  }

  double duration_s() const { return boundaries_s.empty() ? 0.0 : boundaries_s.back(); }
  std::size_t cycles() const { return boundaries_s.empty() ? 0 : boundaries_s.size() - 1; }

  /// Same trace cut at `duration`; cycles past the cut are dropped.
  PhysioTrace truncated(double duration) const {
    PhysioTrace p = *this;
    p.boundaries_s.clear();
    for (double b : boundaries_s) {
      if (b < duration) p.boundaries_s.push_back(b);
    }
    p.boundaries_s.push_back(duration);
    return p;
  }

  double spo2_at(double t) const {
    if (const auto* c = std::get_if<ConstantSpo2>(&shape)) return c->value;
    const auto& dips = std::get<BreathingDips>(shape);
    auto it = std::upper_bound(boundaries_s.begin(), boundaries_s.end(), t);
    if (it == boundaries_s.begin()) return dips.baseline;
    if (it == boundaries_s.end()) --it;
    const double start = *(it - 1);
    const double len = *it - start;
    const double u = (t - start) / len;
    if (u <= 0.2 || u >= 0.8) return dips.baseline;
    const double dip = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * (u - 0.2) / 0.6));
    return dips.baseline - (dips.baseline - dips.nadir) * dip;
  }

  void validate() const {
    if (!(heart_rate_hz >= 0.7 && heart_rate_hz <= 4.0))
      fail(Errc::InvalidProfile, "heart_rate_hz must be in [0.7, 4.0]");
    if (boundaries_s.size() < 2) fail(Errc::InvalidProfile, "need at least one breathing cycle");
    if (boundaries_s.front() != 0.0) fail(Errc::InvalidProfile, "first cycle boundary must be 0");
    for (std::size_t i = 1; i < boundaries_s.size(); ++i) {
      if (!(boundaries_s[i] > boundaries_s[i - 1])) fail(Errc::InvalidProfile, "cycle boundaries must increase");
    }
    auto in_range = [](double v) { return v >= 70.0 && v <= 100.0; };
    if (const auto* c = std::get_if<ConstantSpo2>(&shape)) {
      if (!in_range(c->value)) fail(Errc::InvalidProfile, "spo2 must be in [70,100]");
    } else {
      const auto& d = std::get<BreathingDips>(shape);
      if (!in_range(d.baseline) || !in_range(d.nadir)) fail(Errc::InvalidProfile, "spo2 must be in [70,100]");
    }
  }
};

// ---------------------------------------------------------------------------
// Pulse waveform: systolic raised-cosine lobe on [0, 0.4) of the period plus a
// dicrotic lobe of half height on [0.4, 0.7); shifted to zero mean, so its
// peak-to-trough amplitude is exactly 1.

inline constexpr double kPulseMean = 0.2 + 0.5 * 0.15;

inline double pulse_shape(double phase) {
  double p = 0.0;
  if (phase < 0.4) p += 0.5 * (1.0 + std::cos(std::numbers::pi * (phase - 0.2) / 0.2));
  if (phase >= 0.4 && phase < 0.7) p += 0.25 * (1.0 + std::cos(std::numbers::pi * (phase - 0.55) / 0.15));
  return p - kPulseMean;
}

inline double pulse(double t, double heart_rate_hz) {
  const double cycles = heart_rate_hz * t;
  return pulse_shape(cycles - std::floor(cycles));
}

/// Noise scale per sample: 1 outside motion episodes, burst_gain inside.
inline std::vector<double> burst_envelope(const SubjectProfile& profile, std::size_t n, double fps,
                                          std::uint64_t seed) {
  std::vector<double> env(n, 1.0);
  if (profile.burst_rate_hz <= 0.0) return env;
  Rng rng(seed);
  const double total = static_cast<double>(n) / fps;
  double t = 0.0;
  while (true) {
    t += rng.exponential(profile.burst_rate_hz);
    if (t >= total) break;
    const double d = rng.uniform(profile.burst_min_s, profile.burst_max_s);
    const auto i0 = static_cast<std::size_t>(t * fps);
    const auto i1 = std::min(n, static_cast<std::size_t>((t + d) * fps));
    for (std::size_t i = i0; i < i1; ++i) env[i] = profile.burst_gain;
    t += d;
  }
  return env;
}

struct SynthRecording {
  ColorSignal signal;
  Rgb dc{};                        // per-channel stationary level
  std::vector<Rgb> ac_amplitude;   // per-sample AC amplitude per channel
  std::vector<double> noise_scale;  // burst envelope
};

inline SynthRecording simulate(const SubjectProfile& profile, const PhysioTrace& physio, double fps,
                               std::uint64_t seed, const CalibrationModel& cal = {}) {
  profile.validate();
  physio.validate();
  if (!(fps >= 2.0 * physio.heart_rate_hz))
    fail(Errc::NyquistViolation, "fps " + std::to_string(fps) + " below twice the heart rate");

  const auto n = static_cast<std::size_t>(std::llround(physio.duration_s() * fps));
  SynthRecording rec;
  rec.dc = profile.effective_dc();
  rec.noise_scale = burst_envelope(profile, n, fps, derive_seed(seed, 1));
  Rng noise(derive_seed(seed, 0));
  Rng phase_rng(derive_seed(seed, 2));
  const double mod_phase = phase_rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double side = profile.side_factor();

  auto& sig = rec.signal;
  sig.fps = fps;
  sig.samples.resize(n);
  sig.spo2 = std::vector<double>(n);
  rec.ac_amplitude.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fps;
    const double spo2 = physio.spo2_at(t);
    const double ratio = cal.ratio_for(spo2);
    const double modulation =
        1.0 + profile.perfusion_modulation *
                  std::sin(2.0 * std::numbers::pi * t / profile.modulation_period_s + mod_phase);
    const double blue_ac_dc = profile.perfusion * side * modulation;
    Rgb ac{ratio * blue_ac_dc * rec.dc[0], profile.green_ac_ratio * profile.perfusion * side * rec.dc[1],
           blue_ac_dc * rec.dc[2]};
    const double p = pulse(t, physio.heart_rate_hz);
    for (std::size_t c = 0; c < kChannels; ++c) {
      double v = rec.dc[c] - ac[c] * p;
      if (profile.noise_sigma > 0.0) v += profile.noise_sigma * rec.noise_scale[i] * noise.normal();
      if (!(v >= 0.0 && v <= 255.0))
        fail(Errc::RangeOverflow, "sample " + std::to_string(i) + " channel " + std::to_string(c) +
                                      " = " + std::to_string(v));
      sig.samples[i][c] = v;
    }
    (*sig.spo2)[i] = spo2;
    rec.ac_amplitude[i] = ac;
  }
  for (double b : physio.boundaries_s)
    sig.cycle_boundaries.push_back(std::min(n, static_cast<std::size_t>(std::llround(b * fps))));
  return rec;
}

inline ColorSignal generate_color_signal(const SubjectProfile& profile, const PhysioTrace& physio, double fps,
                                         std::uint64_t seed, const CalibrationModel& cal = {}) {
  return simulate(profile, physio, fps, seed, cal).signal;
}

// ---------------------------------------------------------------------------
// Video rendering

struct Geometry {
  std::uint32_t width = 64;
  std::uint32_t height = 64;
};

struct RenderOptions {
  double texture_sigma = 2.0;
  double mask_scale = 1.0;  // scales the hand silhouette about its center
  int background_min = 6;
  int background_max = 34;
};

/// Hand silhouette: palm ellipse, four fingers and a thumb, all overlapping
/// the palm so the region is one 4-connected component.
inline std::vector<std::uint8_t> hand_mask(Geometry g, double scale) {
  std::vector<std::uint8_t> mask(std::size_t{g.width} * g.height, 0);
  if (scale <= 0.0) return mask;
  const double w = g.width, h = g.height;
  const double cx = 0.5 * w, cy = 0.55 * h;
  auto inside_ellipse = [](double x, double y, double ex, double ey, double rx, double ry) {
    const double dx = (x - ex) / rx, dy = (y - ey) / ry;
    return dx * dx + dy * dy <= 1.0;
  };
  for (std::uint32_t row = 0; row < g.height; ++row) {
    for (std::uint32_t col = 0; col < g.width; ++col) {
      // map pixel center back to the unscaled silhouette
      const double x = cx + (col + 0.5 - cx) / scale;
      const double y = cy + (row + 0.5 - cy) / scale;
      bool in = inside_ellipse(x, y, 0.5 * w, 0.62 * h, 0.22 * w, 0.2 * h);
      in = in || inside_ellipse(x, y, 0.27 * w, 0.6 * h, 0.06 * w, 0.14 * h);
      for (double fx : {0.34, 0.45, 0.56, 0.67}) {
        in = in || (x >= (fx - 0.04) * w && x <= (fx + 0.04) * w && y >= 0.18 * h && y <= 0.52 * h);
      }
      mask[std::size_t{row} * g.width + col] = in ? 1 : 0;
    }
  }
  return mask;
}

struct SynthVideo {
  frameio::FrameSequence frames;
  std::vector<std::uint8_t> mask;  // true skin region, row-major
  SynthRecording truth;
};

inline SynthVideo generate_frames(const SubjectProfile& profile, const PhysioTrace& physio, double fps,
                                  Geometry geometry, std::uint64_t seed, const RenderOptions& opts = {},
                                  const CalibrationModel& cal = {}) {
  if (geometry.width < 32 || geometry.height < 32)
    fail(Errc::GeometryTooSmall, "geometry must be at least 32x32");
  auto mask = hand_mask(geometry, opts.mask_scale);
  if (std::count(mask.begin(), mask.end(), 1) == 0) fail(Errc::GeometryTooSmall, "hand mask is empty");

  auto truth = simulate(profile, physio, fps, seed, cal);
  const std::size_t pixels = mask.size();
  const std::size_t n = truth.signal.size();
  std::vector<std::uint8_t> bytes(n * pixels * 3);
  Rng texture(derive_seed(seed, 3));
  const int bg_span = opts.background_max - opts.background_min + 1;
  for (std::size_t f = 0; f < n; ++f) {
    std::uint8_t* frame = bytes.data() + f * pixels * 3;
    const Rgb& s = truth.signal.samples[f];
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t c = 0; c < kChannels; ++c) {
        int v;
        if (mask[p]) {
          v = static_cast<int>(std::lround(s[c] + opts.texture_sigma * texture.normal()));
        } else {
          v = opts.background_min + static_cast<int>(texture.index(static_cast<std::uint64_t>(bg_span)));
        }
        frame[p * 3 + c] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
      }
    }
  }
  return SynthVideo{frameio::FrameSequence(geometry.width, geometry.height, static_cast<float>(fps), std::move(bytes)),
                    std::move(mask), std::move(truth)};
}

// ---------------------------------------------------------------------------
// JSON configuration. Unknown keys are rejected so that typos surface.

namespace detail {

inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const char* what) {
  if (!j.is_object()) fail(Errc::ConfigInvalid, std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      fail(Errc::ConfigInvalid, std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(Errc::ConfigInvalid, std::string("key '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline SubjectProfile profile_from_json(const json& j) {
  detail::check_keys(j,
                     {"skin_tone", "hand_side", "base_dc", "perfusion", "noise_sigma", "melanin_weights",
                      "palm_ac_factor", "green_ac_ratio", "perfusion_modulation", "modulation_period_s",
                      "burst_rate_hz", "burst_gain", "burst_min_s", "burst_max_s"},
                     "profile");
  SubjectProfile p;
  detail::read_opt(j, "skin_tone", p.skin_tone);
  if (j.contains("hand_side")) {
    std::string side;
    detail::read_opt(j, "hand_side", side);
    if (side == "palm") p.hand_side = HandSide::palm;
    else if (side == "back") p.hand_side = HandSide::back;
    else fail(Errc::ConfigInvalid, "hand_side must be 'palm' or 'back'");
  }
  detail::read_opt(j, "base_dc", p.base_dc);
  detail::read_opt(j, "perfusion", p.perfusion);
  detail::read_opt(j, "noise_sigma", p.noise_sigma);
  detail::read_opt(j, "melanin_weights", p.melanin_weights);
  detail::read_opt(j, "palm_ac_factor", p.palm_ac_factor);
  detail::read_opt(j, "green_ac_ratio", p.green_ac_ratio);
  detail::read_opt(j, "perfusion_modulation", p.perfusion_modulation);
  detail::read_opt(j, "modulation_period_s", p.modulation_period_s);
  detail::read_opt(j, "burst_rate_hz", p.burst_rate_hz);
  detail::read_opt(j, "burst_gain", p.burst_gain);
  detail::read_opt(j, "burst_min_s", p.burst_min_s);
  detail::read_opt(j, "burst_max_s", p.burst_max_s);
  p.validate();
  return p;
}

inline json to_json(const SubjectProfile& p) {
  return json{{"skin_tone", p.skin_tone},
              {"hand_side", p.hand_side == HandSide::palm ? "palm" : "back"},
              {"base_dc", p.base_dc},
              {"perfusion", p.perfusion},
              {"noise_sigma", p.noise_sigma},
              {"melanin_weights", p.melanin_weights},
              {"palm_ac_factor", p.palm_ac_factor},
              {"green_ac_ratio", p.green_ac_ratio},
              {"perfusion_modulation", p.perfusion_modulation},
              {"modulation_period_s", p.modulation_period_s},
              {"burst_rate_hz", p.burst_rate_hz},
              {"burst_gain", p.burst_gain},
              {"burst_min_s", p.burst_min_s},
              {"burst_max_s", p.burst_max_s}};
}

inline PhysioTrace physio_from_json(const json& j) {
  detail::check_keys(j, {"heart_rate_hz", "cycles", "cycle_s", "baseline", "nadir", "constant_spo2", "duration_s"},
                     "physio");
  double hr = 1.2;
  detail::read_opt(j, "heart_rate_hz", hr);
  PhysioTrace p;
  if (j.contains("constant_spo2")) {
    double value = 98.0, duration = 10.0;
    detail::read_opt(j, "constant_spo2", value);
    detail::read_opt(j, "duration_s", duration);
    p = PhysioTrace::constant(value, duration, hr);
  } else {
    std::size_t cycles = 3;
    double cycle_s = 60.0;
    BreathingDips dips;
    detail::read_opt(j, "cycles", cycles);
    detail::read_opt(j, "cycle_s", cycle_s);
    detail::read_opt(j, "baseline", dips.baseline);
    detail::read_opt(j, "nadir", dips.nadir);
    p = PhysioTrace::breathing(cycles, cycle_s, hr, dips);
  }
  p.validate();
  return p;
}

inline json to_json(const PhysioTrace& p) {
  json j{{"heart_rate_hz", p.heart_rate_hz}};
  if (const auto* c = std::get_if<ConstantSpo2>(&p.shape)) {
    j["constant_spo2"] = c->value;
    j["duration_s"] = p.duration_s();
  } else {
    const auto& d = std::get<BreathingDips>(p.shape);
    j["cycles"] = p.cycles();
    j["cycle_s"] = p.cycles() ? p.duration_s() / static_cast<double>(p.cycles()) : 0.0;
    j["baseline"] = d.baseline;
    j["nadir"] = d.nadir;
  }
  return j;
}

inline CalibrationModel calibration_from_json(const json& j) {
  detail::check_keys(j, {"a", "b", "fit_rmse", "n"}, "calibration");
  CalibrationModel c;
  detail::read_opt(j, "a", c.a);
  detail::read_opt(j, "b", c.b);
  return c;
}

}  // namespace oxipipe::synth
