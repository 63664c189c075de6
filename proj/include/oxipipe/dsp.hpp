#pragma once

// Stream construction (raw / band-passed AC / low-passed DC per color channel)
// and sliding-window dataset assembly.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "oxipipe/error.hpp"
#include "oxipipe/frameio.hpp"
#include "oxipipe/signal.hpp"

namespace oxipipe::dsp {

using json = nlohmann::json;

// Transposed direct-form II biquad, a0 normalized to 1.
struct Biquad {
  double b0, b1, b2, a1, a2;

  double dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }
};

/// Second-order Butterworth low-pass via the bilinear transform with prewarping.
inline Biquad butter_lowpass(double cutoff_hz, double fs) {
  const double k = std::tan(std::numbers::pi * cutoff_hz / fs);
  const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k * k);
  const double b0 = k * k * norm;
  return {b0, 2.0 * b0, b0, 2.0 * (k * k - 1.0) * norm, (1.0 - std::numbers::sqrt2 * k + k * k) * norm};
}

inline Biquad butter_highpass(double cutoff_hz, double fs) {
  const double k = std::tan(std::numbers::pi * cutoff_hz / fs);
  const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k * k);
  return {norm, -2.0 * norm, norm, 2.0 * (k * k - 1.0) * norm, (1.0 - std::numbers::sqrt2 * k + k * k) * norm};
}

/// Runs the cascade in place, starting from the steady state for a constant
/// input equal to x[0].
inline void sosfilt_steady(std::span<const Biquad> sections, std::vector<double>& x) {
  if (x.empty()) return;
  double level = x.front();
  for (const auto& s : sections) {
    const double y0 = s.dc_gain() * level;
    double z1 = y0 - s.b0 * level;
    double z2 = s.b2 * level - s.a2 * y0;
    for (double& v : x) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
    level = y0;
  }
}

/// Forward-backward filtering with odd-reflection padding of `padlen` samples.
inline std::vector<double> filtfilt(std::span<const Biquad> sections, std::span<const double> x, std::size_t padlen) {
  const std::size_t n = x.size();
  padlen = std::min(padlen, n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (std::size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);
  sosfilt_steady(sections, ext);
  std::reverse(ext.begin(), ext.end());
  sosfilt_steady(sections, ext);
  std::reverse(ext.begin(), ext.end());
  return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(padlen),
                             ext.begin() + static_cast<std::ptrdiff_t>(padlen + n));
}

/// Samples needed for the slowest pole to settle: one period of the lowest cutoff.
inline std::size_t settle_length(double fps, double lowest_hz) {
  return static_cast<std::size_t>(std::ceil(fps / lowest_hz));
}

inline std::vector<double> bandpass(std::span<const double> series, double fps, double low_hz, double high_hz) {
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < fps / 2.0))
    fail(Errc::BadBand, "need 0 < low < high < fps/2");
  const std::size_t settle = settle_length(fps, low_hz);
  if (series.size() < 3 * settle)
    fail(Errc::TooShort, "series of " + std::to_string(series.size()) + " samples, need " +
                             std::to_string(3 * settle));
  const std::array<Biquad, 2> sections{butter_highpass(low_hz, fps), butter_lowpass(high_hz, fps)};
  return filtfilt(sections, series, 3 * settle);
}

inline std::vector<double> bias(std::span<const double> series, double fps, double cutoff_hz) {
  if (!(cutoff_hz > 0.0 && cutoff_hz < fps / 2.0)) fail(Errc::BadBand, "need 0 < cutoff < fps/2");
  const std::size_t settle = settle_length(fps, cutoff_hz);
  if (series.size() < 3 * settle)
    fail(Errc::TooShort, "series of " + std::to_string(series.size()) + " samples, need " +
                             std::to_string(3 * settle));
  const std::array<Biquad, 1> sections{butter_lowpass(cutoff_hz, fps)};
  return filtfilt(sections, series, 3 * settle);
}

// ---------------------------------------------------------------------------
// Streams

inline constexpr std::size_t kStreams = 9;

enum class StreamKind : std::size_t { raw = 0, ac = 1, dc = 2 };

constexpr std::size_t stream_index(StreamKind kind, Channel c) {
  return static_cast<std::size_t>(kind) * kChannels + static_cast<std::size_t>(c);
}

inline constexpr std::array<std::string_view, kStreams> kStreamNames = {
    "raw_r", "raw_g", "raw_b", "ac_r", "ac_g", "ac_b", "dc_r", "dc_g", "dc_b"};

struct FilterConfig {
  double band_low_hz = 0.7;
  double band_high_hz = 4.0;
  double bias_cutoff_hz = 0.3;
};

struct StreamStack {
  double fps = 0.0;
  std::array<std::vector<double>, kStreams> streams;

  std::size_t length() const { return streams[0].size(); }
};

inline StreamStack build_streams(const ColorSignal& signal, const FilterConfig& cfg = {}) {
  StreamStack stack;
  stack.fps = signal.fps;
  for (std::size_t c = 0; c < kChannels; ++c) {
    auto raw = signal.channel(static_cast<Channel>(c));
    stack.streams[stream_index(StreamKind::ac, static_cast<Channel>(c))] =
        bandpass(raw, signal.fps, cfg.band_low_hz, cfg.band_high_hz);
    stack.streams[stream_index(StreamKind::dc, static_cast<Channel>(c))] = bias(raw, signal.fps, cfg.bias_cutoff_hz);
    stack.streams[stream_index(StreamKind::raw, static_cast<Channel>(c))] = std::move(raw);
  }
  return stack;
}

// ---------------------------------------------------------------------------
// Windowed datasets

enum class Normalization {
  // raw and ac divided by the window's mean DC level of the same channel
  // (times kAcDcGain) after centering; dc divided by 255. Keeps the AC/DC
  // ratios that carry SpO2 visible to the network.
  acdc_ratio,
  // raw and ac standardized to zero mean and unit std (std floored at 1e-6);
  // dc divided by 255.
  standardize,
};

inline constexpr double kAcDcGain = 100.0;
inline constexpr double kStdFloor = 1e-6;

inline std::string_view to_string(Normalization n) {
  return n == Normalization::acdc_ratio ? "acdc_ratio" : "standardize";
}

inline Normalization normalization_from_string(std::string_view s) {
  if (s == "acdc_ratio") return Normalization::acdc_ratio;
  if (s == "standardize") return Normalization::standardize;
  fail(Errc::ConfigInvalid, "unknown normalization '" + std::string(s) + "'");
}

struct WindowOptions {
  double window_s = 10.0;
  double stride_s = 0.2;
  Normalization normalization = Normalization::acdc_ratio;
  FilterConfig filters{};
};

// original = normalized * scale + offset, per stream
struct WindowNorm {
  std::array<double, kStreams> offset{};
  std::array<double, kStreams> scale{};
};

struct WindowSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive

  bool operator==(const WindowSpan&) const = default;
};

struct WindowedDataset {
  double fps = 0.0;
  std::size_t window_len = 0;
  std::size_t stride = 0;
  Normalization normalization = Normalization::acdc_ratio;
  std::vector<double> data;  // window-major, then stream, then sample
  std::vector<WindowNorm> norms;
  std::vector<WindowSpan> spans;
  std::vector<double> labels;  // empty in inference mode

  std::size_t size() const { return spans.size(); }
  std::size_t window_size() const { return kStreams * window_len; }
  bool labeled() const { return !labels.empty(); }

  std::span<const double> window(std::size_t i) const {
    return std::span<const double>(data).subspan(i * window_size(), window_size());
  }

  /// The window's streams in original units.
  std::vector<double> denormalized(std::size_t i) const {
    auto w = window(i);
    std::vector<double> out(w.begin(), w.end());
    for (std::size_t s = 0; s < kStreams; ++s) {
      for (std::size_t t = 0; t < window_len; ++t)
        out[s * window_len + t] = out[s * window_len + t] * norms[i].scale[s] + norms[i].offset[s];
    }
    return out;
  }

  WindowedDataset subset(std::span<const std::size_t> indices) const {
    WindowedDataset out;
    out.fps = fps;
    out.window_len = window_len;
    out.stride = stride;
    out.normalization = normalization;
    out.data.reserve(indices.size() * window_size());
    for (std::size_t i : indices) {
      auto w = window(i);
      out.data.insert(out.data.end(), w.begin(), w.end());
      out.norms.push_back(norms[i]);
      out.spans.push_back(spans[i]);
      if (labeled()) out.labels.push_back(labels[i]);
    }
    return out;
  }
};

inline WindowedDataset make_windows(const ColorSignal& signal, const WindowOptions& opts = {}) {
  signal.validate();
  const auto window_len = static_cast<std::size_t>(std::llround(opts.window_s * signal.fps));
  const auto stride = static_cast<std::size_t>(std::llround(opts.stride_s * signal.fps));
  if (window_len == 0 || stride == 0) fail(Errc::TooShort, "window and stride must span at least one sample");
  if (signal.size() < window_len)
    fail(Errc::TooShort, "signal of " + std::to_string(signal.size()) + " samples shorter than window of " +
                             std::to_string(window_len));
  const StreamStack stack = build_streams(signal, opts.filters);

  WindowedDataset ds;
  ds.fps = signal.fps;
  ds.window_len = window_len;
  ds.stride = stride;
  ds.normalization = opts.normalization;
  const std::size_t count = (signal.size() - window_len) / stride + 1;
  ds.data.resize(count * ds.window_size());
  ds.norms.resize(count);
  ds.spans.resize(count);
  const auto len = static_cast<double>(window_len);
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t start = w * stride;
    ds.spans[w] = {start, start + window_len};
    double* out = ds.data.data() + w * ds.window_size();
    auto& norm = ds.norms[w];
    std::array<double, kChannels> dc_mean{};
    for (std::size_t c = 0; c < kChannels; ++c) {
      const auto& dc = stack.streams[stream_index(StreamKind::dc, static_cast<Channel>(c))];
      dc_mean[c] = std::accumulate(dc.begin() + start, dc.begin() + start + window_len, 0.0) / len;
    }
    for (std::size_t s = 0; s < kStreams; ++s) {
      const auto& src = stack.streams[s];
      const auto kind = static_cast<StreamKind>(s / kChannels);
      if (kind == StreamKind::dc) {
        norm.offset[s] = 0.0;
        norm.scale[s] = 255.0;
      } else {
        const double mean = std::accumulate(src.begin() + start, src.begin() + start + window_len, 0.0) / len;
        norm.offset[s] = mean;
        if (opts.normalization == Normalization::acdc_ratio) {
          norm.scale[s] = std::max(dc_mean[s % kChannels], kStdFloor) / kAcDcGain;
        } else {
          double ss = 0.0;
          for (std::size_t t = start; t < start + window_len; ++t) ss += (src[t] - mean) * (src[t] - mean);
          norm.scale[s] = std::max(std::sqrt(ss / len), kStdFloor);
        }
      }
      for (std::size_t t = 0; t < window_len; ++t)
        out[s * window_len + t] = (src[start + t] - norm.offset[s]) / norm.scale[s];
    }
    if (signal.spo2) {
      const auto& truth = *signal.spo2;
      ds.labels.push_back(std::accumulate(truth.begin() + start, truth.begin() + start + window_len, 0.0) / len);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Serialization: a JSON manifest plus a flat little-endian f64 blob holding the
// normalized windows (window-major, stream-major, sample-minor).

inline constexpr int kWindowsFormatVersion = 1;

inline json manifest_json(const WindowedDataset& ds, const std::string& blob_name) {
  json windows = json::array();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    json w{{"start", ds.spans[i].start},
           {"end", ds.spans[i].end},
           {"offset", ds.norms[i].offset},
           {"scale", ds.norms[i].scale}};
    if (ds.labeled()) w["label"] = ds.labels[i];
    windows.push_back(std::move(w));
  }
  return json{{"format", "oxipipe-windows"},
              {"version", kWindowsFormatVersion},
              {"fps", ds.fps},
              {"window_len", ds.window_len},
              {"stride", ds.stride},
              {"streams", kStreamNames},
              {"normalization", to_string(ds.normalization)},
              {"count", ds.size()},
              {"blob", blob_name},
              {"blob_layout", "f64le window-major, stream-major, sample-minor"},
              {"windows", std::move(windows)}};
}

inline std::vector<std::uint8_t> blob_bytes(const WindowedDataset& ds) {
  std::vector<std::uint8_t> out(ds.data.size() * 8);
  for (std::size_t i = 0; i < ds.data.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(ds.data[i]);
    for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

inline void save_windows(const WindowedDataset& ds, const std::filesystem::path& manifest_path) {
  auto blob_path = manifest_path;
  blob_path.replace_extension(".f64");
  frameio::write_file_atomic(blob_path, blob_bytes(ds));
  frameio::write_text_atomic(manifest_path, manifest_json(ds, blob_path.filename().string()).dump(2) + "\n");
}

inline WindowedDataset windows_from_manifest(const json& m, std::span<const std::uint8_t> blob) {
  try {
    if (m.at("format") != "oxipipe-windows") fail(Errc::ConfigInvalid, "not a windows manifest");
    if (m.at("version").get<int>() != kWindowsFormatVersion)
      fail(Errc::SchemaVersionMismatch, "windows manifest version " + m.at("version").dump());
    WindowedDataset ds;
    ds.fps = m.at("fps").get<double>();
    ds.window_len = m.at("window_len").get<std::size_t>();
    ds.stride = m.at("stride").get<std::size_t>();
    ds.normalization = normalization_from_string(m.at("normalization").get<std::string>());
    const auto count = m.at("count").get<std::size_t>();
    const auto& windows = m.at("windows");
    if (windows.size() != count || blob.size() != count * ds.window_size() * 8)
      fail(Errc::ShapeMismatch, "manifest count disagrees with window list or blob size");
    for (const auto& w : windows) {
      ds.spans.push_back({w.at("start").get<std::size_t>(), w.at("end").get<std::size_t>()});
      ds.norms.push_back({w.at("offset").get<std::array<double, kStreams>>(),
                          w.at("scale").get<std::array<double, kStreams>>()});
      if (w.contains("label")) ds.labels.push_back(w.at("label").get<double>());
    }
    if (!ds.labels.empty() && ds.labels.size() != count) fail(Errc::ShapeMismatch, "labels on only some windows");
    ds.data.resize(count * ds.window_size());
    for (std::size_t i = 0; i < ds.data.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= std::uint64_t{blob[i * 8 + b]} << (8 * b);
      ds.data[i] = std::bit_cast<double>(bits);
    }
    return ds;
  } catch (const json::exception& e) {
    fail(Errc::ConfigInvalid, std::string("windows manifest: ") + e.what());
  }
}

inline WindowedDataset load_windows(const std::filesystem::path& manifest_path) {
  json m;
  try {
    m = json::parse(frameio::read_text(manifest_path));
  } catch (const json::exception& e) {
    fail(Errc::ConfigInvalid, std::string("windows manifest: ") + e.what());
  }
  const auto blob = frameio::read_file(manifest_path.parent_path() / m.value("blob", std::string{}));
  return windows_from_manifest(m, blob);
}

}  // namespace oxipipe::dsp
