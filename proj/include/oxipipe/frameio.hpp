#pragma once

// RVF frame container and color-signal CSV.
//
// RVF layout (all little-endian):
//   bytes 0..3   magic "RVF1"
//   bytes 4..7   u32 width
//   bytes 8..11  u32 height
//   bytes 12..15 u32 frame_count
//   bytes 16..19 f32 fps (IEEE-754)
//   then frame_count frames of width*height*3 bytes, R,G,B interleaved, row-major.

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "oxipipe/error.hpp"
#include "oxipipe/signal.hpp"

namespace oxipipe::frameio {

inline constexpr std::array<std::uint8_t, 4> kRvfMagic = {0x52, 0x56, 0x46, 0x31};
inline constexpr std::size_t kRvfHeaderSize = 20;

class FrameSequence {
 public:
  FrameSequence(std::uint32_t width, std::uint32_t height, float fps, std::vector<std::uint8_t> pixels)
      : width_(width), height_(height), fps_(fps), pixels_(std::move(pixels)) {
    if (width_ == 0 || height_ == 0) fail(Errc::ZeroGeometry, "frame width and height must be nonzero");
    if (!(fps_ > 0.0f) || !std::isfinite(fps_)) fail(Errc::ZeroGeometry, "fps must be positive");
    const std::size_t per_frame = frame_bytes();
    if (pixels_.empty()) fail(Errc::ZeroGeometry, "frame sequence needs at least one frame");
    if (pixels_.size() % per_frame != 0)
      fail(Errc::InvalidFrames, "pixel buffer is not a whole number of frames");
  }

  std::uint32_t width() const { return width_; }
  std::uint32_t height() const { return height_; }
  float fps() const { return fps_; }
  std::size_t pixel_count() const { return std::size_t{width_} * height_; }
  std::size_t frame_bytes() const { return pixel_count() * 3; }
  std::size_t frame_count() const { return pixels_.size() / frame_bytes(); }

  std::span<const std::uint8_t> frame(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels_).subspan(i * frame_bytes(), frame_bytes());
  }
  std::span<const std::uint8_t> pixels() const { return pixels_; }

  bool operator==(const FrameSequence&) const = default;

 private:
  std::uint32_t width_;
  std::uint32_t height_;
  float fps_;
  std::vector<std::uint8_t> pixels_;
};

namespace detail {

inline std::uint32_t load_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

}  // namespace detail

inline FrameSequence read_rvf(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kRvfMagic.size() || !std::equal(kRvfMagic.begin(), kRvfMagic.end(), bytes.begin()))
    fail(Errc::BadMagic, "missing RVF1 magic");
  if (bytes.size() < kRvfHeaderSize) fail(Errc::TruncatedPayload, "header shorter than 20 bytes");
  const std::uint32_t width = detail::load_u32(bytes.data() + 4);
  const std::uint32_t height = detail::load_u32(bytes.data() + 8);
  const std::uint32_t count = detail::load_u32(bytes.data() + 12);
  const float fps = std::bit_cast<float>(detail::load_u32(bytes.data() + 16));
  if (width == 0 || height == 0 || count == 0 || !(fps > 0.0f))
    fail(Errc::ZeroGeometry, "width, height, frame_count and fps must be positive");
  const std::uint64_t payload = std::uint64_t{width} * height * 3 * count;
  const std::uint64_t available = bytes.size() - kRvfHeaderSize;
  if (payload > available)
    fail(Errc::TruncatedPayload, "declared " + std::to_string(count) + " frames need " + std::to_string(payload) +
                                     " bytes, have " + std::to_string(available));
  if (payload < available)
    fail(Errc::TrailingBytes, std::to_string(available - payload) + " bytes after last frame");
  std::vector<std::uint8_t> pixels(bytes.begin() + kRvfHeaderSize, bytes.end());
  return FrameSequence(width, height, fps, std::move(pixels));
}

inline std::vector<std::uint8_t> write_rvf(const FrameSequence& seq) {
  std::vector<std::uint8_t> out(kRvfHeaderSize + seq.pixels().size());
  auto put_u32 = [&](std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  };
  std::copy(kRvfMagic.begin(), kRvfMagic.end(), out.begin());
  put_u32(4, seq.width());
  put_u32(8, seq.height());
  put_u32(12, static_cast<std::uint32_t>(seq.frame_count()));
  put_u32(16, std::bit_cast<std::uint32_t>(seq.fps()));
  std::copy(seq.pixels().begin(), seq.pixels().end(), out.begin() + kRvfHeaderSize);
  return out;
}

// ---------------------------------------------------------------------------
// Color-signal CSV: header `time_s,r,g,b[,spo2][,cycle]`, LF endings, values
// printed with 17 significant digits. The optional `cycle` column carries the
// breathing-cycle index of each sample; boundaries are where it changes.

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string write_signal_csv(const ColorSignal& sig) {
  sig.validate();
  std::string out = "time_s,r,g,b";
  const bool with_spo2 = sig.spo2.has_value();
  const bool with_cycles = sig.cycle_boundaries.size() >= 2;
  if (with_spo2) out += ",spo2";
  if (with_cycles) out += ",cycle";
  out += '\n';
  std::size_t cycle = 0;
  for (std::size_t i = 0; i < sig.size(); ++i) {
    out += format_double(static_cast<double>(i) / sig.fps);
    for (double v : sig.samples[i]) {
      out += ',';
      out += format_double(v);
    }
    if (with_spo2) {
      out += ',';
      out += format_double((*sig.spo2)[i]);
    }
    if (with_cycles) {
      while (cycle + 1 < sig.cycle_boundaries.size() - 1 && i >= sig.cycle_boundaries[cycle + 1]) ++cycle;
      out += ',';
      out += std::to_string(cycle);
    }
    out += '\n';
  }
  return out;
}

namespace detail {

inline double parse_double(std::string_view field, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    fail(Errc::CsvParse, "line " + std::to_string(line) + ": bad number '" + std::string(field) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    parts.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

}  // namespace detail

inline ColorSignal read_signal_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  for (auto l : detail::split(text, '\n')) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    if (!l.empty()) lines.push_back(l);
  }
  if (lines.empty()) fail(Errc::CsvParse, "empty signal CSV");
  auto header = detail::split(lines[0], ',');
  if (header.size() < 4 || header[0] != "time_s" || header[1] != "r" || header[2] != "g" || header[3] != "b")
    fail(Errc::CsvParse, "header must start with time_s,r,g,b");
  bool with_spo2 = false, with_cycles = false;
  for (std::size_t i = 4; i < header.size(); ++i) {
    if (header[i] == "spo2" && i == 4) with_spo2 = true;
    else if (header[i] == "cycle" && !with_cycles) with_cycles = true;
    else fail(Errc::CsvParse, "unexpected column '" + std::string(header[i]) + "'");
  }
  ColorSignal sig;
  std::vector<double> times, spo2;
  std::vector<long> cycles;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    auto f = detail::split(lines[n], ',');
    if (f.size() != header.size())
      fail(Errc::CsvParse, "line " + std::to_string(n + 1) + ": expected " + std::to_string(header.size()) + " fields");
    times.push_back(detail::parse_double(f[0], n + 1));
    sig.samples.push_back({detail::parse_double(f[1], n + 1), detail::parse_double(f[2], n + 1),
                           detail::parse_double(f[3], n + 1)});
    std::size_t col = 4;
    if (with_spo2) spo2.push_back(detail::parse_double(f[col++], n + 1));
    if (with_cycles) cycles.push_back(static_cast<long>(detail::parse_double(f[col], n + 1)));
  }
  if (sig.samples.size() < 2) fail(Errc::CsvParse, "need at least two samples to infer the sample rate");
  const double span = times.back() - times.front();
  if (!(span > 0.0)) fail(Errc::CsvParse, "time column must increase");
  sig.fps = static_cast<double>(times.size() - 1) / span;
  if (with_spo2) sig.spo2 = std::move(spo2);
  if (with_cycles) {
    sig.cycle_boundaries.push_back(0);
    for (std::size_t i = 1; i < cycles.size(); ++i) {
      if (cycles[i] < cycles[i - 1]) fail(Errc::CsvParse, "cycle index must be non-decreasing");
      if (cycles[i] != cycles[i - 1]) sig.cycle_boundaries.push_back(i);
    }
    sig.cycle_boundaries.push_back(cycles.size());
  }
  sig.validate();
  return sig;
}

// ---------------------------------------------------------------------------
// Files

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoFailure, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

/// Writes via a temporary sibling and rename, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoFailure, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(Errc::IoFailure, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(Errc::IoFailure, "rename to " + path.string() + ": " + ec.message());
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace oxipipe::frameio
