#pragma once

// Skin segmentation by Otsu thresholding of luma and spatial averaging of the
// skin pixels into R/G/B time series.

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "oxipipe/error.hpp"
#include "oxipipe/frameio.hpp"
#include "oxipipe/signal.hpp"

namespace oxipipe::roi {

using Histogram = std::array<std::uint64_t, 256>;

/// Level t maximizing the between-class variance of [0,t] vs (t,255].
/// Variances are compared as exact rationals, so equal maxima resolve to the
/// smallest t regardless of rounding.
inline std::uint8_t otsu_threshold(std::span<const std::uint64_t, 256> hist) {
  using boost::multiprecision::cpp_int;
  std::uint64_t total = 0;
  cpp_int weighted_total = 0;
  int occupied = 0;
  for (int i = 0; i < 256; ++i) {
    total += hist[i];
    weighted_total += cpp_int(hist[i]) * i;
    occupied += hist[i] > 0;
  }
  if (total < 2 || occupied < 2) fail(Errc::NoSeparation, "histogram has a single occupied level");

  // sigma_B^2(t) * N^2 = D^2 / (n0 * n1), D = N * S0 - S * n0
  bool have_best = false;
  cpp_int best_num = 0, best_den = 1;
  int best_t = 0;
  std::uint64_t n0 = 0;
  cpp_int s0 = 0;
  for (int t = 0; t < 255; ++t) {
    n0 += hist[t];
    s0 += cpp_int(hist[t]) * t;
    const std::uint64_t n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const cpp_int d = cpp_int(total) * s0 - weighted_total * n0;
    const cpp_int num = d * d;
    const cpp_int den = cpp_int(n0) * n1;
    if (!have_best || num * best_den > best_num * den) {
      best_num = num;
      best_den = den;
      best_t = t;
      have_best = true;
    }
  }
  return static_cast<std::uint8_t>(best_t);
}

struct SkinMask {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> membership;  // 1 = skin, row-major
  std::uint8_t threshold = 0;

  std::size_t area() const { return static_cast<std::size_t>(std::count(membership.begin(), membership.end(), 1)); }
};

/// Luma as round(0.299 r + 0.587 g + 0.114 b), in exact integer arithmetic.
inline std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return static_cast<std::uint8_t>((299u * r + 587u * g + 114u * b + 500u) / 1000u);
}

/// Keeps only the largest 4-connected component of `mask`; ties go to the
/// component found first in row-major order.
inline void keep_largest_component(std::vector<std::uint8_t>& mask, std::uint32_t width, std::uint32_t height) {
  std::vector<std::int32_t> label(mask.size(), -1);
  std::vector<std::size_t> stack;
  std::int32_t best_label = -1;
  std::size_t best_size = 0;
  std::int32_t next = 0;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || label[start] >= 0) continue;
    std::size_t size = 0;
    stack.push_back(start);
    label[start] = next;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const std::size_t x = p % width, y = p / width;
      auto visit = [&](std::size_t q) {
        if (mask[q] && label[q] < 0) {
          label[q] = next;
          stack.push_back(q);
        }
      };
      if (x > 0) visit(p - 1);
      if (x + 1 < width) visit(p + 1);
      if (y > 0) visit(p - width);
      if (y + 1 < height) visit(p + width);
    }
    if (size > best_size) {
      best_size = size;
      best_label = next;
    }
    ++next;
  }
  for (std::size_t p = 0; p < mask.size(); ++p) mask[p] = (label[p] == best_label && best_label >= 0) ? 1 : 0;
}

/// `frame` is width*height interleaved RGB bytes.
inline SkinMask extract_mask(std::span<const std::uint8_t> frame, std::uint32_t width, std::uint32_t height) {
  const std::size_t pixels = std::size_t{width} * height;
  if (frame.size() != pixels * 3) fail(Errc::InvalidFrames, "frame size does not match geometry");
  std::vector<std::uint8_t> y(pixels);
  Histogram hist{};
  for (std::size_t p = 0; p < pixels; ++p) {
    y[p] = luma(frame[3 * p], frame[3 * p + 1], frame[3 * p + 2]);
    ++hist[y[p]];
  }
  SkinMask mask{width, height, std::vector<std::uint8_t>(pixels), otsu_threshold(hist)};
  for (std::size_t p = 0; p < pixels; ++p) mask.membership[p] = y[p] > mask.threshold ? 1 : 0;
  keep_largest_component(mask.membership, width, height);
  if (mask.area() == 0) fail(Errc::EmptyMask, "no skin pixels above threshold");
  return mask;
}

inline Rgb mean_color(std::span<const std::uint8_t> frame, const SkinMask& mask) {
  Rgb sum{};
  std::size_t count = 0;
  for (std::size_t p = 0; p < mask.membership.size(); ++p) {
    if (!mask.membership[p]) continue;
    for (std::size_t c = 0; c < kChannels; ++c) sum[c] += frame[3 * p + c];
    ++count;
  }
  for (double& v : sum) v /= static_cast<double>(count);
  return sum;
}

inline ColorSignal extract_color_signal(const frameio::FrameSequence& seq) {
  ColorSignal sig;
  sig.fps = seq.fps();
  sig.samples.reserve(seq.frame_count());
  for (std::size_t f = 0; f < seq.frame_count(); ++f) {
    try {
      auto frame = seq.frame(f);
      sig.samples.push_back(mean_color(frame, extract_mask(frame, seq.width(), seq.height())));
    } catch (const Error& e) {
      e.rethrow_with("frame " + std::to_string(f));
    }
  }
  return sig;
}

}  // namespace oxipipe::roi
