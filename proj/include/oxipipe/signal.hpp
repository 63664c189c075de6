#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "oxipipe/error.hpp"

namespace oxipipe {

enum class Channel : std::size_t { red = 0, green = 1, blue = 2 };

inline constexpr std::size_t kChannels = 3;

using Rgb = std::array<double, kChannels>;

// Per-frame spatial means of the skin region, optionally with the
// sample-aligned ground-truth SpO2 trace and breathing-cycle boundaries.
struct ColorSignal {
  double fps = 0.0;
  std::vector<Rgb> samples;
  std::optional<std::vector<double>> spo2;
  // Sample indices, first == 0 and last == samples.size() when present.
  std::vector<std::size_t> cycle_boundaries;

  std::size_t size() const { return samples.size(); }

  std::vector<double> channel(Channel c) const {
    std::vector<double> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) out[i] = samples[i][static_cast<std::size_t>(c)];
    return out;
  }

  void validate() const {
    if (!(fps > 0.0)) fail(Errc::InvalidFrames, "color signal fps must be positive");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      for (double v : samples[i]) {
        if (!(v >= 0.0 && v <= 255.0))
          fail(Errc::RangeOverflow, "color sample " + std::to_string(i) + " outside [0,255]");
      }
    }
    if (spo2 && spo2->size() != samples.size())
      fail(Errc::LengthMismatch, "spo2 trace length differs from sample count");
    for (std::size_t i = 1; i < cycle_boundaries.size(); ++i) {
      if (cycle_boundaries[i] <= cycle_boundaries[i - 1])
        fail(Errc::InvalidFrames, "cycle boundaries must be strictly increasing");
    }
    if (!cycle_boundaries.empty() && cycle_boundaries.back() > samples.size())
      fail(Errc::InvalidFrames, "cycle boundary beyond signal end");
  }
};

}  // namespace oxipipe
