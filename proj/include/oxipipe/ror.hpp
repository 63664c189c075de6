#pragma once

// Ratio-of-ratios SpO2 baseline.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "oxipipe/dsp.hpp"
#include "oxipipe/error.hpp"
#include "oxipipe/signal.hpp"
#include "oxipipe/synth.hpp"

namespace oxipipe::ror {

using json = nlohmann::json;
using synth::CalibrationModel;

inline constexpr double kDcEpsilon = 1e-6;
inline constexpr double kSpo2Min = 70.0;
inline constexpr double kSpo2Max = 100.0;

enum class ChannelPair { red_blue, red_green };

inline std::string_view to_string(ChannelPair p) { return p == ChannelPair::red_blue ? "red_blue" : "red_green"; }

inline ChannelPair channel_pair_from_string(std::string_view s) {
  if (s == "red_blue") return ChannelPair::red_blue;
  if (s == "red_green") return ChannelPair::red_green;
  fail(Errc::ConfigInvalid, "unknown channel pair '" + std::string(s) + "'");
}

struct RatioFeatures {
  Rgb ac_rms{};
  Rgb dc_mean{};
  double ratio = 0.0;  // (AC/DC of red) / (AC/DC of the reference channel)
};

/// `streams` holds the 9 streams of one window in original units, stream-major.
inline RatioFeatures ratio_of_ratios(std::span<const double> streams, std::size_t window_len,
                                     ChannelPair pair = ChannelPair::red_blue) {
  if (window_len == 0 || streams.size() != dsp::kStreams * window_len)
    fail(Errc::ShapeMismatch, "window must hold 9 streams of window_len samples");
  RatioFeatures f;
  const auto len = static_cast<double>(window_len);
  for (std::size_t c = 0; c < kChannels; ++c) {
    const auto ac = streams.subspan(dsp::stream_index(dsp::StreamKind::ac, static_cast<Channel>(c)) * window_len,
                                    window_len);
    const auto dc = streams.subspan(dsp::stream_index(dsp::StreamKind::dc, static_cast<Channel>(c)) * window_len,
                                    window_len);
    double ss = 0.0, sum = 0.0;
    for (std::size_t t = 0; t < window_len; ++t) {
      ss += ac[t] * ac[t];
      sum += dc[t];
    }
    f.ac_rms[c] = std::sqrt(ss / len);
    f.dc_mean[c] = sum / len;
    if (!(f.dc_mean[c] > kDcEpsilon))
      fail(Errc::DegenerateDC, "mean DC of channel " + std::to_string(c) + " is not positive");
  }
  const std::size_t ref = pair == ChannelPair::red_blue ? 2 : 1;
  const double denom = f.ac_rms[ref] / f.dc_mean[ref];
  f.ratio = (f.ac_rms[0] / f.dc_mean[0]) / denom;
  if (!std::isfinite(f.ratio) || !(f.ratio > 0.0))
    fail(Errc::DegenerateDC, "ratio of ratios is not finite and positive");
  return f;
}

inline std::vector<RatioFeatures> dataset_features(const dsp::WindowedDataset& ds,
                                                   ChannelPair pair = ChannelPair::red_blue) {
  std::vector<RatioFeatures> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    try {
      out.push_back(ratio_of_ratios(ds.denormalized(i), ds.window_len, pair));
    } catch (const Error& e) {
      e.rethrow_with("window " + std::to_string(i));
    }
  }
  return out;
}

struct CalibrationFit {
  CalibrationModel model;
  double fit_rmse = 0.0;
  std::size_t n = 0;
};

/// Least-squares fit of label = a - b * ratio.
inline CalibrationFit fit_calibration(std::span<const RatioFeatures> features, std::span<const double> labels) {
  if (features.size() != labels.size()) fail(Errc::LengthMismatch, "features and labels differ in length");
  if (features.empty()) fail(Errc::Empty, "no calibration points");
  const auto n = static_cast<double>(features.size());
  double mr = 0.0, ml = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    mr += features[i].ratio;
    ml += labels[i];
  }
  mr /= n;
  ml /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    sxx += (features[i].ratio - mr) * (features[i].ratio - mr);
    sxy += (features[i].ratio - mr) * (labels[i] - ml);
  }
  const bool all_equal = std::all_of(features.begin(), features.end(),
                                     [&](const RatioFeatures& f) { return f.ratio == features[0].ratio; });
  if (all_equal || !(sxx > 0.0)) fail(Errc::RankDeficient, "all ratios are equal");
  CalibrationFit fit;
  fit.model.b = -sxy / sxx;
  fit.model.a = ml + fit.model.b * mr;
  fit.n = features.size();
  double se = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const double r = labels[i] - fit.model.spo2_for(features[i].ratio);
    se += r * r;
  }
  fit.fit_rmse = std::sqrt(se / n);
  return fit;
}

inline double predict_ror(const CalibrationModel& cal, const RatioFeatures& f) {
  return std::clamp(cal.spo2_for(f.ratio), kSpo2Min, kSpo2Max);
}

inline std::vector<double> predict_ror(const CalibrationModel& cal, std::span<const RatioFeatures> features) {
  std::vector<double> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(predict_ror(cal, f));
  return out;
}

inline json to_json(const CalibrationFit& fit) {
  return json{{"a", fit.model.a}, {"b", fit.model.b}, {"fit_rmse", fit.fit_rmse}, {"n", fit.n}};
}

inline CalibrationFit fit_from_json(const json& j) {
  try {
    CalibrationFit fit;
    fit.model.a = j.at("a").get<double>();
    fit.model.b = j.at("b").get<double>();
    fit.fit_rmse = j.value("fit_rmse", 0.0);
    fit.n = j.value("n", std::size_t{0});
    return fit;
  } catch (const json::exception& e) {
    fail(Errc::ConfigInvalid, std::string("calibration: ") + e.what());
  }
}

}  // namespace oxipipe::ror
