#pragma once

// Layer-wise relevance propagation (epsilon rule) and first-layer channel
// weight profiles.

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "oxipipe/cnn.hpp"
#include "oxipipe/dsp.hpp"
#include "oxipipe/error.hpp"
#include "oxipipe/frameio.hpp"

namespace oxipipe::explain {

using json = nlohmann::json;
using cnn::CnnModel;

inline constexpr double kDefaultEpsilon = 1e-9;
inline constexpr double kBlowupLimit = 1e12;

struct RelevanceMap {
  std::size_t window_len = 0;
  std::vector<double> relevance;  // stream-major, kStreams x window_len
  std::array<double, dsp::kStreams> stream_totals{};
  std::array<double, kChannels> channel_totals{};
  double prediction = 0.0;
  double bias_absorbed = 0.0;   // signed relevance kept by biases
  double bias_magnitude = 0.0;  // sum of |relevance| kept by biases
  double epsilon = 0.0;

  double input_total() const {
    double s = 0.0;
    for (double v : stream_totals) s += v;
    return s;
  }
};

namespace detail {

inline double stabilize(double z, double eps) { return z + eps * (z >= 0.0 ? 1.0 : -1.0); }

inline void check_blowup(std::span<const double> r, std::size_t layer) {
  for (double v : r) {
    if (!(std::abs(v) <= kBlowupLimit))
      fail(Errc::NumericalBlowup, "relevance magnitude " + std::to_string(v) + " at layer " + std::to_string(layer));
  }
}

}  // namespace detail

/// Epsilon-rule LRP of the model output for one window. Relevance taken up by
/// biases stays there and is reported in bias_absorbed.
inline RelevanceMap lrp(const CnnModel& model, std::span<const double> window, double epsilon = kDefaultEpsilon) {
  if (!(epsilon >= 0.0)) fail(Errc::ConfigInvalid, "epsilon must be >= 0");
  if (model.input.channels != dsp::kStreams)
    fail(Errc::ShapeMismatch, "relevance maps need a 9-stream model input");
  cnn::ForwardCache cache;
  RelevanceMap map;
  map.prediction = cnn::forward(model, window, cache);
  map.epsilon = epsilon;
  map.window_len = model.input.length;

  std::vector<double> r_out{map.prediction};
  std::vector<double> r_in;
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    const auto in_shape = cache.shapes[i];
    const auto out_shape = cache.shapes[i + 1];
    const auto& a = cache.acts[i];
    const auto& z = cache.acts[i + 1];
    r_in.assign(in_shape.size(), 0.0);
    std::visit(cnn::overloaded{
                   [&](const cnn::Conv1d& c) {
                     const auto& p = model.params[i];
                     for (std::size_t f = 0; f < c.out_filters; ++f) {
                       for (std::size_t t = 0; t < out_shape.length; ++t) {
                         const std::size_t j = f * out_shape.length + t;
                         const double den = detail::stabilize(z[j], epsilon);
                         if (den == 0.0) continue;
                         const double scale = r_out[j] / den;
                         const double kept = p.bias[f] * scale;
                         map.bias_absorbed += kept;
                         map.bias_magnitude += std::abs(kept);
                         for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
                           const double* w = p.weight.data() + (f * c.in_channels + ch) * c.filter_length;
                           const std::size_t base = ch * in_shape.length + t * c.stride;
                           for (std::size_t k = 0; k < c.filter_length; ++k) r_in[base + k] += a[base + k] * w[k] * scale;
                         }
                       }
                     }
                   },
                   [&](const cnn::Dense& d) {
                     const auto& p = model.params[i];
                     for (std::size_t o = 0; o < d.out_dim; ++o) {
                       const double den = detail::stabilize(z[o], epsilon);
                       if (den == 0.0) continue;
                       const double scale = r_out[o] / den;
                       const double kept = p.bias[o] * scale;
                       map.bias_absorbed += kept;
                       map.bias_magnitude += std::abs(kept);
                       const double* w = p.weight.data() + o * d.in_dim;
                       for (std::size_t k = 0; k < d.in_dim; ++k) r_in[k] += a[k] * w[k] * scale;
                     }
                   },
                   [&](const cnn::MaxPool1d&) {
                     const auto& arg = cache.argmax[i];
                     for (std::size_t k = 0; k < r_out.size(); ++k) r_in[arg[k]] += r_out[k];
                   },
                   [&](const auto&) { r_in = r_out; }},
               model.layers[i]);
    detail::check_blowup(r_in, i);
    std::swap(r_in, r_out);
  }
  map.relevance = std::move(r_out);
  for (std::size_t s = 0; s < dsp::kStreams; ++s) {
    double total = 0.0;
    for (std::size_t t = 0; t < map.window_len; ++t) total += map.relevance[s * map.window_len + t];
    map.stream_totals[s] = total;
    map.channel_totals[s % kChannels] += total;
  }
  return map;
}

/// CSV rows `window,stream,sample_index,relevance`; each window ends with a
/// `bias` row holding the bias-absorbed share, so a window's rows sum to its
/// prediction.
inline std::string relevance_csv(std::span<const RelevanceMap> maps) {
  std::string out = "window,stream,sample_index,relevance\n";
  for (std::size_t w = 0; w < maps.size(); ++w) {
    const auto& m = maps[w];
    const std::string prefix = std::to_string(w) + ",";
    for (std::size_t s = 0; s < dsp::kStreams; ++s) {
      for (std::size_t t = 0; t < m.window_len; ++t) {
        out += prefix;
        out += dsp::kStreamNames[s];
        out += "," + std::to_string(t) + "," + frameio::format_double(m.relevance[s * m.window_len + t]) + "\n";
      }
    }
    out += prefix + "bias,," + frameio::format_double(m.bias_absorbed) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channel aggregates

struct ChannelShares {
  std::array<double, kChannels> scores{};
  std::array<double, kChannels> shares{};
  std::array<double, dsp::kStreams> stream_scores{};
};

namespace detail {

inline ChannelShares from_streams(const std::array<double, dsp::kStreams>& streams) {
  ChannelShares out;
  out.stream_scores = streams;
  double total = 0.0;
  for (std::size_t s = 0; s < dsp::kStreams; ++s) {
    out.scores[s % kChannels] += streams[s];
    total += streams[s];
  }
  for (std::size_t c = 0; c < kChannels; ++c)
    out.shares[c] = total > 0.0 ? out.scores[c] / total : 1.0 / static_cast<double>(kChannels);
  return out;
}

}  // namespace detail

/// Sum of |w| over filters and taps of the first conv layer, per input stream,
/// folded into color channels.
inline ChannelShares channel_weight_profile(const CnnModel& model) {
  const auto* conv = model.layers.empty() ? nullptr : std::get_if<cnn::Conv1d>(&model.layers.front());
  if (!conv || conv->in_channels != dsp::kStreams)
    fail(Errc::WrongFirstLayer, "first layer must be a conv1d over the 9 input streams");
  std::array<double, dsp::kStreams> streams{};
  const auto& w = model.params.front().weight;
  for (std::size_t f = 0; f < conv->out_filters; ++f) {
    for (std::size_t s = 0; s < dsp::kStreams; ++s) {
      for (std::size_t k = 0; k < conv->filter_length; ++k)
        streams[s] += std::abs(w[(f * conv->in_channels + s) * conv->filter_length + k]);
    }
  }
  return detail::from_streams(streams);
}

/// Mean over windows of per-stream sum of |relevance|, folded into channels.
inline ChannelShares channel_relevance_report(const CnnModel& model, const dsp::WindowedDataset& ds,
                                              double epsilon = kDefaultEpsilon) {
  if (ds.size() == 0) fail(Errc::Empty, "relevance report needs at least one window");
  std::array<double, dsp::kStreams> streams{};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    RelevanceMap m;
    try {
      m = lrp(model, ds.window(i), epsilon);
    } catch (const Error& e) {
      e.rethrow_with("window " + std::to_string(i));
    }
    for (std::size_t s = 0; s < dsp::kStreams; ++s) {
      double acc = 0.0;
      for (std::size_t t = 0; t < m.window_len; ++t) acc += std::abs(m.relevance[s * m.window_len + t]);
      streams[s] += acc;
    }
  }
  for (double& v : streams) v /= static_cast<double>(ds.size());
  return detail::from_streams(streams);
}

inline json to_json(const ChannelShares& c) {
  json streams = json::object();
  for (std::size_t s = 0; s < dsp::kStreams; ++s) streams[std::string(dsp::kStreamNames[s])] = c.stream_scores[s];
  return json{{"channels", {"red", "green", "blue"}},
              {"scores", c.scores},
              {"shares", c.shares},
              {"stream_scores", std::move(streams)}};
}

}  // namespace oxipipe::explain
