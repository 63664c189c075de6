#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "oxipipe/cnn.hpp"
#include "oxipipe/random.hpp"

namespace testing_helpers {

using namespace oxipipe;

// Amplitude of the `hz` component of x by projection onto sin/cos. Exact for
// windows holding an integer number of periods.
inline double tone_amplitude(const std::vector<double>& x, double fps, double hz, std::size_t from = 0,
                             std::size_t to = 0) {
  if (to == 0) to = x.size();
  double c = 0.0, s = 0.0;
  for (std::size_t i = from; i < to; ++i) {
    const double ph = 2.0 * std::numbers::pi * hz * static_cast<double>(i) / fps;
    c += x[i] * std::cos(ph);
    s += x[i] * std::sin(ph);
  }
  const double n = static_cast<double>(to - from);
  return 2.0 * std::sqrt(c * c + s * s) / n;
}

inline std::vector<double> sine(std::size_t n, double fps, double hz, double amp = 1.0, double offset = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = offset + amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / fps);
  return x;
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Small random model covering every layer kind: conv -> relu -> pool -> conv
// -> relu -> pool -> dropout -> flatten -> dense -> relu -> dense.
inline cnn::CnnModel random_model(Rng& rng, std::uint64_t seed, bool random_biases = true) {
  const std::size_t in_ch = 1 + rng.index(3);
  const std::size_t len = 28 + rng.index(12);
  const std::size_t f1 = 2 + rng.index(3), k1 = 2 + rng.index(4);
  const std::size_t f2 = 2 + rng.index(3), k2 = 2 + rng.index(3);
  const std::size_t pool = 2;
  const std::size_t stride1 = 1 + rng.index(2);
  std::vector<cnn::LayerSpec> layers;
  cnn::Shape s{in_ch, len};
  auto push = [&](cnn::LayerSpec spec) {
    s = cnn::output_shape(spec, s);
    layers.push_back(spec);
  };
  push(cnn::Conv1d{in_ch, f1, k1, stride1});
  push(cnn::Relu{});
  push(cnn::MaxPool1d{pool});
  push(cnn::Conv1d{f1, f2, k2, 1});
  push(cnn::Relu{});
  push(cnn::MaxPool1d{pool});
  push(cnn::Dropout{0.25});
  push(cnn::Flatten{});
  const std::size_t hidden = 3 + rng.index(4);
  push(cnn::Dense{s.channels, hidden});
  push(cnn::Relu{});
  push(cnn::Dense{hidden, 1});
  auto m = cnn::make_model(layers, {in_ch, len}, seed);
  if (random_biases) {
    for (auto& p : m.params) {
      for (double& b : p.bias) b = rng.uniform(-0.2, 0.2);
    }
  }
  return m;
}

// Straightforward reference forward pass written independently of the
// library's loops (explicit index arithmetic, no caching).
inline double naive_forward(const cnn::CnnModel& m, const std::vector<double>& input) {
  std::vector<double> x = input;
  std::size_t ch = m.input.channels, len = m.input.length;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& spec = m.layers[i];
    const auto& p = m.params[i];
    std::vector<double> y;
    if (auto* c = std::get_if<cnn::Conv1d>(&spec)) {
      const std::size_t out_len = (len - c->filter_length) / c->stride + 1;
      y.assign(c->out_filters * out_len, 0.0);
      for (std::size_t f = 0; f < c->out_filters; ++f)
        for (std::size_t t = 0; t < out_len; ++t) {
          double acc = p.bias[f];
          for (std::size_t q = 0; q < c->in_channels; ++q)
            for (std::size_t k = 0; k < c->filter_length; ++k)
              acc += p.weight[f * c->in_channels * c->filter_length + q * c->filter_length + k] *
                     x[q * len + t * c->stride + k];
          y[f * out_len + t] = acc;
        }
      ch = c->out_filters;
      len = out_len;
    } else if (auto* mp = std::get_if<cnn::MaxPool1d>(&spec)) {
      const std::size_t out_len = len / mp->pool_len;
      y.assign(ch * out_len, 0.0);
      for (std::size_t q = 0; q < ch; ++q)
        for (std::size_t t = 0; t < out_len; ++t) {
          double best = -INFINITY;
          for (std::size_t k = 0; k < mp->pool_len; ++k) best = std::max(best, x[q * len + t * mp->pool_len + k]);
          y[q * out_len + t] = best;
        }
      len = out_len;
    } else if (auto* d = std::get_if<cnn::Dense>(&spec)) {
      y.assign(d->out_dim, 0.0);
      for (std::size_t o = 0; o < d->out_dim; ++o) {
        double acc = p.bias[o];
        for (std::size_t k = 0; k < d->in_dim; ++k) acc += p.weight[o * d->in_dim + k] * x[k];
        y[o] = acc;
      }
      ch = d->out_dim;
      len = 1;
    } else if (std::holds_alternative<cnn::Relu>(spec)) {
      y = x;
      for (double& v : y) v = v > 0 ? v : 0;
    } else if (std::holds_alternative<cnn::Flatten>(spec)) {
      y = x;
      ch = ch * len;
      len = 1;
    } else {
      y = x;
    }
    x = std::move(y);
  }
  return x[0];
}

}  // namespace testing_helpers
