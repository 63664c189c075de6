#pragma once

// 1-D convolutional regressor over windowed 9-stream blocks: layer set,
// forward/backward passes, training loop, bootstrap oversampling, metrics and
// JSON persistence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "oxipipe/dsp.hpp"
#include "oxipipe/error.hpp"
#include "oxipipe/random.hpp"

namespace oxipipe::cnn {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Layers

struct Conv1d {
  std::size_t in_channels = 0;
  std::size_t out_filters = 0;
  std::size_t filter_length = 0;
  std::size_t stride = 1;
  bool operator==(const Conv1d&) const = default;
};

struct MaxPool1d {
  std::size_t pool_len = 2;
  bool operator==(const MaxPool1d&) const = default;
};

struct Dropout {
  double rate = 0.0;
  bool operator==(const Dropout&) const = default;
};

struct Flatten {
  bool operator==(const Flatten&) const = default;
};

struct Dense {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  bool operator==(const Dense&) const = default;
};

struct Relu {
  bool operator==(const Relu&) const = default;
};

using LayerSpec = std::variant<Conv1d, MaxPool1d, Dropout, Flatten, Dense, Relu>;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline std::string_view kind_name(const LayerSpec& spec) {
  return std::visit(overloaded{[](const Conv1d&) { return std::string_view("conv1d"); },
                               [](const MaxPool1d&) { return std::string_view("maxpool1d"); },
                               [](const Dropout&) { return std::string_view("dropout"); },
                               [](const Flatten&) { return std::string_view("flatten"); },
                               [](const Dense&) { return std::string_view("dense"); },
                               [](const Relu&) { return std::string_view("relu"); }},
                    spec);
}

// Activations are (channels x length), channel-major. Dense layers work on
// (dim x 1).
struct Shape {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::size_t size() const { return channels * length; }
  bool operator==(const Shape&) const = default;
};

inline std::string to_string(Shape s) { return std::to_string(s.channels) + "x" + std::to_string(s.length); }

inline std::size_t conv_output_length(std::size_t in_len, std::size_t filter_length, std::size_t stride) {
  return (in_len - filter_length) / stride + 1;
}

inline Shape output_shape(const LayerSpec& spec, Shape in) {
  auto mismatch = [&](const std::string& msg) -> Shape {
    fail(Errc::ShapeMismatch, std::string(kind_name(spec)) + " on " + to_string(in) + ": " + msg);
  };
  return std::visit(
      overloaded{
          [&](const Conv1d& c) -> Shape {
            if (c.in_channels == 0 || c.out_filters == 0 || c.filter_length == 0 || c.stride == 0)
              return mismatch("zero-sized parameter");
            if (in.channels != c.in_channels) return mismatch("expects " + std::to_string(c.in_channels) + " channels");
            if (in.length < c.filter_length) return mismatch("input shorter than filter");
            return {c.out_filters, conv_output_length(in.length, c.filter_length, c.stride)};
          },
          [&](const MaxPool1d& p) -> Shape {
            if (p.pool_len == 0) return mismatch("zero pool length");
            if (in.length < p.pool_len) return mismatch("input shorter than pool");
            return {in.channels, in.length / p.pool_len};
          },
          [&](const Dropout& d) -> Shape {
            if (!(d.rate >= 0.0 && d.rate < 1.0)) return mismatch("rate outside [0,1)");
            return in;
          },
          [&](const Flatten&) -> Shape { return {in.size(), 1}; },
          [&](const Dense& d) -> Shape {
            if (d.in_dim == 0 || d.out_dim == 0) return mismatch("zero-sized parameter");
            if (in.length != 1 || in.channels != d.in_dim)
              return mismatch("expects a flat input of " + std::to_string(d.in_dim));
            return {d.out_dim, 1};
          },
          [&](const Relu&) -> Shape { return in; }},
      spec);
}

inline std::size_t weight_count(const LayerSpec& spec) {
  if (const auto* c = std::get_if<Conv1d>(&spec)) return c->out_filters * c->in_channels * c->filter_length;
  if (const auto* d = std::get_if<Dense>(&spec)) return d->out_dim * d->in_dim;
  return 0;
}

inline std::size_t bias_count(const LayerSpec& spec) {
  if (const auto* c = std::get_if<Conv1d>(&spec)) return c->out_filters;
  if (const auto* d = std::get_if<Dense>(&spec)) return d->out_dim;
  return 0;
}

inline std::size_t fan_in(const LayerSpec& spec) {
  if (const auto* c = std::get_if<Conv1d>(&spec)) return c->in_channels * c->filter_length;
  if (const auto* d = std::get_if<Dense>(&spec)) return d->in_dim;
  return 0;
}

// Conv weights are [filter][in_channel][tap]; dense weights are [out][in].
struct ParamBlock {
  std::vector<double> weight;
  std::vector<double> bias;
  bool operator==(const ParamBlock&) const = default;
};

struct CnnModel {
  std::vector<LayerSpec> layers;
  std::vector<ParamBlock> params;  // one per layer, empty for parameter-free layers
  Shape input{dsp::kStreams, 0};
  std::uint64_t rng_seed = 0;
  json meta = json::object();  // free-form pipeline settings stored with the model

  bool operator==(const CnnModel&) const = default;

  /// Shapes of the input and of every layer output; throws ShapeMismatch.
  std::vector<Shape> shapes() const {
    std::vector<Shape> out{input};
    if (input.size() == 0) fail(Errc::ShapeMismatch, "empty input geometry");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      try {
        out.push_back(output_shape(layers[i], out.back()));
      } catch (const Error& e) {
        e.rethrow_with("layer " + std::to_string(i));
      }
    }
    return out;
  }

  void validate() const {
    const auto s = shapes();
    if (s.back() != Shape{1, 1}) fail(Errc::ShapeMismatch, "network must end in a single scalar");
    if (params.size() != layers.size()) fail(Errc::ShapeMismatch, "parameter list does not match layer list");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (params[i].weight.size() != weight_count(layers[i]) || params[i].bias.size() != bias_count(layers[i]))
        fail(Errc::ShapeMismatch, "layer " + std::to_string(i) + " parameter block has the wrong size");
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.weight.size() + p.bias.size();
    return n;
  }
};

/// He-style uniform init: weights in +-sqrt(6 / fan_in), biases zero.
inline void init_parameters(CnnModel& model, std::uint64_t seed) {
  model.rng_seed = seed;
  Rng rng(seed);
  model.params.assign(model.layers.size(), {});
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& spec = model.layers[i];
    auto& p = model.params[i];
    p.weight.resize(weight_count(spec));
    p.bias.assign(bias_count(spec), 0.0);
    if (p.weight.empty()) continue;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in(spec)));
    for (double& w : p.weight) w = rng.uniform(-bound, bound);
  }
}

inline CnnModel make_model(std::vector<LayerSpec> layers, Shape input, std::uint64_t seed) {
  CnnModel m;
  m.layers = std::move(layers);
  m.input = input;
  init_parameters(m, seed);
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Architecture presets

struct ArchConfig {
  std::size_t conv_layers = 2;
  std::size_t filters = 16;
  std::size_t filter_length = 15;  // first conv; later convs use ceil(0.6 * filter_length)
  std::size_t pool_len = 4;
  double dropout = 0.25;
  std::size_t dense_units = 32;

  bool operator==(const ArchConfig&) const = default;

  std::size_t filter_length_at(std::size_t layer) const {
    if (layer == 0) return filter_length;
    return static_cast<std::size_t>(std::ceil(0.6 * static_cast<double>(filter_length)));
  }

  void validate() const {
    if (conv_layers == 0 || filters == 0 || filter_length == 0 || pool_len == 0 || dense_units == 0)
      fail(Errc::ConfigInvalid, "architecture sizes must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail(Errc::ConfigInvalid, "dropout must be in [0,1)");
  }
};

inline std::vector<LayerSpec> build_layers(const ArchConfig& arch, Shape input) {
  arch.validate();
  std::vector<LayerSpec> layers;
  Shape s = input;
  auto push = [&](LayerSpec spec) {
    s = output_shape(spec, s);
    layers.push_back(spec);
  };
  for (std::size_t i = 0; i < arch.conv_layers; ++i) {
    push(Conv1d{s.channels, arch.filters, arch.filter_length_at(i), 1});
    push(Relu{});
    push(MaxPool1d{arch.pool_len});
  }
  if (arch.dropout > 0.0) push(Dropout{arch.dropout});
  push(Flatten{});
  push(Dense{s.channels, arch.dense_units});
  push(Relu{});
  push(Dense{arch.dense_units, 1});
  return layers;
}

inline CnnModel make_model(const ArchConfig& arch, std::size_t window_len, std::uint64_t seed) {
  const Shape input{dsp::kStreams, window_len};
  return make_model(build_layers(arch, input), input, seed);
}

inline json to_json(const ArchConfig& a) {
  return json{{"conv_layers", a.conv_layers}, {"filters", a.filters},         {"filter_length", a.filter_length},
              {"pool_len", a.pool_len},       {"dropout", a.dropout},         {"dense_units", a.dense_units}};
}

inline ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "conv_layers") a.conv_layers = value.get<std::size_t>();
      else if (key == "filters") a.filters = value.get<std::size_t>();
      else if (key == "filter_length") a.filter_length = value.get<std::size_t>();
      else if (key == "pool_len") a.pool_len = value.get<std::size_t>();
      else if (key == "dropout") a.dropout = value.get<double>();
      else if (key == "dense_units") a.dense_units = value.get<std::size_t>();
      else fail(Errc::ConfigInvalid, "unknown architecture key '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(Errc::ConfigInvalid, std::string("architecture: ") + e.what());
  }
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ForwardCache {
  std::vector<Shape> shapes;                     // shapes[i] = input of layer i
  std::vector<std::vector<double>> acts;         // acts[0] = input, acts[i+1] = output of layer i
  std::vector<std::vector<std::size_t>> argmax;  // maxpool winners, flat input indices
  std::vector<std::vector<double>> masks;        // dropout keep scales (training only)
  std::vector<std::vector<double>> deltas;       // backward workspace

  double output() const { return acts.back()[0]; }
};

namespace detail {

inline void conv_forward(const Conv1d& c, const ParamBlock& p, const double* in, std::size_t in_len, double* out,
                         std::size_t out_len) {
  for (std::size_t f = 0; f < c.out_filters; ++f) {
    double* o = out + f * out_len;
    std::fill(o, o + out_len, p.bias[f]);
    for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
      const double* x = in + ch * in_len;
      const double* w = p.weight.data() + (f * c.in_channels + ch) * c.filter_length;
      for (std::size_t k = 0; k < c.filter_length; ++k) {
        const double wk = w[k];
        if (c.stride == 1) {
          const double* xk = x + k;
          for (std::size_t t = 0; t < out_len; ++t) o[t] += wk * xk[t];
        } else {
          for (std::size_t t = 0; t < out_len; ++t) o[t] += wk * x[t * c.stride + k];
        }
      }
    }
  }
}

inline void dense_forward(const Dense& d, const ParamBlock& p, const double* in, double* out) {
  for (std::size_t o = 0; o < d.out_dim; ++o) {
    const double* w = p.weight.data() + o * d.in_dim;
    double s = p.bias[o];
    for (std::size_t i = 0; i < d.in_dim; ++i) s += w[i] * in[i];
    out[o] = s;
  }
}

}  // namespace detail

/// Runs the network on one window. With `dropout_rng` set, dropout layers draw
/// fresh inverted-dropout masks; otherwise they are the identity.
inline double forward(const CnnModel& model, std::span<const double> input, ForwardCache& cache,
                      Rng* dropout_rng = nullptr) {
  if (cache.shapes.size() != model.layers.size() + 1) cache.shapes = model.shapes();
  if (input.size() != model.input.size())
    fail(Errc::ShapeMismatch, "window has " + std::to_string(input.size()) + " values, model expects " +
                                  std::to_string(model.input.size()));
  const std::size_t n_layers = model.layers.size();
  cache.acts.resize(n_layers + 1);
  cache.argmax.resize(n_layers);
  cache.masks.resize(n_layers);
  cache.acts[0].assign(input.begin(), input.end());
  for (std::size_t i = 0; i < n_layers; ++i) {
    const Shape in_shape = cache.shapes[i];
    const Shape out_shape = cache.shapes[i + 1];
    const auto& in = cache.acts[i];
    auto& out = cache.acts[i + 1];
    out.resize(out_shape.size());
    std::visit(overloaded{
                   [&](const Conv1d& c) {
                     detail::conv_forward(c, model.params[i], in.data(), in_shape.length, out.data(),
                                          out_shape.length);
                   },
                   [&](const MaxPool1d& p) {
                     auto& arg = cache.argmax[i];
                     arg.resize(out.size());
                     for (std::size_t ch = 0; ch < out_shape.channels; ++ch) {
                       for (std::size_t t = 0; t < out_shape.length; ++t) {
                         std::size_t best = ch * in_shape.length + t * p.pool_len;
                         for (std::size_t k = 1; k < p.pool_len; ++k) {
                           const std::size_t idx = ch * in_shape.length + t * p.pool_len + k;
                           if (in[idx] > in[best]) best = idx;
                         }
                         arg[ch * out_shape.length + t] = best;
                         out[ch * out_shape.length + t] = in[best];
                       }
                     }
                   },
                   [&](const Dropout& d) {
                     auto& mask = cache.masks[i];
                     if (dropout_rng && d.rate > 0.0) {
                       mask.resize(in.size());
                       const double keep = 1.0 / (1.0 - d.rate);
                       for (std::size_t k = 0; k < in.size(); ++k) {
                         mask[k] = dropout_rng->uniform() < d.rate ? 0.0 : keep;
                         out[k] = in[k] * mask[k];
                       }
                     } else {
                       mask.clear();
                       std::copy(in.begin(), in.end(), out.begin());
                     }
                   },
                   [&](const Flatten&) { std::copy(in.begin(), in.end(), out.begin()); },
                   [&](const Dense& d) { detail::dense_forward(d, model.params[i], in.data(), out.data()); },
                   [&](const Relu&) {
                     for (std::size_t k = 0; k < in.size(); ++k) out[k] = in[k] > 0.0 ? in[k] : 0.0;
                   }},
               model.layers[i]);
  }
  return cache.output();
}

inline double predict(const CnnModel& model, std::span<const double> input) {
  ForwardCache cache;
  return forward(model, input, cache);
}

/// Flat, equally sized samples with optional labels.
struct SampleView {
  std::span<const double> data;
  std::span<const double> labels;
  std::size_t width = 0;

  std::size_t size() const { return width ? data.size() / width : 0; }
  std::span<const double> sample(std::size_t i) const { return data.subspan(i * width, width); }
};

inline SampleView view(const dsp::WindowedDataset& ds) { return {ds.data, ds.labels, ds.window_size()}; }

inline std::vector<double> predict(const CnnModel& model, const SampleView& samples) {
  ForwardCache cache;
  std::vector<double> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out.push_back(forward(model, samples.sample(i), cache));
  return out;
}

inline std::vector<double> predict(const CnnModel& model, const dsp::WindowedDataset& ds) {
  return predict(model, view(ds));
}

/// Zeroed gradient blocks shaped like the model's parameters.
inline std::vector<ParamBlock> zero_gradients(const CnnModel& model) {
  std::vector<ParamBlock> g(model.params.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i].weight.assign(model.params[i].weight.size(), 0.0);
    g[i].bias.assign(model.params[i].bias.size(), 0.0);
  }
  return g;
}

/// Accumulates scale * d(loss)/d(params) into `grads`, loss = (y - label)^2,
/// using the activations of the preceding forward() call. Returns the loss.
inline double backward(const CnnModel& model, ForwardCache& cache, double label, std::vector<ParamBlock>& grads,
                       double scale = 1.0, std::vector<double>* input_grad = nullptr) {
  const std::size_t n_layers = model.layers.size();
  if (cache.acts.size() != n_layers + 1 || grads.size() != n_layers)
    fail(Errc::ShapeMismatch, "backward needs a forward cache and gradient blocks for this model");
  const double err = cache.output() - label;
  cache.deltas.resize(n_layers + 1);
  cache.deltas[n_layers].assign(1, 2.0 * err * scale);
  for (std::size_t i = n_layers; i-- > 0;) {
    const Shape in_shape = cache.shapes[i];
    const Shape out_shape = cache.shapes[i + 1];
    const auto& in = cache.acts[i];
    const auto& dout = cache.deltas[i + 1];
    auto& din = cache.deltas[i];
    din.assign(in_shape.size(), 0.0);
    std::visit(overloaded{
                   [&](const Conv1d& c) {
                     const auto& w = model.params[i].weight;
                     auto& gw = grads[i].weight;
                     auto& gb = grads[i].bias;
                     const std::size_t out_len = out_shape.length;
                     for (std::size_t f = 0; f < c.out_filters; ++f) {
                       const double* d = dout.data() + f * out_len;
                       gb[f] += std::accumulate(d, d + out_len, 0.0);
                       for (std::size_t ch = 0; ch < c.in_channels; ++ch) {
                         const double* x = in.data() + ch * in_shape.length;
                         double* dx = din.data() + ch * in_shape.length;
                         const std::size_t base = (f * c.in_channels + ch) * c.filter_length;
                         for (std::size_t k = 0; k < c.filter_length; ++k) {
                           const double wk = w[base + k];
                           double acc = 0.0;
                           if (c.stride == 1) {
                             const double* xk = x + k;
                             double* dxk = dx + k;
                             for (std::size_t t = 0; t < out_len; ++t) acc += d[t] * xk[t];
                             for (std::size_t t = 0; t < out_len; ++t) dxk[t] += wk * d[t];
                           } else {
                             for (std::size_t t = 0; t < out_len; ++t) {
                               acc += d[t] * x[t * c.stride + k];
                               dx[t * c.stride + k] += wk * d[t];
                             }
                           }
                           gw[base + k] += acc;
                         }
                       }
                     }
                   },
                   [&](const MaxPool1d&) {
                     const auto& arg = cache.argmax[i];
                     for (std::size_t k = 0; k < dout.size(); ++k) din[arg[k]] += dout[k];
                   },
                   [&](const Dropout&) {
                     const auto& mask = cache.masks[i];
                     for (std::size_t k = 0; k < dout.size(); ++k) din[k] = mask.empty() ? dout[k] : dout[k] * mask[k];
                   },
                   [&](const Flatten&) { std::copy(dout.begin(), dout.end(), din.begin()); },
                   [&](const Dense& dn) {
                     const auto& w = model.params[i].weight;
                     auto& gw = grads[i].weight;
                     auto& gb = grads[i].bias;
                     for (std::size_t o = 0; o < dn.out_dim; ++o) {
                       const double d = dout[o];
                       gb[o] += d;
                       const double* wr = w.data() + o * dn.in_dim;
                       double* gr = gw.data() + o * dn.in_dim;
                       for (std::size_t k = 0; k < dn.in_dim; ++k) {
                         gr[k] += d * in[k];
                         din[k] += wr[k] * d;
                       }
                     }
                   },
                   [&](const Relu&) {
                     for (std::size_t k = 0; k < dout.size(); ++k) din[k] = in[k] > 0.0 ? dout[k] : 0.0;
                   }},
               model.layers[i]);
  }
  if (input_grad) *input_grad = cache.deltas[0];
  return err * err;
}

inline std::vector<ParamBlock> backward(const CnnModel& model, ForwardCache& cache, double label) {
  auto g = zero_gradients(model);
  backward(model, cache, label, g);
  return g;
}

// ---------------------------------------------------------------------------
// Metrics

inline void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(Errc::LengthMismatch, "predictions and labels differ in length");
  if (a.empty()) fail(Errc::Empty, "no predictions");
}

inline double rmse(std::span<const double> predictions, std::span<const double> labels) {
  check_pair(predictions, labels);
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) s += (predictions[i] - labels[i]) * (predictions[i] - labels[i]);
  return std::sqrt(s / static_cast<double>(predictions.size()));
}

inline double mae(std::span<const double> predictions, std::span<const double> labels) {
  check_pair(predictions, labels);
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) s += std::abs(predictions[i] - labels[i]);
  return s / static_cast<double>(predictions.size());
}

// ---------------------------------------------------------------------------
// Bootstrap oversampling

/// Indices into `labels` after balancing 1-point label bins: every original
/// index is kept, then each bin is topped up to the largest bin's count by
/// drawing with replacement. Bins are emitted in ascending label order.
inline std::vector<std::size_t> oversample_indices(std::span<const double> labels, Rng& rng) {
  std::map<long long, std::vector<std::size_t>> bins;
  for (std::size_t i = 0; i < labels.size(); ++i) bins[static_cast<long long>(std::floor(labels[i]))].push_back(i);
  std::size_t largest = 0;
  for (const auto& [_, members] : bins) largest = std::max(largest, members.size());
  std::vector<std::size_t> out;
  out.reserve(bins.size() * largest);
  for (const auto& [_, members] : bins) {
    out.insert(out.end(), members.begin(), members.end());
    for (std::size_t k = members.size(); k < largest; ++k) out.push_back(members[rng.index(members.size())]);
  }
  return out;
}

inline std::vector<std::size_t> oversample_indices(std::span<const double> labels, std::uint64_t seed) {
  Rng rng(seed);
  return oversample_indices(labels, rng);
}

inline dsp::WindowedDataset oversample(const dsp::WindowedDataset& ds, std::uint64_t seed) {
  if (ds.size() == 0) fail(Errc::Empty, "cannot oversample an empty dataset");
  if (!ds.labeled()) fail(Errc::Empty, "oversampling needs labels");
  const auto idx = oversample_indices(ds.labels, seed);
  return ds.subset(idx);
}

// ---------------------------------------------------------------------------
// Training

enum class Optimizer { sgd, adam };

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied to weights only
  std::uint64_t seed = 0;
  bool oversample = true;
  bool init_output_bias = true;  // start the last bias at the mean training label
  bool keep_best = true;         // return the epoch with the lowest validation RMSE

  void validate() const {
    if (epochs == 0 || batch_size == 0 || !(learning_rate > 0.0))
      fail(Errc::ConfigInvalid, "epochs, batch_size and learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_epsilon > 0.0))
      fail(Errc::ConfigInvalid, "invalid adam parameters");
    if (!(weight_decay >= 0.0)) fail(Errc::ConfigInvalid, "weight_decay must be >= 0");
  }
};

inline constexpr double kDivergenceLoss = 1e12;

struct EpochLog {
  std::size_t epoch = 0;
  double train_rmse = 0.0;  // over the epoch's (dropout-active) training passes
  double val_rmse = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  CnnModel model;
  std::vector<EpochLog> trace;
  std::size_t best_epoch = 0;
  double best_val_rmse = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

class Updater {
 public:
  Updater(const TrainConfig& cfg, const CnnModel& model) : cfg_(cfg), m_(zero_gradients(model)), v_(m_) {}

  void step(CnnModel& model, const std::vector<ParamBlock>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      apply(model.params[i].weight, grads[i].weight, m_[i].weight, v_[i].weight, cfg_.weight_decay, bc1, bc2);
      apply(model.params[i].bias, grads[i].bias, m_[i].bias, v_[i].bias, 0.0, bc1, bc2);
    }
  }

 private:
  void apply(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m, std::vector<double>& v,
             double decay, double bc1, double bc2) const {
    const double lr = cfg_.learning_rate;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (decay > 0.0) p[k] -= lr * decay * p[k];
      if (cfg_.optimizer == Optimizer::sgd) {
        p[k] -= lr * g[k];
      } else {
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
        p[k] -= (lr / bc1) * m[k] / (std::sqrt(v[k]) / std::sqrt(bc2) + cfg_.adam_epsilon);
      }
    }
  }

  const TrainConfig& cfg_;
  std::vector<ParamBlock> m_, v_;
  std::uint64_t t_ = 0;
};

inline void check_finite_loss(double loss, std::size_t epoch) {
  if (!std::isfinite(loss) || loss > kDivergenceLoss)
    fail(Errc::DivergenceDetected, "loss " + std::to_string(loss) + " in epoch " + std::to_string(epoch));
}

}  // namespace detail

/// Mini-batch training on the MSE loss. Deterministic for a given model,
/// data and config. `val` may be null, in which case the final epoch is kept.
inline TrainResult train(CnnModel model, const SampleView& data, const SampleView* val, const TrainConfig& cfg) {
  cfg.validate();
  model.validate();
  if (data.size() == 0) fail(Errc::Empty, "empty training set");
  if (data.labels.size() != data.size()) fail(Errc::LengthMismatch, "training set needs one label per sample");
  if (data.width != model.input.size()) fail(Errc::ShapeMismatch, "training samples do not fit the model");
  if (val && (val->size() == 0 || val->labels.size() != val->size()))
    fail(Errc::Empty, "validation set is empty or unlabeled");
  if (val && val->width != model.input.size()) fail(Errc::ShapeMismatch, "validation samples do not fit the model");

  if (cfg.init_output_bias) {
    for (std::size_t i = model.layers.size(); i-- > 0;) {
      if (std::holds_alternative<Dense>(model.layers[i])) {
        const double mean = std::accumulate(data.labels.begin(), data.labels.end(), 0.0) /
                            static_cast<double>(data.labels.size());
        std::fill(model.params[i].bias.begin(), model.params[i].bias.end(), mean);
        break;
      }
    }
  }

  Rng order_rng(derive_seed(cfg.seed, 10));
  Rng dropout_rng(derive_seed(cfg.seed, 11));
  detail::Updater updater(cfg, model);
  ForwardCache cache;
  auto grads = zero_gradients(model);

  TrainResult result;
  result.best_val_rmse = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order;
    if (cfg.oversample) {
      order = oversample_indices(data.labels, order_rng);
    } else {
      order.resize(data.size());
      std::iota(order.begin(), order.end(), 0);
    }
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[order_rng.index(k)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto& g : grads) {
        std::fill(g.weight.begin(), g.weight.end(), 0.0);
        std::fill(g.bias.begin(), g.bias.end(), 0.0);
      }
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        forward(model, data.sample(order[b]), cache, &dropout_rng);
        batch_loss += backward(model, cache, data.labels[order[b]], grads, scale);
      }
      detail::check_finite_loss(batch_loss * scale, epoch);
      epoch_loss += batch_loss;
      updater.step(model, grads);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_rmse = std::sqrt(epoch_loss / static_cast<double>(order.size()));
    if (val) {
      const auto preds = predict(model, *val);
      log.val_rmse = rmse(preds, val->labels);
      detail::check_finite_loss(log.val_rmse, epoch);
      if (!cfg.keep_best || log.val_rmse < result.best_val_rmse) {
        result.best_val_rmse = log.val_rmse;
        result.best_epoch = epoch;
        result.model = model;
      }
    }
    result.trace.push_back(log);
  }
  if (!val) {
    result.model = model;
    result.best_epoch = cfg.epochs - 1;
    result.best_val_rmse = std::numeric_limits<double>::quiet_NaN();
  }
  return result;
}

inline TrainResult train(CnnModel model, const dsp::WindowedDataset& data, const dsp::WindowedDataset* val,
                         const TrainConfig& cfg) {
  const auto tv = view(data);
  if (!val) return train(std::move(model), tv, nullptr, cfg);
  const auto vv = view(*val);
  return train(std::move(model), tv, &vv, cfg);
}

inline std::string loss_trace_csv(const std::vector<EpochLog>& trace) {
  std::string out = "epoch,train_rmse,val_rmse\n";
  for (const auto& e : trace) {
    out += std::to_string(e.epoch) + "," + frameio::format_double(e.train_rmse) + "," +
           (std::isnan(e.val_rmse) ? std::string() : frameio::format_double(e.val_rmse)) + "\n";
  }
  return out;
}

inline std::string_view to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }

inline json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"optimizer", to_string(c.optimizer)},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_epsilon", c.adam_epsilon},
              {"weight_decay", c.weight_decay},
              {"seed", c.seed},
              {"oversample", c.oversample},
              {"init_output_bias", c.init_output_bias},
              {"keep_best", c.keep_best}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "optimizer") {
        const auto s = value.get<std::string>();
        if (s == "adam") c.optimizer = Optimizer::adam;
        else if (s == "sgd") c.optimizer = Optimizer::sgd;
        else fail(Errc::ConfigInvalid, "unknown optimizer '" + s + "'");
      } else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "adam_epsilon") c.adam_epsilon = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "oversample") c.oversample = value.get<bool>();
      else if (key == "init_output_bias") c.init_output_bias = value.get<bool>();
      else if (key == "keep_best") c.keep_best = value.get<bool>();
      else fail(Errc::ConfigInvalid, "unknown training key '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(Errc::ConfigInvalid, std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Persistence. Doubles are written as shortest round-trip decimals, so
// save/load is exact.

inline constexpr int kModelFormatVersion = 1;

inline json layer_json(const LayerSpec& spec, const ParamBlock& p) {
  json j{{"kind", kind_name(spec)}};
  std::visit(overloaded{[&](const Conv1d& c) {
                          j["in_channels"] = c.in_channels;
                          j["out_filters"] = c.out_filters;
                          j["filter_length"] = c.filter_length;
                          j["stride"] = c.stride;
                        },
                        [&](const MaxPool1d& m) { j["pool_len"] = m.pool_len; },
                        [&](const Dropout& d) { j["rate"] = d.rate; },
                        [&](const Flatten&) {},
                        [&](const Dense& d) {
                          j["in_dim"] = d.in_dim;
                          j["out_dim"] = d.out_dim;
                        },
                        [&](const Relu&) {}},
             spec);
  if (weight_count(spec) > 0) {
    j["weight"] = p.weight;
    j["bias"] = p.bias;
  }
  return j;
}

inline json save_model(const CnnModel& model) {
  model.validate();
  json layers = json::array();
  for (std::size_t i = 0; i < model.layers.size(); ++i) layers.push_back(layer_json(model.layers[i], model.params[i]));
  return json{{"format", "oxipipe-cnn"},
              {"version", kModelFormatVersion},
              {"input", {{"channels", model.input.channels}, {"length", model.input.length}}},
              {"rng_seed", model.rng_seed},
              {"meta", model.meta},
              {"layers", std::move(layers)}};
}

inline CnnModel load_model(const json& doc) {
  try {
    if (doc.at("format") != "oxipipe-cnn") fail(Errc::ConfigInvalid, "not a model document");
    if (doc.at("version").get<int>() != kModelFormatVersion)
      fail(Errc::SchemaVersionMismatch, "model version " + doc.at("version").dump() + ", expected " +
                                            std::to_string(kModelFormatVersion));
    CnnModel m;
    m.input = {doc.at("input").at("channels").get<std::size_t>(), doc.at("input").at("length").get<std::size_t>()};
    m.rng_seed = doc.at("rng_seed").get<std::uint64_t>();
    m.meta = doc.value("meta", json::object());
    for (const auto& l : doc.at("layers")) {
      const auto kind = l.at("kind").get<std::string>();
      LayerSpec spec;
      if (kind == "conv1d")
        spec = Conv1d{l.at("in_channels").get<std::size_t>(), l.at("out_filters").get<std::size_t>(),
                      l.at("filter_length").get<std::size_t>(), l.at("stride").get<std::size_t>()};
      else if (kind == "maxpool1d") spec = MaxPool1d{l.at("pool_len").get<std::size_t>()};
      else if (kind == "dropout") spec = Dropout{l.at("rate").get<double>()};
      else if (kind == "flatten") spec = Flatten{};
      else if (kind == "dense") spec = Dense{l.at("in_dim").get<std::size_t>(), l.at("out_dim").get<std::size_t>()};
      else if (kind == "relu") spec = Relu{};
      else fail(Errc::ConfigInvalid, "unknown layer kind '" + kind + "'");
      ParamBlock p;
      if (l.contains("weight")) {
        p.weight = l.at("weight").get<std::vector<double>>();
        p.bias = l.at("bias").get<std::vector<double>>();
      }
      m.layers.push_back(spec);
      m.params.push_back(std::move(p));
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    fail(Errc::ConfigInvalid, std::string("model document: ") + e.what());
  }
}

inline std::string model_text(const CnnModel& model) { return save_model(model).dump(1) + "\n"; }

}  // namespace oxipipe::cnn
