#pragma once

// Experiment protocol: breathing-cycle splits, multi-instance training, grid
// search over architecture/window settings, and condition comparisons.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "oxipipe/cnn.hpp"
#include "oxipipe/dsp.hpp"
#include "oxipipe/error.hpp"
#include "oxipipe/ror.hpp"
#include "oxipipe/synth.hpp"

namespace oxipipe::harness {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Work queue

/// Worker count from OXIPIPE_THREADS; 1 when unset.
inline std::size_t threads_from_env() {
  const char* v = std::getenv("OXIPIPE_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) fail(Errc::ConfigInvalid, std::string("OXIPIPE_THREADS='") + v + "'");
  return static_cast<std::size_t>(n);
}

/// Runs job(i) for i in [0, n) on up to `workers` threads. Jobs must write
/// only to their own slot; results are therefore independent of scheduling.
template <class Job>
void run_jobs(std::size_t n, std::size_t workers, Job&& job) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) job(i);
    });
  }
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Splits

struct SplitPlan {
  std::vector<std::size_t> train, val, test;
  std::vector<std::size_t> boundaries;
  std::size_t gap = 0;  // samples between the last train window end and the first val window start, at least
};

/// Windows lying wholly inside cycle 1 or 2 go to train, wholly inside cycle 3
/// to validation; windows crossing any boundary and cycles past the third are
/// dropped. Test windows come from a separate recording.
inline SplitPlan split_by_cycles(const dsp::WindowedDataset& ds, std::span<const std::size_t> boundaries) {
  if (boundaries.size() < 4)
    fail(Errc::TooFewCycles, "need at least 3 breathing cycles, have " +
                                 std::to_string(boundaries.empty() ? 0 : boundaries.size() - 1));
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (boundaries[i] <= boundaries[i - 1]) fail(Errc::TooFewCycles, "cycle boundaries must increase");
  }
  SplitPlan plan;
  plan.boundaries.assign(boundaries.begin(), boundaries.end());
  for (std::size_t w = 0; w < ds.size(); ++w) {
    const auto span = ds.spans[w];
    for (std::size_t c = 0; c < 3; ++c) {
      if (span.start >= boundaries[c] && span.end <= boundaries[c + 1]) {
        (c < 2 ? plan.train : plan.val).push_back(w);
        break;
      }
    }
  }
  if (plan.train.empty()) fail(Errc::EmptyPartition, "no window fits inside cycles 1-2");
  if (plan.val.empty()) fail(Errc::EmptyPartition, "no window fits inside cycle 3");
  std::size_t last_train_end = 0;
  for (auto w : plan.train) last_train_end = std::max(last_train_end, ds.spans[w].end);
  plan.gap = ds.spans[plan.val.front()].start - std::min(last_train_end, ds.spans[plan.val.front()].start);
  return plan;
}

/// True when no train window shares a sample with any val window.
inline bool spans_disjoint(const dsp::WindowedDataset& ds, const SplitPlan& plan) {
  for (auto t : plan.train) {
    for (auto v : plan.val) {
      if (ds.spans[t].start < ds.spans[v].end && ds.spans[v].start < ds.spans[t].end) return false;
    }
  }
  return true;
}

struct ExperimentData {
  dsp::WindowedDataset train, val, test;
};

inline ExperimentData prepare_data(const ColorSignal& train_recording, const ColorSignal& test_recording,
                                   const dsp::WindowOptions& opts) {
  if (!train_recording.spo2 || !test_recording.spo2)
    fail(Errc::Empty, "training and test recordings need ground-truth SpO2");
  const auto all = dsp::make_windows(train_recording, opts);
  const auto plan = split_by_cycles(all, train_recording.cycle_boundaries);
  ExperimentData d{all.subset(plan.train), all.subset(plan.val), dsp::make_windows(test_recording, opts)};
  return d;
}

// ---------------------------------------------------------------------------
// Configuration

enum class Estimator { ror, cnn };

inline std::string_view to_string(Estimator e) { return e == Estimator::ror ? "ror" : "cnn"; }

inline Estimator estimator_from_string(std::string_view s) {
  if (s == "ror") return Estimator::ror;
  if (s == "cnn") return Estimator::cnn;
  fail(Errc::ConfigInvalid, "unknown estimator '" + std::string(s) + "'");
}

struct PipelineConfig {
  dsp::WindowOptions windows{};
  cnn::ArchConfig arch{};
  cnn::TrainConfig train{};
  std::size_t instances = 5;
  bool follow_paper_selection = false;  // pick the instance with the highest validation RMSE
  ror::ChannelPair pair = ror::ChannelPair::red_blue;
  double lrp_epsilon = 1e-9;
};

inline json to_json(const dsp::WindowOptions& w) {
  return json{{"window_s", w.window_s},
              {"stride_s", w.stride_s},
              {"normalization", dsp::to_string(w.normalization)},
              {"band_low_hz", w.filters.band_low_hz},
              {"band_high_hz", w.filters.band_high_hz},
              {"bias_cutoff_hz", w.filters.bias_cutoff_hz}};
}

inline dsp::WindowOptions window_options_from_json(const json& j, dsp::WindowOptions w = {}) {
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "window_s") w.window_s = value.get<double>();
      else if (key == "stride_s") w.stride_s = value.get<double>();
      else if (key == "normalization") w.normalization = dsp::normalization_from_string(value.get<std::string>());
      else if (key == "band_low_hz") w.filters.band_low_hz = value.get<double>();
      else if (key == "band_high_hz") w.filters.band_high_hz = value.get<double>();
      else if (key == "bias_cutoff_hz") w.filters.bias_cutoff_hz = value.get<double>();
      else fail(Errc::ConfigInvalid, "unknown window key '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(Errc::ConfigInvalid, std::string("window options: ") + e.what());
  }
  if (!(w.window_s > 0.0 && w.stride_s > 0.0)) fail(Errc::ConfigInvalid, "window_s and stride_s must be positive");
  return w;
}

inline json to_json(const PipelineConfig& c) {
  return json{{"windows", to_json(c.windows)},
              {"arch", cnn::to_json(c.arch)},
              {"train", cnn::to_json(c.train)},
              {"instances", c.instances},
              {"follow_paper_selection", c.follow_paper_selection},
              {"channel_pair", ror::to_string(c.pair)},
              {"lrp_epsilon", c.lrp_epsilon}};
}

inline PipelineConfig pipeline_config_from_json(const json& j, PipelineConfig c = {}) {
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "windows") c.windows = window_options_from_json(value, c.windows);
      else if (key == "arch") c.arch = cnn::arch_from_json(value);
      else if (key == "train") c.train = cnn::train_config_from_json(value, c.train);
      else if (key == "instances") c.instances = value.get<std::size_t>();
      else if (key == "follow_paper_selection") c.follow_paper_selection = value.get<bool>();
      else if (key == "channel_pair") c.pair = ror::channel_pair_from_string(value.get<std::string>());
      else if (key == "lrp_epsilon") c.lrp_epsilon = value.get<double>();
      else fail(Errc::ConfigInvalid, "unknown pipeline key '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(Errc::ConfigInvalid, std::string("pipeline config: ") + e.what());
  }
  if (c.instances == 0) fail(Errc::ConfigInvalid, "instances must be >= 1");
  return c;
}

// ---------------------------------------------------------------------------
// Multi-instance training

struct InstanceResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double val_rmse = std::numeric_limits<double>::quiet_NaN();
  double val_mae = std::numeric_limits<double>::quiet_NaN();
  std::size_t best_epoch = 0;
};

struct InstanceRun {
  std::vector<InstanceResult> table;
  std::optional<std::size_t> selected;
  cnn::TrainResult best;  // training result of the selected instance
};

/// Index of the instance to keep: lowest val RMSE (or highest when following
/// the literal selection rule); ties go to the earlier instance.
inline std::optional<std::size_t> select_instance(std::span<const InstanceResult> table, bool highest = false) {
  std::optional<std::size_t> pick;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!table[i].ok) continue;
    if (!pick || (highest ? table[i].val_rmse > table[*pick].val_rmse : table[i].val_rmse < table[*pick].val_rmse))
      pick = i;
  }
  return pick;
}

inline cnn::TrainResult train_instance(const ExperimentData& data, const PipelineConfig& cfg, std::uint64_t seed) {
  auto model = cnn::make_model(cfg.arch, data.train.window_len, seed);
  auto tc = cfg.train;
  tc.seed = seed;
  return cnn::train(std::move(model), data.train, &data.val, tc);
}

inline InstanceResult summarize_instance(const cnn::TrainResult& r, const ExperimentData& data, std::uint64_t seed) {
  InstanceResult row;
  row.seed = seed;
  row.ok = true;
  row.val_rmse = r.best_val_rmse;
  row.val_mae = cnn::mae(cnn::predict(r.model, data.val), data.val.labels);
  row.best_epoch = r.best_epoch;
  return row;
}

/// Trains one model per seed; failures are recorded without stopping the rest.
inline InstanceRun run_instances(const ExperimentData& data, const PipelineConfig& cfg,
                                 std::span<const std::uint64_t> seeds, std::size_t workers = 1) {
  if (seeds.empty()) fail(Errc::ConfigInvalid, "need at least one instance");
  std::vector<std::optional<cnn::TrainResult>> results(seeds.size());
  InstanceRun run;
  run.table.resize(seeds.size());
  run_jobs(seeds.size(), workers, [&](std::size_t i) {
    try {
      results[i] = train_instance(data, cfg, seeds[i]);
      run.table[i] = summarize_instance(*results[i], data, seeds[i]);
    } catch (const Error& e) {
      run.table[i] = InstanceResult{seeds[i], false, e.what()};
    }
  });
  run.selected = select_instance(run.table, cfg.follow_paper_selection);
  if (!run.selected) fail(Errc::DivergenceDetected, "every instance failed; first: " + run.table.front().error);
  run.best = std::move(*results[*run.selected]);
  return run;
}

inline std::vector<std::uint64_t> instance_seeds(std::uint64_t master, std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = master + i;
  return s;
}

// ---------------------------------------------------------------------------
// Ratio-of-ratios baseline on prepared data

struct RorResult {
  ror::CalibrationFit fit;
  double test_rmse = 0.0;
  double test_mae = 0.0;
  std::vector<double> predictions;
};

inline RorResult evaluate_ror(const ExperimentData& data, ror::ChannelPair pair) {
  RorResult r;
  r.fit = ror::fit_calibration(ror::dataset_features(data.train, pair), data.train.labels);
  r.predictions = ror::predict_ror(r.fit.model, ror::dataset_features(data.test, pair));
  r.test_rmse = cnn::rmse(r.predictions, data.test.labels);
  r.test_mae = cnn::mae(r.predictions, data.test.labels);
  return r;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridPoint {
  std::size_t conv_layers = 2;
  double window_s = 10.0;
  std::size_t filters = 16;
  std::size_t filter_length = 15;

  auto operator<=>(const GridPoint&) const = default;
};

inline json to_json(const GridPoint& p) {
  return json{{"conv_layers", p.conv_layers},
              {"window_s", p.window_s},
              {"filters", p.filters},
              {"filter_length", p.filter_length}};
}

struct GridSpec {
  std::vector<std::size_t> conv_layers{2};
  std::vector<double> window_s{10.0};
  std::vector<std::size_t> filters{16};
  std::vector<std::size_t> filter_length{15};
  std::size_t limit = 36;

  /// Cartesian product in lexicographic order of sorted, de-duplicated axes.
  std::vector<GridPoint> points() const {
    auto sorted = [](auto v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
      return v;
    };
    const auto cl = sorted(conv_layers);
    const auto ws = sorted(window_s);
    const auto fs = sorted(filters);
    const auto fl = sorted(filter_length);
    if (cl.empty() || ws.empty() || fs.empty() || fl.empty()) fail(Errc::ConfigInvalid, "grid axes must be nonempty");
    const std::size_t total = cl.size() * ws.size() * fs.size() * fl.size();
    if (total > limit)
      fail(Errc::GridTooLarge, std::to_string(total) + " grid points exceed the limit of " + std::to_string(limit));
    std::vector<GridPoint> out;
    for (auto a : cl)
      for (auto b : ws)
        for (auto c : fs)
          for (auto d : fl) out.push_back({a, b, c, d});
    return out;
  }
};

inline json to_json(const GridSpec& g) {
  return json{{"conv_layers", g.conv_layers},
              {"window_s", g.window_s},
              {"filters", g.filters},
              {"filter_length", g.filter_length},
              {"limit", g.limit}};
}

inline GridSpec grid_from_json(const json& j) {
  GridSpec g;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "conv_layers") g.conv_layers = value.get<std::vector<std::size_t>>();
      else if (key == "window_s") g.window_s = value.get<std::vector<double>>();
      else if (key == "filters") g.filters = value.get<std::vector<std::size_t>>();
      else if (key == "filter_length") g.filter_length = value.get<std::vector<std::size_t>>();
      else if (key == "limit") g.limit = value.get<std::size_t>();
      else fail(Errc::ConfigInvalid, "unknown grid key '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(Errc::ConfigInvalid, std::string("grid: ") + e.what());
  }
  return g;
}

struct GridPointResult {
  GridPoint point;
  bool ok = false;
  std::string error;
  double val_rmse = std::numeric_limits<double>::quiet_NaN();
  double val_mae = std::numeric_limits<double>::quiet_NaN();
  std::vector<InstanceResult> instances;
  std::optional<std::size_t> selected;
};

struct ExperimentReport {
  std::uint64_t master_seed = 0;
  PipelineConfig config;
  GridSpec grid;
  std::vector<GridPointResult> points;
  std::optional<std::size_t> winner;
  cnn::TrainResult winner_training;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  double test_rmse = 0.0, test_mae = 0.0;
  std::vector<double> test_predictions;
  std::vector<double> test_labels;
  RorResult ror;

  const cnn::CnnModel& model() const { return winner_training.model; }
};

inline PipelineConfig config_for(const PipelineConfig& base, const GridPoint& p) {
  PipelineConfig c = base;
  c.arch.conv_layers = p.conv_layers;
  c.arch.filters = p.filters;
  c.arch.filter_length = p.filter_length;
  c.windows.window_s = p.window_s;
  return c;
}

/// Evaluates every grid point with `cfg.instances` seeded instances, ranks by
/// validation RMSE (ties: lexicographically first point) and scores only the
/// winner on the test recording. Pure in (recordings, cfg, grid, master).
inline ExperimentReport grid_search(const GridSpec& grid, const ColorSignal& train_recording,
                                    const ColorSignal& test_recording, const PipelineConfig& cfg,
                                    std::uint64_t master, std::size_t workers = 1) {
  ExperimentReport report;
  report.master_seed = master;
  report.config = cfg;
  report.grid = grid;
  const auto points = grid.points();
  report.points.resize(points.size());

  std::map<double, ExperimentData> data;
  std::map<double, std::string> data_error;
  for (const auto& p : points) {
    if (data.count(p.window_s) || data_error.count(p.window_s)) continue;
    try {
      data.emplace(p.window_s, prepare_data(train_recording, test_recording, config_for(cfg, p).windows));
    } catch (const Error& e) {
      data_error.emplace(p.window_s, e.what());
    }
  }

  const auto seeds = instance_seeds(master, cfg.instances);
  const std::size_t n_jobs = points.size() * seeds.size();
  std::vector<std::optional<cnn::TrainResult>> results(n_jobs);
  std::vector<InstanceResult> rows(n_jobs);
  run_jobs(n_jobs, workers, [&](std::size_t job) {
    const auto& p = points[job / seeds.size()];
    const auto seed = seeds[job % seeds.size()];
    auto it = data.find(p.window_s);
    if (it == data.end()) {
      rows[job] = InstanceResult{seed, false, data_error.at(p.window_s)};
      return;
    }
    try {
      results[job] = train_instance(it->second, config_for(cfg, p), seed);
      rows[job] = summarize_instance(*results[job], it->second, seed);
    } catch (const Error& e) {
      rows[job] = InstanceResult{seed, false, e.what()};
    }
  });

  for (std::size_t k = 0; k < points.size(); ++k) {
    auto& pr = report.points[k];
    pr.point = points[k];
    pr.instances.assign(rows.begin() + static_cast<std::ptrdiff_t>(k * seeds.size()),
                        rows.begin() + static_cast<std::ptrdiff_t>((k + 1) * seeds.size()));
    pr.selected = select_instance(pr.instances, cfg.follow_paper_selection);
    if (pr.selected) {
      pr.ok = true;
      pr.val_rmse = pr.instances[*pr.selected].val_rmse;
      pr.val_mae = pr.instances[*pr.selected].val_mae;
      if (!report.winner || pr.val_rmse < report.points[*report.winner].val_rmse) report.winner = k;
    } else {
      pr.error = pr.instances.front().error;
    }
  }
  if (!report.winner) fail(Errc::DivergenceDetected, "no grid point trained successfully: " + report.points[0].error);

  const std::size_t w = *report.winner;
  const auto& d = data.at(points[w].window_s);
  report.winner_training = std::move(*results[w * seeds.size() + *report.points[w].selected]);
  report.n_train = d.train.size();
  report.n_val = d.val.size();
  report.n_test = d.test.size();
  report.test_predictions = cnn::predict(report.winner_training.model, d.test);
  report.test_labels = d.test.labels;
  report.test_rmse = cnn::rmse(report.test_predictions, d.test.labels);
  report.test_mae = cnn::mae(report.test_predictions, d.test.labels);
  report.ror = evaluate_ror(d, cfg.pair);

  auto& meta = report.winner_training.model.meta;
  meta["windows"] = to_json(config_for(cfg, points[w]).windows);
  meta["arch"] = cnn::to_json(config_for(cfg, points[w]).arch);
  meta["fps"] = d.train.fps;
  return report;
}

inline json to_json(const InstanceResult& r) {
  json j{{"seed", r.seed}, {"ok", r.ok}};
  if (r.ok) {
    j["val_rmse"] = r.val_rmse;
    j["val_mae"] = r.val_mae;
    j["best_epoch"] = r.best_epoch;
  } else {
    j["error"] = r.error;
  }
  return j;
}

inline json to_json(const ExperimentReport& r) {
  json points = json::array();
  for (const auto& p : r.points) {
    json j{{"config", to_json(p.point)}, {"ok", p.ok}};
    if (p.ok) {
      j["val_rmse"] = p.val_rmse;
      j["val_mae"] = p.val_mae;
      j["selected_instance"] = *p.selected;
    } else {
      j["error"] = p.error;
    }
    json inst = json::array();
    for (const auto& i : p.instances) inst.push_back(to_json(i));
    j["instances"] = std::move(inst);
    points.push_back(std::move(j));
  }
  return json{{"master_seed", r.master_seed},
              {"config", to_json(r.config)},
              {"grid", to_json(r.grid)},
              {"points", std::move(points)},
              {"selected", to_json(r.points[*r.winner].point)},
              {"selected_index", *r.winner},
              {"windows", {{"train", r.n_train}, {"val", r.n_val}, {"test", r.n_test}}},
              {"test",
               {{"cnn", {{"rmse", r.test_rmse}, {"mae", r.test_mae}}},
                {"ror", {{"rmse", r.ror.test_rmse}, {"mae", r.ror.test_mae}, {"calibration", ror::to_json(r.ror.fit)}}}}}};
}

inline std::string grid_csv(const ExperimentReport& r) {
  std::string out = "conv_layers,window_s,filters,filter_length,ok,val_rmse,val_mae\n";
  for (const auto& p : r.points) {
    out += std::to_string(p.point.conv_layers) + "," + frameio::format_double(p.point.window_s) + "," +
           std::to_string(p.point.filters) + "," + std::to_string(p.point.filter_length) + "," +
           (p.ok ? "1," + frameio::format_double(p.val_rmse) + "," + frameio::format_double(p.val_mae) : "0,,") + "\n";
  }
  return out;
}

inline std::string instances_csv(const ExperimentReport& r) {
  std::string out = "point,seed,ok,val_rmse,val_mae,best_epoch\n";
  for (std::size_t k = 0; k < r.points.size(); ++k) {
    for (const auto& i : r.points[k].instances) {
      out += std::to_string(k) + "," + std::to_string(i.seed) + "," +
             (i.ok ? "1," + frameio::format_double(i.val_rmse) + "," + frameio::format_double(i.val_mae) + "," +
                         std::to_string(i.best_epoch)
                   : "0,,,") +
             "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Condition comparison

struct RecordingPair {
  ColorSignal train, test;
  std::uint64_t train_seed = 0, test_seed = 0;
};

/// Training and test recordings for one subject, seeded independently.
inline RecordingPair synth_pair(const synth::SubjectProfile& profile, const synth::PhysioTrace& physio, double fps,
                                std::uint64_t train_seed, std::uint64_t test_seed) {
  return {synth::generate_color_signal(profile, physio, fps, train_seed),
          synth::generate_color_signal(profile, physio, fps, test_seed), train_seed, test_seed};
}

inline RecordingPair synth_pair(const synth::SubjectProfile& profile, const synth::PhysioTrace& physio, double fps,
                                std::uint64_t master) {
  return synth_pair(profile, physio, fps, derive_seed(master, 100), derive_seed(master, 101));
}

struct CompareConfig {
  std::vector<synth::SubjectProfile> profiles;
  synth::PhysioTrace physio = synth::PhysioTrace::breathing();
  double fps = 30.0;
  std::size_t seeds = 10;
  Estimator estimator = Estimator::ror;
  PipelineConfig pipeline{};
};

struct ConditionRow {
  std::size_t seed_index = 0;
  std::size_t profile_index = 0;
  std::uint64_t train_seed = 0, test_seed = 0;
  bool ok = false;
  std::string error;
  double test_rmse = std::numeric_limits<double>::quiet_NaN();
  double test_mae = std::numeric_limits<double>::quiet_NaN();
};

struct ConditionReport {
  std::uint64_t master_seed = 0;
  std::string factor;  // "none" when all profiles are identical
  std::vector<std::string> labels;
  Estimator estimator = Estimator::ror;
  std::vector<ConditionRow> rows;           // seed-major
  std::vector<double> mean_rmse;            // per profile
  std::vector<std::size_t> not_worse_than_first;  // seeds where profile k RMSE <= profile 0 RMSE

  const ConditionRow& row(std::size_t seed, std::size_t profile) const { return rows[seed * labels.size() + profile]; }
};

/// The single profile field that varies across `profiles`, "none" if they are
/// identical; ConfoundedFactors if more than one varies.
inline std::string swept_factor(std::span<const synth::SubjectProfile> profiles) {
  std::set<std::string> differing;
  const json first = synth::to_json(profiles.front());
  for (const auto& p : profiles.subspan(1)) {
    const json j = synth::to_json(p);
    for (const auto& [key, value] : first.items()) {
      if (j.at(key) != value) differing.insert(key);
    }
  }
  if (differing.size() > 1) {
    std::string names;
    for (const auto& d : differing) names += (names.empty() ? "" : ", ") + d;
    fail(Errc::ConfoundedFactors, "profiles differ in " + names);
  }
  return differing.empty() ? "none" : *differing.begin();
}

inline ConditionRow evaluate_condition(const RecordingPair& rec, const PipelineConfig& cfg, Estimator est,
                                       std::uint64_t instance_master) {
  ConditionRow row;
  row.train_seed = rec.train_seed;
  row.test_seed = rec.test_seed;
  try {
    const auto data = prepare_data(rec.train, rec.test, cfg.windows);
    if (est == Estimator::ror) {
      const auto r = evaluate_ror(data, cfg.pair);
      row.test_rmse = r.test_rmse;
      row.test_mae = r.test_mae;
    } else {
      const auto seeds = instance_seeds(instance_master, cfg.instances);
      const auto run = run_instances(data, cfg, seeds);
      const auto preds = cnn::predict(run.best.model, data.test);
      row.test_rmse = cnn::rmse(preds, data.test.labels);
      row.test_mae = cnn::mae(preds, data.test.labels);
    }
    row.ok = true;
  } catch (const Error& e) {
    row.error = e.what();
  }
  return row;
}

/// Per-seed, per-profile test RMSE. Each (seed, profile) cell gets its own
/// recordings, derived from (master, seed index, profile index).
inline ConditionReport compare_conditions(const CompareConfig& cfg, std::uint64_t master, std::size_t workers = 1) {
  if (cfg.profiles.size() < 2) fail(Errc::ConfigInvalid, "need at least two profiles to compare");
  if (cfg.seeds == 0) fail(Errc::ConfigInvalid, "need at least one seed");
  for (const auto& p : cfg.profiles) p.validate();
  ConditionReport rep;
  rep.master_seed = master;
  rep.estimator = cfg.estimator;
  rep.factor = swept_factor(cfg.profiles);
  for (std::size_t k = 0; k < cfg.profiles.size(); ++k) {
    if (rep.factor == "none") {
      rep.labels.push_back("profile" + std::to_string(k));
    } else {
      const auto v = synth::to_json(cfg.profiles[k]).at(rep.factor);
      auto text = v.is_string() ? v.get<std::string>() : v.dump();
      std::replace(text.begin(), text.end(), ',', ';');
      rep.labels.push_back(rep.factor + "=" + text);
    }
  }
  const std::size_t np = cfg.profiles.size();
  rep.rows.resize(cfg.seeds * np);
  run_jobs(rep.rows.size(), workers, [&](std::size_t job) {
    const std::size_t s = job / np, k = job % np;
    const std::uint64_t cell = derive_seed(derive_seed(master, s), k);
    const auto rec = synth_pair(cfg.profiles[k], cfg.physio, cfg.fps, cell);
    auto row = evaluate_condition(rec, cfg.pipeline, cfg.estimator, derive_seed(cell, 200));
    row.seed_index = s;
    row.profile_index = k;
    rep.rows[job] = std::move(row);
  });
  rep.mean_rmse.assign(np, 0.0);
  rep.not_worse_than_first.assign(np, 0);
  for (std::size_t k = 0; k < np; ++k) {
    std::size_t n = 0;
    for (std::size_t s = 0; s < cfg.seeds; ++s) {
      const auto& r = rep.row(s, k);
      if (!r.ok) continue;
      rep.mean_rmse[k] += r.test_rmse;
      ++n;
      const auto& ref = rep.row(s, 0);
      if (ref.ok && r.test_rmse <= ref.test_rmse) ++rep.not_worse_than_first[k];
    }
    rep.mean_rmse[k] = n ? rep.mean_rmse[k] / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  }
  return rep;
}

inline json to_json(const ConditionReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json j{{"seed_index", row.seed_index},
           {"profile", r.labels[row.profile_index]},
           {"train_seed", row.train_seed},
           {"test_seed", row.test_seed},
           {"ok", row.ok}};
    if (row.ok) {
      j["test_rmse"] = row.test_rmse;
      j["test_mae"] = row.test_mae;
    } else {
      j["error"] = row.error;
    }
    rows.push_back(std::move(j));
  }
  json summary = json::array();
  for (std::size_t k = 0; k < r.labels.size(); ++k)
    summary.push_back({{"profile", r.labels[k]},
                       {"mean_test_rmse", r.mean_rmse[k]},
                       {"seeds_not_worse_than_first", r.not_worse_than_first[k]}});
  return json{{"master_seed", r.master_seed},
              {"factor", r.factor},
              {"estimator", to_string(r.estimator)},
              {"summary", std::move(summary)},
              {"rows", std::move(rows)}};
}

inline std::string conditions_csv(const ConditionReport& r) {
  std::string out = "seed_index,profile,train_seed,test_seed,test_rmse,test_mae\n";
  for (const auto& row : r.rows) {
    out += std::to_string(row.seed_index) + "," + r.labels[row.profile_index] + "," + std::to_string(row.train_seed) +
           "," + std::to_string(row.test_seed) + "," +
           (row.ok ? frameio::format_double(row.test_rmse) + "," + frameio::format_double(row.test_mae) : ",") + "\n";
  }
  return out;
}

}  // namespace oxipipe::harness
