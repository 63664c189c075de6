// oxipipe command-line entry point: synth, pipeline and plot subcommands.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oxipipe/oxipipe.hpp"

namespace fs = std::filesystem;
using namespace oxipipe;
using json = nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::string out = "out";
  std::string mode;
  std::string model;
  std::string input;
  std::string test_input;
  std::uint64_t seed = 1;
  bool follow_paper = false;
};

class RunLog {
 public:
  RunLog(std::string subcommand, const fs::path& out) : subcommand_(std::move(subcommand)), out_(out) {
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) fail(Errc::IoFailure, "cannot create " + out_.string() + ": " + ec.message());
  }

  void text(const std::string& name, std::string_view body) {
    frameio::write_text_atomic(out_ / name, body);
    outputs_.push_back(name);
  }
  void bytes(const std::string& name, std::span<const std::uint8_t> body) {
    frameio::write_file_atomic(out_ / name, body);
    outputs_.push_back(name);
  }
  void json_file(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }

  json inputs = json::array();
  json config = json::object();
  std::string mode;

  void finish(std::uint64_t seed, std::chrono::steady_clock::time_point start) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json m{{"subcommand", subcommand_}, {"config", config},   {"inputs", inputs},
           {"outputs", outputs_},       {"master_seed", seed}, {"tool_version", kVersion},
           {"wall_clock_s", secs}};
    if (!mode.empty()) m["mode"] = mode;
    frameio::write_text_atomic(out_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string subcommand_;
  fs::path out_;
  std::vector<std::string> outputs_;
};

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    e.rethrow_with(name);
  }
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  const auto text = frameio::read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(Errc::ConfigInvalid, path + ": " + e.what());
  }
  if (!j.is_object()) fail(Errc::ConfigInvalid, path + ": top level must be an object");
  for (const auto& [key, _] : j.items()) {
    if (key != "synth" && key != "pipeline" && key != "grid" && key != "compare" && key != "explain")
      fail(Errc::ConfigInvalid, path + ": unknown section '" + key + "'");
  }
  return j;
}

// ---------------------------------------------------------------------------
// synth

struct SynthSettings {
  synth::SubjectProfile profile;
  synth::PhysioTrace physio = synth::PhysioTrace::breathing();
  synth::CalibrationModel calibration;
  double fps = 30.0;
  synth::Geometry geometry;
  double video_s = 10.0;
};

SynthSettings synth_settings(const json& j) {
  SynthSettings s;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "profile") s.profile = synth::profile_from_json(value);
      else if (key == "physio") s.physio = synth::physio_from_json(value);
      else if (key == "calibration") s.calibration = synth::calibration_from_json(value);
      else if (key == "fps") s.fps = value.get<double>();
      else if (key == "width") s.geometry.width = value.get<std::uint32_t>();
      else if (key == "height") s.geometry.height = value.get<std::uint32_t>();
      else if (key == "video_s") s.video_s = value.get<double>();
      else fail(Errc::ConfigInvalid, "unknown synth key '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(Errc::ConfigInvalid, std::string("synth: ") + e.what());
  }
  if (!(s.fps > 0.0 && s.video_s > 0.0)) fail(Errc::ConfigInvalid, "fps and video_s must be positive");
  s.calibration.validate();
  return s;
}

json to_json(const SynthSettings& s) {
  return json{{"profile", synth::to_json(s.profile)},
              {"physio", synth::to_json(s.physio)},
              {"calibration", {{"a", s.calibration.a}, {"b", s.calibration.b}}},
              {"fps", s.fps},
              {"width", s.geometry.width},
              {"height", s.geometry.height},
              {"video_s", s.video_s}};
}

int cmd_synth(const Options& opt) {
  const auto start = std::chrono::steady_clock::now();
  const json cfg = load_config(opt.config);
  const auto s = synth_settings(cfg.value("synth", json::object()));
  RunLog log("synth", opt.out);
  log.config = to_json(s);

  const auto video = stage("synth", [&] {
    return synth::generate_frames(s.profile, s.physio.truncated(s.video_s), s.fps, s.geometry, opt.seed, {},
                                  s.calibration);
  });
  log.bytes("video.rvf", frameio::write_rvf(video.frames));
  auto extracted = stage("roi", [&] { return roi::extract_color_signal(video.frames); });
  extracted.spo2 = video.truth.signal.spo2;
  log.text("video_signal.csv", frameio::write_signal_csv(extracted));

  const auto pair = stage("synth", [&] {
    return harness::synth_pair(s.profile, s.physio, s.fps, derive_seed(opt.seed, 100), derive_seed(opt.seed, 101));
  });
  log.text("train.csv", frameio::write_signal_csv(pair.train));
  log.text("test.csv", frameio::write_signal_csv(pair.test));
  log.finish(opt.seed, start);
  return 0;
}

// ---------------------------------------------------------------------------
// pipeline

ColorSignal load_signal(const std::string& path) {
  if (path.empty()) fail(Errc::ConfigInvalid, "missing input path");
  if (fs::path(path).extension() == ".rvf") {
    const auto bytes = frameio::read_file(path);
    const auto frames = stage("frameio", [&] { return frameio::read_rvf(bytes); });
    return stage("roi", [&] { return roi::extract_color_signal(frames); });
  }
  const auto text = frameio::read_text(path);
  return stage("frameio", [&] { return frameio::read_signal_csv(text); });
}

std::string predictions_csv(const dsp::WindowedDataset& ds, std::span<const double> cnn_pred,
                            std::span<const double> ror_pred = {}) {
  std::string out = "window,start,end";
  if (ds.labeled()) out += ",label";
  out += ",cnn";
  if (!ror_pred.empty()) out += ",ror";
  out += "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out += std::to_string(i) + "," + std::to_string(ds.spans[i].start) + "," + std::to_string(ds.spans[i].end);
    if (ds.labeled()) out += "," + frameio::format_double(ds.labels[i]);
    out += "," + frameio::format_double(cnn_pred[i]);
    if (!ror_pred.empty()) out += "," + frameio::format_double(ror_pred[i]);
    out += "\n";
  }
  return out;
}

std::string loss_svg(const std::vector<cnn::EpochLog>& trace) {
  std::vector<svg::Series> series(2);
  series[0].name = "train_rmse";
  series[1].name = "val_rmse";
  for (const auto& e : trace) {
    for (auto& s : series) s.x.push_back(static_cast<double>(e.epoch));
    series[0].y.push_back(e.train_rmse);
    series[1].y.push_back(e.val_rmse);
  }
  return svg::line_plot("Training loss", "epoch", "RMSE (SpO2 %)", series);
}

dsp::WindowOptions model_windows(const cnn::CnnModel& model, const harness::PipelineConfig& cfg) {
  if (model.meta.contains("windows")) return harness::window_options_from_json(model.meta.at("windows"));
  return cfg.windows;
}

void pipeline_fit(const Options& opt, const json& cfg_json, const harness::PipelineConfig& cfg, RunLog& log) {
  if (opt.test_input.empty()) fail(Errc::ConfigInvalid, opt.mode + " mode needs --test-input");
  const auto train_sig = load_signal(opt.input);
  const auto test_sig = load_signal(opt.test_input);
  log.inputs = {opt.input, opt.test_input};
  harness::GridSpec grid;
  if (opt.mode == "gridsearch") {
    grid = harness::grid_from_json(cfg_json.value("grid", json::object()));
  } else {
    grid.conv_layers = {cfg.arch.conv_layers};
    grid.window_s = {cfg.windows.window_s};
    grid.filters = {cfg.arch.filters};
    grid.filter_length = {cfg.arch.filter_length};
  }
  const auto workers = harness::threads_from_env();
  const auto report =
      stage("harness", [&] { return harness::grid_search(grid, train_sig, test_sig, cfg, opt.seed, workers); });
  log.text("model.json", cnn::model_text(report.model()));
  log.text("loss.csv", cnn::loss_trace_csv(report.winner_training.trace));
  log.text("loss.svg", loss_svg(report.winner_training.trace));
  log.json_file("report.json", harness::to_json(report));
  log.text("grid.csv", harness::grid_csv(report));
  log.text("instances.csv", harness::instances_csv(report));
  const auto test_windows = dsp::make_windows(test_sig, model_windows(report.model(), cfg));
  log.text("test_predictions.csv", predictions_csv(test_windows, report.test_predictions, report.ror.predictions));
}

cnn::CnnModel load_model_file(const std::string& path) {
  if (path.empty()) fail(Errc::ConfigInvalid, "this mode needs --model");
  const auto text = frameio::read_text(path);
  return stage("cnn", [&] {
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      fail(Errc::ConfigInvalid, path + ": " + e.what());
    }
    return cnn::load_model(doc);
  });
}

void pipeline_eval(const Options& opt, const harness::PipelineConfig& cfg, RunLog& log) {
  const auto model = load_model_file(opt.model);
  const auto sig = load_signal(opt.input);
  log.inputs = {opt.input, opt.model};
  const auto ds = stage("dsp", [&] { return dsp::make_windows(sig, model_windows(model, cfg)); });
  const auto preds = stage("cnn", [&] { return cnn::predict(model, ds); });
  log.text("predictions.csv", predictions_csv(ds, preds));
  json summary{{"windows", ds.size()}};
  std::vector<svg::Series> series(1);
  series[0].name = "cnn";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    series[0].x.push_back(static_cast<double>(ds.spans[i].start) / ds.fps);
    series[0].y.push_back(preds[i]);
  }
  if (ds.labeled()) {
    summary["rmse"] = cnn::rmse(preds, ds.labels);
    summary["mae"] = cnn::mae(preds, ds.labels);
    series.push_back({"label", series[0].x, ds.labels});
  }
  log.json_file("eval.json", summary);
  log.text("predictions.svg", svg::line_plot("Predicted SpO2", "window start (s)", "SpO2 (%)", series));
}

void pipeline_explain(const Options& opt, const json& cfg_json, const harness::PipelineConfig& cfg, RunLog& log) {
  const auto model = load_model_file(opt.model);
  const auto sig = load_signal(opt.input);
  log.inputs = {opt.input, opt.model};
  std::size_t max_windows = 8;
  try {
    const auto ex = cfg_json.value("explain", json::object());
    for (const auto& [key, value] : ex.items()) {
      if (key == "windows") max_windows = value.get<std::size_t>();
      else fail(Errc::ConfigInvalid, "unknown explain key '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(Errc::ConfigInvalid, std::string("explain: ") + e.what());
  }
  const auto ds = stage("dsp", [&] { return dsp::make_windows(sig, model_windows(model, cfg)); });
  std::vector<explain::RelevanceMap> maps;
  json windows = json::array();
  stage("explain", [&] {
    for (std::size_t i = 0; i < std::min(max_windows, ds.size()); ++i) {
      try {
        maps.push_back(explain::lrp(model, ds.window(i), cfg.lrp_epsilon));
      } catch (const Error& e) {
        e.rethrow_with("window " + std::to_string(i));
      }
      const auto& m = maps.back();
      windows.push_back({{"window", i},
                         {"prediction", m.prediction},
                         {"input_relevance", m.input_total()},
                         {"bias_absorbed", m.bias_absorbed},
                         {"bias_magnitude", m.bias_magnitude},
                         {"channel_totals", m.channel_totals}});
    }
    return 0;
  });
  const auto weights = stage("explain", [&] { return explain::channel_weight_profile(model); });
  const auto relevance = stage("explain", [&] { return explain::channel_relevance_report(model, ds, cfg.lrp_epsilon); });
  log.text("relevance.csv", explain::relevance_csv(maps));
  log.json_file("explain.json", {{"epsilon", cfg.lrp_epsilon}, {"windows", windows}});
  log.json_file("channel_weights.json", explain::to_json(weights));
  log.json_file("channel_relevance.json", explain::to_json(relevance));
  const std::vector<std::string> channels{"red", "green", "blue"};
  log.text("channel_weights.svg",
           svg::bar_chart("First-layer weight share", channels, weights.shares, "share of |w|"));
  log.text("channel_relevance.svg",
           svg::bar_chart("Relevance share", channels, relevance.shares, "share of |relevance|"));
  if (!maps.empty()) {
    const std::vector<std::string> streams(dsp::kStreamNames.begin(), dsp::kStreamNames.end());
    log.text("relevance.svg", svg::heatmap("Relevance, window 0", streams, maps[0].window_len, maps[0].relevance));
  }
}

harness::CompareConfig compare_settings(const json& j, const harness::PipelineConfig& pipeline) {
  harness::CompareConfig c;
  c.pipeline = pipeline;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "profiles") {
        for (const auto& p : value) c.profiles.push_back(synth::profile_from_json(p));
      } else if (key == "physio") c.physio = synth::physio_from_json(value);
      else if (key == "fps") c.fps = value.get<double>();
      else if (key == "seeds") c.seeds = value.get<std::size_t>();
      else if (key == "estimator") c.estimator = harness::estimator_from_string(value.get<std::string>());
      else fail(Errc::ConfigInvalid, "unknown compare key '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(Errc::ConfigInvalid, std::string("compare: ") + e.what());
  }
  if (c.profiles.empty()) {
    synth::SubjectProfile back, palm;
    palm.hand_side = synth::HandSide::palm;
    c.profiles = {palm, back};
  }
  return c;
}

void pipeline_compare(const Options& opt, const json& cfg_json, const harness::PipelineConfig& cfg, RunLog& log) {
  const auto cc = compare_settings(cfg_json.value("compare", json::object()), cfg);
  json resolved{{"profiles", json::array()},
                {"physio", synth::to_json(cc.physio)},
                {"fps", cc.fps},
                {"seeds", cc.seeds},
                {"estimator", harness::to_string(cc.estimator)}};
  for (const auto& p : cc.profiles) resolved["profiles"].push_back(synth::to_json(p));
  log.config["compare"] = resolved;
  const auto workers = harness::threads_from_env();
  const auto rep = stage("harness", [&] { return harness::compare_conditions(cc, opt.seed, workers); });
  log.json_file("conditions.json", harness::to_json(rep));
  log.text("conditions.csv", harness::conditions_csv(rep));
  log.text("conditions.svg", svg::bar_chart("Mean test RMSE by condition", rep.labels, rep.mean_rmse, "RMSE"));
}

int cmd_pipeline(const Options& opt) {
  const auto start = std::chrono::steady_clock::now();
  const json cfg_json = load_config(opt.config);
  auto cfg = harness::pipeline_config_from_json(cfg_json.value("pipeline", json::object()));
  if (opt.follow_paper) cfg.follow_paper_selection = true;
  const auto& m = opt.mode;
  if (m != "train" && m != "eval" && m != "explain" && m != "gridsearch" && m != "compare")
    fail(Errc::ConfigInvalid, "unknown mode '" + m + "'");
  if ((m == "eval" || m == "explain") && opt.model.empty()) fail(Errc::ConfigInvalid, m + " mode needs --model");
  if (m != "compare" && opt.input.empty()) fail(Errc::ConfigInvalid, m + " mode needs --input");

  RunLog log("pipeline", opt.out);
  log.mode = m;
  log.config = {{"pipeline", harness::to_json(cfg)}};
  if (m == "gridsearch") log.config["grid"] = harness::to_json(harness::grid_from_json(cfg_json.value("grid", json::object())));
  if (m == "train" || m == "gridsearch") pipeline_fit(opt, cfg_json, cfg, log);
  else if (m == "eval") pipeline_eval(opt, cfg, log);
  else if (m == "explain") pipeline_explain(opt, cfg_json, cfg, log);
  else pipeline_compare(opt, cfg_json, cfg, log);
  log.finish(opt.seed, start);
  return 0;
}

// ---------------------------------------------------------------------------
// plot

std::vector<std::vector<std::string>> read_csv_cells(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) {
      std::vector<std::string> cells;
      std::size_t s = 0;
      while (true) {
        auto c = line.find(',', s);
        cells.push_back(line.substr(s, c == std::string::npos ? std::string::npos : c - s));
        if (c == std::string::npos) break;
        s = c + 1;
      }
      rows.push_back(std::move(cells));
    }
    pos = end + 1;
  }
  return rows;
}

double cell_value(const std::string& cell) {
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size())
    fail(Errc::UnknownColumns, "non-numeric cell '" + cell + "'");
  return v;
}

std::string plot_csv(const std::string& text, const std::string& title) {
  const auto rows = read_csv_cells(text);
  if (rows.size() < 2 || rows[0].size() < 2) fail(Errc::UnknownColumns, "CSV needs a header and at least one row");
  const auto& header = rows[0];
  if (header == std::vector<std::string>{"window", "stream", "sample_index", "relevance"}) {
    std::vector<std::string> streams(dsp::kStreamNames.begin(), dsp::kStreamNames.end());
    std::vector<double> grid;
    std::size_t cols = 0;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (rows[r].size() != 4) fail(Errc::UnknownColumns, "relevance row with wrong field count");
      if (rows[r][0] != "0" || rows[r][1] == "bias") continue;
      grid.push_back(cell_value(rows[r][3]));
      cols = std::max(cols, static_cast<std::size_t>(cell_value(rows[r][2])) + 1);
    }
    if (grid.size() != cols * streams.size()) fail(Errc::UnknownColumns, "relevance CSV is not a full 9-stream grid");
    return svg::heatmap(title + ", window 0", streams, cols, grid);
  }
  std::vector<svg::Series> series;
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (header[c].empty()) fail(Errc::UnknownColumns, "empty column name");
    series.push_back({header[c], {}, {}});
  }
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != header.size()) fail(Errc::UnknownColumns, "row " + std::to_string(r) + " has wrong width");
    const double x = cell_value(rows[r][0]);
    for (std::size_t c = 1; c < header.size(); ++c) {
      series[c - 1].x.push_back(x);
      series[c - 1].y.push_back(cell_value(rows[r][c]));
    }
  }
  return svg::line_plot(title, header[0], "value", series);
}

std::string plot_json(const std::string& text, const std::string& title) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(Errc::UnknownColumns, std::string("not JSON: ") + e.what());
  }
  try {
    if (j.contains("shares")) {
      const auto labels = j.value("channels", std::vector<std::string>{"red", "green", "blue"});
      const auto shares = j.at("shares").get<std::vector<double>>();
      return svg::bar_chart(title, labels, shares, "share");
    }
    if (j.contains("summary")) {
      std::vector<std::string> labels;
      std::vector<double> values;
      for (const auto& row : j.at("summary")) {
        labels.push_back(row.at("profile").get<std::string>());
        values.push_back(row.at("mean_test_rmse").get<double>());
      }
      return svg::bar_chart(title, labels, values, "mean test RMSE");
    }
  } catch (const json::exception& e) {
    fail(Errc::UnknownColumns, e.what());
  }
  fail(Errc::UnknownColumns, "JSON has neither 'shares' nor 'summary'");
}

int cmd_plot(const Options& opt) {
  const auto start = std::chrono::steady_clock::now();
  if (opt.input.empty()) fail(Errc::ConfigInvalid, "plot needs --input");
  const fs::path in(opt.input);
  const auto text = frameio::read_text(in);
  const auto title = in.stem().string();
  const auto body = stage("plot", [&] { return in.extension() == ".json" ? plot_json(text, title) : plot_csv(text, title); });
  RunLog log("plot", opt.out);
  log.inputs = {opt.input};
  log.text(title + ".svg", body);
  log.finish(opt.seed, start);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oxipipe: video-based SpO2 estimation pipeline"};
  app.require_subcommand(1);
  Options opt;

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic hand video and labelled recordings");
  synth_cmd->add_option("--config", opt.config, "JSON config file");
  synth_cmd->add_option("--seed", opt.seed, "Master seed");
  synth_cmd->add_option("--out", opt.out, "Output directory");

  auto* pipe_cmd = app.add_subcommand("pipeline", "Train, evaluate, explain, grid-search or compare");
  pipe_cmd->add_option("--mode", opt.mode, "train | eval | explain | gridsearch | compare")->required();
  pipe_cmd->add_option("--input,-i", opt.input, "Input RVF video or signal CSV");
  pipe_cmd->add_option("--test-input", opt.test_input, "Held-out recording for train/gridsearch");
  pipe_cmd->add_option("--model", opt.model, "Model JSON for eval/explain");
  pipe_cmd->add_option("--config", opt.config, "JSON config file");
  pipe_cmd->add_option("--seed", opt.seed, "Master seed");
  pipe_cmd->add_option("--out", opt.out, "Output directory");
  pipe_cmd->add_flag("--follow-paper-selection", opt.follow_paper,
                     "Keep the instance with the highest validation RMSE");

  auto* plot_cmd = app.add_subcommand("plot", "Render a CSV or JSON artifact as SVG");
  plot_cmd->add_option("--input,-i", opt.input, "CSV or JSON file")->required();
  plot_cmd->add_option("--out", opt.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_code(Errc::ConfigInvalid);
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(opt);
    if (pipe_cmd->parsed()) return cmd_pipeline(opt);
    return cmd_plot(opt);
  } catch (const Error& e) {
    std::cerr << "oxipipe: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "oxipipe: internal error: " << e.what() << "\n";
    return 1;
  }
}
