// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
// Usage: acceptance [criterion numbers...]

#include <fftw3.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>

#include "helpers.hpp"
#include "oxipipe/oxipipe.hpp"

namespace fs = std::filesystem;
using namespace oxipipe;
using json = nlohmann::json;
using testing_helpers::random_model;
using testing_helpers::random_vector;
using testing_helpers::sine;

namespace {

// Tolerances and budgets.
constexpr int kOtsuHistograms = 1000;
constexpr double kOtsuBudgetS = 5.0;
constexpr int kGradModels = 50;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradBudgetS = 60.0;
constexpr int kLrpModels = 100;
constexpr double kLrpEpsilon = 1e-9;
constexpr double kLrpRelTol = 1e-6;
constexpr double kLrpBudgetS = 60.0;
constexpr double kPassbandTol = 0.10;
constexpr double kStopbandDb = 20.0;
constexpr double kDcTol = 1e-9;
constexpr double kRorNoiselessRmse = 0.5;
constexpr double kCnnMae = 2.0;
constexpr double kCnnRmse = 2.5;
constexpr std::size_t kRecoverySeeds = 5, kRecoveryWins = 4;
constexpr double kRecoveryBudgetS = 600.0;
constexpr std::size_t kDecoySeeds = 10, kDecoyHits = 8;
constexpr std::size_t kConditionSeeds = 10, kConditionHits = 8;
constexpr double kNullDelta = 0.5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Errc error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::runtime_error("no error raised");
}

bool rejects(auto&& fn) {
  try {
    fn();
  } catch (const Error&) {
    return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// 1. Otsu

using u128 = unsigned __int128;

int brute_force_otsu(const roi::Histogram& h) {
  int best = -1;
  u128 best_num = 0, best_den = 1;
  for (int t = 0; t < 255; ++t) {
    u128 n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (int i = 0; i < 256; ++i) {
      (i <= t ? n0 : n1) += h[i];
      (i <= t ? s0 : s1) += u128(h[i]) * i;
    }
    if (n0 == 0 || n1 == 0) continue;
    const u128 a = s0 * n1, b = s1 * n0;
    const u128 d = a > b ? a - b : b - a;
    const u128 num = d * d, den = n0 * n1;
    if (best < 0 || num * best_den > best_num * den) {
      best = t;
      best_num = num;
      best_den = den;
    }
  }
  return best;
}

Outcome otsu_oracle() {
  Rng rng(1001);
  const auto t0 = std::chrono::steady_clock::now();
  int agree = 0, separable = 0;
  for (int trial = 0; trial < kOtsuHistograms; ++trial) {
    roi::Histogram h{};
    switch (trial % 4) {
      case 0:
        for (auto& c : h) c = rng.index(1000);
        break;
      case 1:  // two bumps
        for (int k = 0; k < 4000; ++k) h[std::clamp<int>(std::lround(rng.normal(k % 2 ? 60 : 190, 20)), 0, 255)]++;
        break;
      case 2:  // few occupied bins, many ties
        for (int k = 0; k < 3 + static_cast<int>(rng.index(4)); ++k) h[rng.index(256)] = 1 + rng.index(3);
        break;
      default:  // sparse with large counts; totals stay small enough for exact 128-bit products
        for (int k = 0; k < 20; ++k) h[rng.index(256)] += rng.index(1u << 13);
    }
    const int expect = brute_force_otsu(h);
    if (expect < 0) {
      agree += error_of([&] { roi::otsu_threshold(h); }) == Errc::NoSeparation;
      continue;
    }
    ++separable;
    agree += static_cast<int>(roi::otsu_threshold(h)) == expect;
  }
  const double s = seconds_since(t0);
  return {agree == kOtsuHistograms && s < kOtsuBudgetS,
          fmt("%d/%d agree (%d separable), %.2f s", agree, kOtsuHistograms, separable, s)};
}

// ---------------------------------------------------------------------------
// 2. Gradients

double loss_at(const cnn::CnnModel& m, const std::vector<double>& x, double label) {
  const double y = cnn::predict(m, x);
  return (y - label) * (y - label);
}

std::vector<std::size_t> kink_signature(const cnn::CnnModel& m, const std::vector<double>& x) {
  cnn::ForwardCache c;
  cnn::forward(m, x, c);
  std::vector<std::size_t> sig;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (std::holds_alternative<cnn::Relu>(m.layers[i]))
      for (double v : c.acts[i]) sig.push_back(v > 0.0);
    if (std::holds_alternative<cnn::MaxPool1d>(m.layers[i]))
      sig.insert(sig.end(), c.argmax[i].begin(), c.argmax[i].end());
  }
  return sig;
}

Outcome gradient_check() {
  Rng rng(2002);
  const auto t0 = std::chrono::steady_clock::now();
  const double h = 1e-5;
  std::size_t checked = 0, skipped = 0, bad = 0;
  double worst = 0.0;
  for (int trial = 0; trial < kGradModels; ++trial) {
    auto m = random_model(rng, 9000 + trial);
    auto x = random_vector(rng, m.input.size());
    const double label = rng.uniform(-1, 1);
    cnn::ForwardCache c;
    cnn::forward(m, x, c);
    std::vector<double> input_grad;
    auto grads = cnn::zero_gradients(m);
    cnn::backward(m, c, label, grads, 1.0, &input_grad);
    const auto base = kink_signature(m, x);
    auto check = [&](double& slot, double analytic) {
      const double keep = slot;
      slot = keep + h;
      const bool same_p = kink_signature(m, x) == base;
      const double lp = loss_at(m, x, label);
      slot = keep - h;
      const bool same_m = kink_signature(m, x) == base;
      const double lm = loss_at(m, x, label);
      slot = keep;
      if (!same_p || !same_m) {
        ++skipped;
        return;
      }
      const double fd = (lp - lm) / (2 * h);
      const double rel = std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-6});
      worst = std::max(worst, rel);
      bad += rel > kGradRelTol;
      ++checked;
    };
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      for (std::size_t k = 0; k < m.params[i].weight.size(); ++k) check(m.params[i].weight[k], grads[i].weight[k]);
      for (std::size_t k = 0; k < m.params[i].bias.size(); ++k) check(m.params[i].bias[k], grads[i].bias[k]);
    }
    for (std::size_t k = 0; k < x.size(); ++k) check(x[k], input_grad[k]);
  }
  const double s = seconds_since(t0);
  const bool enough = checked > 1000 && static_cast<double>(skipped) < 0.01 * static_cast<double>(checked);
  return {bad == 0 && enough && s < kGradBudgetS,
          fmt("%zu partials, worst rel err %.2e, %zu skipped at kinks, %.2f s", checked, worst, skipped, s)};
}

// ---------------------------------------------------------------------------
// 3. LRP

cnn::CnnModel random_lrp_model(Rng& rng, std::uint64_t seed) {
  cnn::ArchConfig a;
  a.conv_layers = 1 + rng.index(2);
  a.filters = 2 + rng.index(6);
  a.filter_length = 3 + rng.index(6);
  a.pool_len = 2 + rng.index(2);
  a.dense_units = 3 + rng.index(8);
  return cnn::make_model(a, 40 + rng.index(40), seed);
}

Outcome lrp_conservation() {
  Rng rng(3003);
  const auto t0 = std::chrono::steady_clock::now();
  int conserved = 0, bounded = 0;
  double worst = 0.0, worst_bias = 0.0;
  for (int trial = 0; trial < kLrpModels; ++trial) {
    const auto m = random_lrp_model(rng, 3000 + trial);
    const auto x = random_vector(rng, m.input.size());
    const auto r = explain::lrp(m, x, kLrpEpsilon);
    const double gap0 = std::abs(r.input_total() - r.prediction);
    if (r.prediction != 0.0) worst = std::max(worst, gap0 / std::abs(r.prediction));
    conserved += gap0 <= kLrpRelTol * std::abs(r.prediction);

    // same model with random biases: the deviation is what the biases absorbed
    auto mb = m;
    for (auto& p : mb.params)
      for (double& b : p.bias) b = rng.uniform(-0.3, 0.3);
    const auto rb = explain::lrp(mb, x, kLrpEpsilon);
    const double gap = std::abs(rb.input_total() - rb.prediction);
    const double closure = std::abs(rb.input_total() + rb.bias_absorbed - rb.prediction);
    worst_bias = std::max(worst_bias, gap);
    bounded += gap <= rb.bias_magnitude + kLrpRelTol * std::abs(rb.prediction) &&
               closure <= kLrpRelTol * std::max(1.0, std::abs(rb.prediction));
  }
  const double s = seconds_since(t0);
  return {conserved == kLrpModels && bounded == kLrpModels && s < kLrpBudgetS,
          fmt("%d/%d conserved (worst rel %.1e); with biases %d/%d within summed |bias| (largest gap %.3g); %.2f s",
              conserved, kLrpModels, worst, bounded, kLrpModels, worst_bias, s)};
}

// ---------------------------------------------------------------------------
// 4. Filters, checked on the FFTW spectrum

std::vector<double> magnitude_spectrum(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  std::vector<double> in(x);
  auto* out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
  fftw_plan plan = fftw_plan_dft_r2c_1d(n, in.data(), out, FFTW_ESTIMATE);
  fftw_execute(plan);
  std::vector<double> mag(static_cast<std::size_t>(n / 2 + 1));
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::hypot(out[k][0], out[k][1]);
  fftw_destroy_plan(plan);
  fftw_free(out);
  return mag;
}

Outcome filter_specs() {
  const double fps = 30.0;
  const std::size_t n = 3000;  // 100 s: both tones sit on exact bins
  const auto bin = [&](double hz) { return static_cast<std::size_t>(std::lround(hz * n / fps)); };

  const auto pass_in = sine(n, fps, 1.5);
  const auto pass_out = dsp::bandpass(pass_in, fps, 0.7, 4.0);
  const double gain = magnitude_spectrum(pass_out)[bin(1.5)] / magnitude_spectrum(pass_in)[bin(1.5)];

  const auto stop_in = sine(n, fps, 0.05);
  const auto stop_out = dsp::bandpass(stop_in, fps, 0.7, 4.0);
  const double atten = 20.0 * std::log10(magnitude_spectrum(stop_in)[bin(0.05)] / magnitude_spectrum(stop_out)[bin(0.05)]);

  const auto dc_out = dsp::bandpass(std::vector<double>(n, 123.0), fps, 0.7, 4.0);
  double dc_max = 0.0;
  for (double v : dc_out) dc_max = std::max(dc_max, std::abs(v));
  const double dc_bin = magnitude_spectrum(dc_out)[0] / static_cast<double>(n);

  const bool ok = std::abs(gain - 1.0) <= kPassbandTol && atten >= kStopbandDb && dc_max <= kDcTol && dc_bin <= kDcTol;
  return {ok, fmt("1.5 Hz gain %.4f, 0.05 Hz attenuation %.1f dB, DC residue max %.1e (bin %.1e)", gain, atten, dc_max,
                  dc_bin)};
}

// ---------------------------------------------------------------------------
// 5. Windowing and split audit

dsp::WindowedDataset spans_only(std::size_t n, std::size_t len, std::size_t stride) {
  dsp::WindowedDataset ds;
  ds.window_len = len;
  ds.stride = stride;
  for (std::size_t s = 0; s + len <= n; s += stride) ds.spans.push_back({s, s + len});
  return ds;
}

Outcome windowing() {
  ColorSignal sig;
  sig.fps = 30.0;
  sig.spo2.emplace();
  for (std::size_t i = 0; i < 600; ++i) {
    sig.samples.push_back({120.0 + std::sin(0.3 * static_cast<double>(i)), 90.0, 80.0});
    sig.spo2->push_back(97.0);
  }
  dsp::WindowOptions opts;
  opts.window_s = 10.0;
  opts.stride_s = 0.2;
  const auto ds = dsp::make_windows(sig, opts);
  bool geometry = ds.size() == 51 && ds.window_len == 300;
  for (std::size_t i = 0; geometry && i < ds.size(); ++i) geometry = ds.spans[i].end - ds.spans[i].start == 300;

  Rng rng(5005);
  int audited = 0, clean = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> b{0};
    const std::size_t cycles = 3 + rng.index(4);
    for (std::size_t c = 0; c < cycles; ++c) b.push_back(b.back() + 300 + rng.index(1500));
    const auto layout = spans_only(b.back(), 30 + rng.index(270), 1 + rng.index(20));
    harness::SplitPlan plan;
    try {
      plan = harness::split_by_cycles(layout, b);
    } catch (const Error& e) {
      clean += e.code() == Errc::EmptyPartition;
      ++audited;
      continue;
    }
    ++audited;
    std::vector<char> owner(b.back(), 0);
    bool ok = true;
    for (auto w : plan.train)
      for (std::size_t t = layout.spans[w].start; t < layout.spans[w].end; ++t) owner[t] = 1;
    for (auto w : plan.val)
      for (std::size_t t = layout.spans[w].start; t < layout.spans[w].end; ++t) ok = ok && owner[t] != 1;
    clean += ok && harness::spans_disjoint(layout, plan);
  }
  return {geometry && clean == 100,
          fmt("%zu windows of %zu samples; %d/%d random cycle layouts disjoint", ds.size(), ds.window_len, clean,
              audited)};
}

// ---------------------------------------------------------------------------
// 6. End-to-end recovery

harness::PipelineConfig recovery_config() {
  harness::PipelineConfig c;
  c.instances = 1;
  c.train.epochs = 15;
  c.train.weight_decay = 0.01;
  return c;
}

Outcome recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  synth::SubjectProfile quiet;
  quiet.noise_sigma = 0.0;
  quiet.burst_rate_hz = 0.0;
  const auto clean = harness::synth_pair(quiet, synth::PhysioTrace::breathing(), 30.0, 600);
  const auto clean_data = harness::prepare_data(clean.train, clean.test, {});
  const double ror_clean = harness::evaluate_ror(clean_data, ror::ChannelPair::red_blue).test_rmse;

  const auto cfg = recovery_config();
  double sum_mae = 0.0, sum_rmse = 0.0;
  std::size_t wins = 0, within = 0;
  std::string per_seed;
  for (std::size_t s = 0; s < kRecoverySeeds; ++s) {
    const std::uint64_t master = 60 + s;
    const auto rec = harness::synth_pair(synth::SubjectProfile{}, synth::PhysioTrace::breathing(), 30.0, master);
    const auto data = harness::prepare_data(rec.train, rec.test, cfg.windows);
    const auto run = harness::run_instances(data, cfg, harness::instance_seeds(master, cfg.instances));
    const auto pred = cnn::predict(run.best.model, data.test);
    const double rmse = cnn::rmse(pred, data.test.labels), mae = cnn::mae(pred, data.test.labels);
    const double ror_rmse = harness::evaluate_ror(data, cfg.pair).test_rmse;
    sum_mae += mae;
    sum_rmse += rmse;
    wins += rmse < ror_rmse;
    within += mae <= kCnnMae && rmse <= kCnnRmse;
    per_seed += fmt(" [%.2f/%.2f vs %.2f]", mae, rmse, ror_rmse);
  }
  const double mae = sum_mae / kRecoverySeeds, rmse = sum_rmse / kRecoverySeeds;
  const double s = seconds_since(t0);
  const bool ok = ror_clean <= kRorNoiselessRmse && within == kRecoverySeeds && wins >= kRecoveryWins &&
                  s <= kRecoveryBudgetS;
  return {ok, fmt("noiseless ror RMSE %.3f; cnn within MAE/RMSE limits %zu/%zu (mean %.2f/%.2f); beats ror %zu/%zu; "
                  "cnn MAE/RMSE vs ror RMSE per seed:%s; %.0f s",
                  ror_clean, within, kRecoverySeeds, mae, rmse, wins, kRecoverySeeds, per_seed.c_str(), s)};
}

// ---------------------------------------------------------------------------
// 7. Decoy-green explainability

Outcome decoy() {
  synth::SubjectProfile p;
  p.perfusion_modulation = 0.3;
  p.green_ac_ratio = 1.0;  // green pulses as strongly as blue but carries no SpO2 information
  std::size_t hits_relevance = 0, hits_weights = 0, hits_both = 0;
  std::string per_seed;
  for (std::size_t s = 0; s < kDecoySeeds; ++s) {
    const std::uint64_t master = 700 + s;
    const auto rec = harness::synth_pair(p, synth::PhysioTrace::breathing(), 30.0, master);
    const auto data = harness::prepare_data(rec.train, rec.test, {});
    cnn::TrainConfig tc;
    tc.epochs = 20;
    tc.weight_decay = 5.0;
    tc.keep_best = false;
    tc.seed = master;
    const auto res = cnn::train(cnn::make_model(cnn::ArchConfig{}, data.train.window_len, master), data.train, nullptr, tc);
    const auto rel = explain::channel_relevance_report(res.model, data.train);
    const auto w = explain::channel_weight_profile(res.model);
    const auto smallest = [](const std::array<double, 3>& v) {
      return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
    };
    const bool r_ok = smallest(rel.shares) == 1, w_ok = smallest(w.shares) == 1;
    hits_relevance += r_ok;
    hits_weights += w_ok;
    hits_both += r_ok && w_ok;
    per_seed += fmt(" [%.2f %.2f]", rel.shares[1], w.shares[1]);
  }
  return {hits_both >= kDecoyHits,
          fmt("green smallest: relevance %zu/%zu, weights %zu/%zu, both %zu/%zu; green shares (relevance weights):%s",
              hits_relevance, kDecoySeeds, hits_weights, kDecoySeeds, hits_both, kDecoySeeds, per_seed.c_str())};
}

// ---------------------------------------------------------------------------
// 8. Condition analysis

Outcome conditions() {
  synth::SubjectProfile back, palm;
  palm.hand_side = synth::HandSide::palm;
  harness::CompareConfig cfg;
  cfg.seeds = kConditionSeeds;
  cfg.profiles = {palm, back};
  const auto rep = harness::compare_conditions(cfg, 800);
  cfg.profiles = {back, back};
  const auto null = harness::compare_conditions(cfg, 801);
  std::size_t ok_rows = 0;
  for (const auto* r : {&rep, &null})
    for (const auto& row : r->rows) ok_rows += row.ok;
  const double delta = std::abs(null.mean_rmse[1] - null.mean_rmse[0]);
  const bool ok = ok_rows == 4 * kConditionSeeds && rep.not_worse_than_first[1] >= kConditionHits && delta <= kNullDelta;
  return {ok, fmt("back <= palm in %zu/%zu seeds (mean RMSE back %.2f, palm %.2f); null |dRMSE| %.3f",
                  rep.not_worse_than_first[1], kConditionSeeds, rep.mean_rmse[1], rep.mean_rmse[0], delta)};
}

// ---------------------------------------------------------------------------
// 9. Determinism through the CLI

int run_cli(const std::string& args, const fs::path& log, std::size_t threads = 1) {
  const std::string cmd = "OXIPIPE_THREADS=" + std::to_string(threads) + " " + OXIPIPE_CLI_PATH + " " + args +
                          " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Every output except the manifest's wall-clock field must match byte for byte.
bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(a)) names.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) names.insert(e.path().filename().string());
  for (const auto& n : names) {
    if (!fs::exists(a / n) || !fs::exists(b / n)) {
      why = n + " missing";
      return false;
    }
    if (n == "manifest.json") {
      auto ja = json::parse(frameio::read_text(a / n)), jb = json::parse(frameio::read_text(b / n));
      ja.erase("wall_clock_s");
      jb.erase("wall_clock_s");
      ja.erase("outputs");
      jb.erase("outputs");
      ja.erase("inputs");
      jb.erase("inputs");
      if (ja != jb) {
        why = n + " differs";
        return false;
      }
    } else if (frameio::read_file(a / n) != frameio::read_file(b / n)) {
      why = n + " differs";
      return false;
    }
  }
  return true;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "oxipipe_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream cfg(root / "cfg.json");
    cfg << R"({"pipeline": {"instances": 2, "arch": {"filters": 8, "dense_units": 16}, "train": {"epochs": 3}},
              "grid": {"conv_layers": [1, 2], "filters": [4, 8]},
              "explain": {"windows": 4}})";
  }
  const std::string cfg = " --config " + (root / "cfg.json").string();
  const fs::path log = root / "log.txt";
  std::string why;
  std::size_t identical = 0, runs = 0;
  bool ok = true;
  for (const char* tag : {"a", "b"}) {
    const fs::path out = root / tag;
    ok = ok && run_cli("synth --seed 9" + cfg + " --out " + (out / "synth").string(), log) == 0;
    ok = ok && run_cli("pipeline --mode train --seed 9" + cfg + " -i " + (out / "synth/train.csv").string() +
                           " --test-input " + (out / "synth/test.csv").string() + " --out " + (out / "train").string(),
                       log) == 0;
    ok = ok && run_cli("pipeline --mode explain" + cfg + " -i " + (out / "synth/test.csv").string() + " --model " +
                           (out / "train/model.json").string() + " --out " + (out / "explain").string(),
                       log) == 0;
    ok = ok && run_cli("plot -i " + (out / "train/loss.csv").string() + " --out " + (out / "plot").string(), log) == 0;
  }
  for (const char* stage : {"synth", "train", "explain", "plot"}) {
    ++runs;
    if (ok && same_tree(root / "a" / stage, root / "b" / stage, why)) ++identical;
  }
  const bool runs_identical = ok && identical == runs;

  // grid search with one and with three workers
  const auto data_dir = root / "a/synth";
  std::string grid_detail = "grid runs failed";
  bool grid_ok = false;
  if (ok && run_cli("pipeline --mode gridsearch --seed 9" + cfg + " -i " + (data_dir / "train.csv").string() +
                        " --test-input " + (data_dir / "test.csv").string() + " --out " + (root / "g1").string(),
                    log, 1) == 0 &&
      run_cli("pipeline --mode gridsearch --seed 9" + cfg + " -i " + (data_dir / "train.csv").string() +
                  " --test-input " + (data_dir / "test.csv").string() + " --out " + (root / "g3").string(),
              log, 3) == 0) {
    const auto r1 = json::parse(frameio::read_text(root / "g1/report.json"));
    const auto r3 = json::parse(frameio::read_text(root / "g3/report.json"));
    grid_ok = r1.at("selected") == r3.at("selected") && same_tree(root / "g1", root / "g3", why);
    grid_detail = "winner " + r1.at("selected").dump() + (grid_ok ? " with 1 and 3 workers" : " but " + why);
  }
  if (runs_identical) fs::remove_all(root);
  return {runs_identical && grid_ok,
          fmt("%zu/%zu stages byte-identical across two runs%s; %s", identical, runs,
              runs_identical ? "" : (" (" + why + ", see " + log.string() + ")").c_str(), grid_detail.c_str())};
}

// ---------------------------------------------------------------------------
// 10. Format round-trips and corruption

std::vector<std::uint8_t> rvf_bytes(std::uint32_t w, std::uint32_t h, std::uint32_t n, float fps, Rng& rng) {
  std::vector<std::uint8_t> px(std::size_t{w} * h * 3 * n);
  for (auto& v : px) v = static_cast<std::uint8_t>(rng.index(256));
  return frameio::write_rvf(frameio::FrameSequence(w, h, fps, std::move(px)));
}

Outcome formats() {
  Rng rng(10010);
  std::size_t rvf_trips = 0, rvf_total = 0, model_trips = 0, model_total = 0;
  std::size_t rejected = 0, corruptions = 0;
  auto expect_reject = [&](auto&& fn) {
    ++corruptions;
    rejected += rejects(fn);
  };

  for (int trial = 0; trial < 100; ++trial) {
    const auto w = static_cast<std::uint32_t>(1 + rng.index(16)), h = static_cast<std::uint32_t>(1 + rng.index(16));
    const auto n = static_cast<std::uint32_t>(1 + rng.index(6));
    const auto fps = static_cast<float>(rng.uniform(1.0, 120.0));
    const auto bytes = rvf_bytes(w, h, n, fps, rng);
    const auto seq = frameio::read_rvf(bytes);
    ++rvf_total;
    rvf_trips += frameio::write_rvf(seq) == bytes && seq.width() == w && seq.height() == h && seq.frame_count() == n;
  }
  const auto good = rvf_bytes(3, 2, 2, 30.0f, rng);
  for (std::size_t len = 0; len < good.size(); ++len)
    expect_reject([&] { frameio::read_rvf(std::span<const std::uint8_t>(good.data(), len)); });
  for (std::size_t i = 0; i < 4; ++i)
    for (int v = 0; v < 256; ++v) {
      if (v == good[i]) continue;
      auto b = good;
      b[i] = static_cast<std::uint8_t>(v);
      expect_reject([&] { frameio::read_rvf(b); });
    }
  for (std::size_t extra = 1; extra <= 20; ++extra) {
    auto b = good;
    b.resize(b.size() + extra, 0);
    expect_reject([&] { frameio::read_rvf(b); });
  }
  for (std::size_t field = 4; field < 16; field += 4) {
    auto b = good;
    std::memset(b.data() + field, 0, 4);
    expect_reject([&] { frameio::read_rvf(b); });
  }
  for (float bad_fps : {0.0f, -30.0f, NAN, INFINITY}) {
    auto b = good;
    std::memcpy(b.data() + 16, &bad_fps, 4);
    expect_reject([&] { frameio::read_rvf(b); });
  }

  for (int trial = 0; trial < 50; ++trial) {
    auto m = random_model(rng, 4000 + trial);
    m.meta = json{{"trial", trial}};
    const auto text = cnn::model_text(m);
    const auto back = cnn::load_model(json::parse(text));
    ++model_total;
    model_trips += back == m && cnn::model_text(back) == text;
  }
  const auto base = cnn::save_model(random_model(rng, 4100));
  for (const char* key : {"format", "version", "input", "rng_seed", "layers"}) {
    auto d = base;
    d.erase(key);
    expect_reject([&] { cnn::load_model(d); });
  }
  {
    auto d = base;
    d["version"] = cnn::kModelFormatVersion + 1;
    expect_reject([&] { cnn::load_model(d); });
    d = base;
    d["format"] = "something-else";
    expect_reject([&] { cnn::load_model(d); });
    d = base;
    d["input"]["length"] = 3;
    expect_reject([&] { cnn::load_model(d); });
    d = base;
    d["input"]["channels"] = d["input"]["channels"].get<int>() + 1;
    expect_reject([&] { cnn::load_model(d); });
  }
  for (std::size_t i = 0; i < base["layers"].size(); ++i) {
    auto d = base;
    d["layers"][i]["kind"] = "conv2d";
    expect_reject([&] { cnn::load_model(d); });
    if (base["layers"][i].contains("weight")) {
      d = base;
      d["layers"][i]["weight"].erase(0);
      expect_reject([&] { cnn::load_model(d); });
      d = base;
      d["layers"][i]["bias"].push_back(0.5);
      expect_reject([&] { cnn::load_model(d); });
      d = base;
      d["layers"][i]["weight"][0] = "x";
      expect_reject([&] { cnn::load_model(d); });
    }
  }
  const bool ok = rvf_trips == rvf_total && model_trips == model_total && rejected == corruptions;
  return {ok, fmt("RVF %zu/%zu and model %zu/%zu round-trips exact; %zu/%zu corruptions rejected", rvf_trips, rvf_total,
                  model_trips, model_total, rejected, corruptions)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "Otsu matches exhaustive between-class variance search", otsu_oracle},
      {2, "backward pass matches central finite differences", gradient_check},
      {3, "LRP conserves the prediction", lrp_conservation},
      {4, "bandpass filter specification", filter_specs},
      {5, "window arithmetic and split disjointness", windowing},
      {6, "end-to-end synthetic SpO2 recovery", recovery},
      {7, "decoy green channel ranked least relevant", decoy},
      {8, "back of hand no worse than palm; null comparison", conditions},
      {9, "bit-identical reruns and worker-count invariance", determinism},
      {10, "format round-trips and strict rejection", formats},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
