// Train a small CNN on a synthetic recording, then ask LRP which color channel it relies on.

#include <cstdio>

#include "oxipipe/oxipipe.hpp"

using namespace oxipipe;

int main() {
  const auto rec = harness::synth_pair(synth::SubjectProfile{}, synth::PhysioTrace::breathing(), 30.0, 7);

  harness::PipelineConfig cfg;
  cfg.instances = 2;
  cfg.train.epochs = 5;
  cfg.arch.filters = 8;
  const auto data = harness::prepare_data(rec.train, rec.test, cfg.windows);
  const auto run = harness::run_instances(data, cfg, harness::instance_seeds(7, cfg.instances));
  for (const auto& row : run.table) std::printf("seed %llu  val RMSE %.3f\n", (unsigned long long)row.seed, row.val_rmse);

  const auto& model = run.best.model;
  const auto pred = cnn::predict(model, data.test);
  std::printf("test RMSE %.3f\n", cnn::rmse(pred, data.test.labels));

  const auto map = explain::lrp(model, data.test.window(0));
  std::printf("window 0: prediction %.3f, input relevance %.3f\n", map.prediction, map.input_total());

  const auto shares = explain::channel_relevance_report(model, data.test);
  const char* names[] = {"red", "green", "blue"};
  for (int c = 0; c < 3; ++c) std::printf("%-5s relevance share %.3f\n", names[c], shares.shares[c]);
}
