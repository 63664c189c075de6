// Fit the ratio-of-ratios calibration on one synthetic recording and score it on another.

#include <cstdio>

#include "oxipipe/oxipipe.hpp"

using namespace oxipipe;

int main() {
  synth::SubjectProfile hand;
  hand.hand_side = synth::HandSide::back;
  const auto rec = harness::synth_pair(hand, synth::PhysioTrace::breathing(), 30.0, 42);
  const auto data = harness::prepare_data(rec.train, rec.test, dsp::WindowOptions{});
  const auto r = harness::evaluate_ror(data, ror::ChannelPair::red_blue);
  std::printf("windows: %zu train, %zu val, %zu test\n", data.train.size(), data.val.size(), data.test.size());
  std::printf("SpO2 = %.2f - %.2f * R\n", r.fit.model.a, r.fit.model.b);
  std::printf("test RMSE %.3f, MAE %.3f\n", r.test_rmse, r.test_mae);
}
