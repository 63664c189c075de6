#include <gtest/gtest.h>

#include <bit>
#include <cstring>

#include "oxipipe/frameio.hpp"
#include "oxipipe/random.hpp"

using namespace oxipipe;
using namespace oxipipe::frameio;

namespace {

// Hand-assembled little-endian header, independent of write_rvf.
std::vector<std::uint8_t> header(std::uint32_t w, std::uint32_t h, std::uint32_t n, float fps) {
  std::vector<std::uint8_t> b = {'R', 'V', 'F', '1'};
  auto u32 = [&](std::uint32_t v) {
    b.push_back(v & 0xff);
    b.push_back((v >> 8) & 0xff);
    b.push_back((v >> 16) & 0xff);
    b.push_back((v >> 24) & 0xff);
  };
  u32(w);
  u32(h);
  u32(n);
  std::uint32_t f;
  std::memcpy(&f, &fps, 4);
  u32(f);
  return b;
}

Errc code_of(std::span<const std::uint8_t> bytes) {
  try {
    read_rvf(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return Errc::IoFailure;
}

}  // namespace

TEST(Rvf, DecodesHandBuiltFile) {
  auto b = header(2, 1, 1, 30.0f);
  for (std::uint8_t v : {10, 20, 30, 40, 50, 60}) b.push_back(v);
  auto seq = read_rvf(b);
  EXPECT_EQ(seq.width(), 2u);
  EXPECT_EQ(seq.height(), 1u);
  EXPECT_EQ(seq.frame_count(), 1u);
  EXPECT_EQ(seq.fps(), 30.0f);
  const std::vector<std::uint8_t> expected{10, 20, 30, 40, 50, 60};
  auto f = seq.frame(0);
  EXPECT_EQ(std::vector<std::uint8_t>(f.begin(), f.end()), expected);
}

TEST(Rvf, DeclaredFramesBeyondPayload) {
  auto b = header(2, 1, 2, 30.0f);
  for (std::uint8_t v : {10, 20, 30, 40, 50, 60}) b.push_back(v);
  EXPECT_EQ(code_of(b), Errc::TruncatedPayload);
}

TEST(Rvf, TrailingBytesRejected) {
  auto b = header(1, 1, 1, 30.0f);
  for (std::uint8_t v : {1, 2, 3, 4}) b.push_back(v);
  EXPECT_EQ(code_of(b), Errc::TrailingBytes);
}

TEST(Rvf, ZeroGeometry) {
  std::vector<std::uint8_t> px(3, 0);
  for (auto b : {header(0, 1, 1, 30.0f), header(1, 0, 1, 30.0f), header(1, 1, 0, 30.0f), header(1, 1, 1, 0.0f),
                 header(1, 1, 1, -5.0f)}) {
    b.insert(b.end(), px.begin(), px.end());
    EXPECT_EQ(code_of(b), Errc::ZeroGeometry);
  }
  EXPECT_THROW(FrameSequence(1, 1, 30.0f, {}), Error);
}

TEST(Rvf, MinimalFileIs23Bytes) {
  FrameSequence seq(1, 1, 30.0f, {0, 0, 0});
  auto b = write_rvf(seq);
  ASSERT_EQ(b.size(), 23u);
  auto expected = header(1, 1, 1, 30.0f);
  expected.insert(expected.end(), {0, 0, 0});
  EXPECT_EQ(b, expected);
}

TEST(Rvf, EveryMagicMutationRejected) {
  auto good = write_rvf(FrameSequence(2, 2, 25.0f, std::vector<std::uint8_t>(12, 7)));
  for (std::size_t i = 0; i < 4; ++i) {
    for (int v = 0; v < 256; ++v) {
      if (v == good[i]) continue;
      auto b = good;
      b[i] = static_cast<std::uint8_t>(v);
      EXPECT_EQ(code_of(b), Errc::BadMagic);
    }
  }
}

TEST(Rvf, EveryTruncationRejected) {
  auto good = write_rvf(FrameSequence(3, 2, 15.0f, std::vector<std::uint8_t>(36, 9)));
  for (std::size_t len = 0; len < good.size(); ++len) {
    std::span<const std::uint8_t> cut(good.data(), len);
    const Errc c = code_of(cut);
    EXPECT_TRUE(c == Errc::BadMagic || c == Errc::TruncatedPayload) << "length " << len;
  }
}

TEST(Rvf, RandomRoundTrips) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto w = static_cast<std::uint32_t>(1 + rng.index(9));
    const auto h = static_cast<std::uint32_t>(1 + rng.index(9));
    const auto n = static_cast<std::uint32_t>(1 + rng.index(5));
    const auto fps = static_cast<float>(rng.uniform(0.5, 120.0));
    auto b = header(w, h, n, fps);
    for (std::size_t i = 0; i < std::size_t{w} * h * 3 * n; ++i) b.push_back(static_cast<std::uint8_t>(rng.index(256)));
    auto seq = read_rvf(b);
    EXPECT_EQ(write_rvf(seq), b);
    EXPECT_EQ(read_rvf(write_rvf(seq)), seq);
  }
}

TEST(SignalCsv, RoundTripKeepsEveryBit) {
  Rng rng(3);
  ColorSignal sig;
  sig.fps = 30.0;
  std::vector<double> spo2;
  for (int i = 0; i < 50; ++i) {
    sig.samples.push_back({rng.uniform(0, 255), rng.uniform(0, 255), rng.uniform(0, 255)});
    spo2.push_back(rng.uniform(70, 100));
  }
  sig.spo2 = spo2;
  sig.cycle_boundaries = {0, 20, 35, 50};
  const auto text = write_signal_csv(sig);
  EXPECT_EQ(text.substr(0, text.find('\n')), "time_s,r,g,b,spo2,cycle");
  EXPECT_EQ(text.find('\r'), std::string::npos);
  auto back = read_signal_csv(text);
  EXPECT_NEAR(back.fps, 30.0, 1e-9);
  EXPECT_EQ(back.samples, sig.samples);
  EXPECT_EQ(*back.spo2, spo2);
  EXPECT_EQ(back.cycle_boundaries, sig.cycle_boundaries);
  EXPECT_EQ(write_signal_csv(back), text);
}

TEST(SignalCsv, PlainHeaderWithoutOptionalColumns) {
  auto sig = read_signal_csv("time_s,r,g,b\n0,1,2,3\n0.5,4,5,6\n");
  EXPECT_DOUBLE_EQ(sig.fps, 2.0);
  EXPECT_FALSE(sig.spo2.has_value());
  EXPECT_TRUE(sig.cycle_boundaries.empty());
}

TEST(SignalCsv, MalformedInput) {
  for (const char* text : {"", "t,r,g,b\n0,1,2,3\n1,1,2,3\n", "time_s,r,g,b\n0,1,2\n1,1,2,3\n",
                           "time_s,r,g,b\n0,1,2,x\n1,1,2,3\n", "time_s,r,g,b,foo\n0,1,2,3,4\n1,1,2,3,4\n",
                           "time_s,r,g,b\n0,1,2,3\n"}) {
    try {
      read_signal_csv(text);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::CsvParse);
    }
  }
}
