#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>

namespace oxipipe {

// Every failure the library can report. The CLI maps each code to its own
// process exit status (see exit_code()).
enum class Errc {
  // frameio
  BadMagic,
  TruncatedPayload,
  ZeroGeometry,
  TrailingBytes,
  InvalidFrames,
  CsvParse,
  // synth
  InvalidProfile,
  NyquistViolation,
  RangeOverflow,
  GeometryTooSmall,
  // roi
  NoSeparation,
  EmptyMask,
  // dsp
  BadBand,
  TooShort,
  // ror
  DegenerateDC,
  RankDeficient,
  // cnn
  ShapeMismatch,
  DivergenceDetected,
  LengthMismatch,
  Empty,
  SchemaVersionMismatch,
  // explain
  NumericalBlowup,
  WrongFirstLayer,
  // harness
  TooFewCycles,
  EmptyPartition,
  GridTooLarge,
  ConfoundedFactors,
  // cli
  ConfigInvalid,
  IoFailure,
  UnknownColumns,
};

inline constexpr std::array<std::string_view, 30> kErrcNames = {
    "BadMagic",         "TruncatedPayload",   "ZeroGeometry",   "TrailingBytes",
    "InvalidFrames",    "CsvParse",           "InvalidProfile", "NyquistViolation",
    "RangeOverflow",    "GeometryTooSmall",   "NoSeparation",   "EmptyMask",
    "BadBand",          "TooShort",           "DegenerateDC",   "RankDeficient",
    "ShapeMismatch",    "DivergenceDetected", "LengthMismatch", "Empty",
    "SchemaVersionMismatch", "NumericalBlowup", "WrongFirstLayer", "TooFewCycles",
    "EmptyPartition",   "GridTooLarge",       "ConfoundedFactors", "ConfigInvalid",
    "IoFailure",        "UnknownColumns",
};

constexpr std::string_view to_string(Errc code) {
  return kErrcNames[static_cast<std::size_t>(code)];
}

/// Process exit status for an error code: 10 + its position in Errc.
constexpr int exit_code(Errc code) { return 10 + static_cast<int>(code); }

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

  /// Re-throws with extra context prepended (frame index, window index, stage).
  [[noreturn]] void rethrow_with(const std::string& context) const {
    throw Error(code_, context + ": " + detail());
  }

  std::string detail() const {
    std::string msg = what();
    auto prefix = std::string(to_string(code_)) + ": ";
    return msg.rfind(prefix, 0) == 0 ? msg.substr(prefix.size()) : msg;
  }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace oxipipe
