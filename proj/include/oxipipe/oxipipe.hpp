#pragma once

#include "oxipipe/cnn.hpp"
#include "oxipipe/dsp.hpp"
#include "oxipipe/error.hpp"
#include "oxipipe/explain.hpp"
#include "oxipipe/frameio.hpp"
#include "oxipipe/harness.hpp"
#include "oxipipe/random.hpp"
#include "oxipipe/roi.hpp"
#include "oxipipe/ror.hpp"
#include "oxipipe/signal.hpp"
#include "oxipipe/svg.hpp"
#include "oxipipe/synth.hpp"

namespace oxipipe {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace oxipipe
