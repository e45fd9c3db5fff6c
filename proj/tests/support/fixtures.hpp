#pragma once

#include <cstdint>

#include "tsfool/data.hpp"
#include "tsfool/synth.hpp"

namespace tsfool::testing {

/// Normalized train/test windows from the synthetic generator.
inline data::Prepared synthetic_split(std::uint64_t seed, std::size_t rows,
                                      std::size_t channels, std::size_t lookback,
                                      double test_fraction = 0.3) {
  data::Recipe r;
  r.lookback = lookback;
  r.target_channel = "target";
  r.test_fraction = test_fraction;
  return data::prepare(data::synth_generate(seed, rows, channels), r);
}

}  // namespace tsfool::testing
