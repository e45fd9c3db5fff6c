#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "tsfool/data.hpp"
#include "tsfool/random.hpp"

namespace tsfool::data {

/// Hourly synthetic series. Channels x1..x{N-1} mix two sines with AR(1)
/// noise; channel "target" follows a fixed lagged linear map of the others
/// plus its own lag and small noise, so it is learnable from the past.
inline SeriesFrame synth_generate(std::uint64_t seed, std::size_t rows,
                                  std::size_t channels) {
  if (rows < 100) throw DataError("synth: rows must be at least 100");
  if (channels < 2) throw DataError("synth: at least 2 channels required");
  Rng rng(seed);
  constexpr std::int64_t kStart = 1577836800;  // 2020-01-01T00:00:00Z
  constexpr double kTwoPi = 2.0 * std::numbers::pi;

  SeriesFrame f;
  f.timestamps.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    f.timestamps[r] = kStart + static_cast<std::int64_t>(r) * 3600;
  }
  f.names.push_back("target");
  for (std::size_t k = 1; k < channels; ++k) f.names.push_back("x" + std::to_string(k));
  f.channels.assign(channels, std::vector<double>(rows, 0.0));

  for (std::size_t k = 1; k < channels; ++k) {
    const double p1 = rng.uniform(12.0, 48.0);
    const double p2 = rng.uniform(60.0, 240.0);
    const double a1 = rng.uniform(0.5, 1.5);
    const double a2 = rng.uniform(0.2, 0.8);
    const double ph1 = rng.uniform(0.0, kTwoPi);
    const double ph2 = rng.uniform(0.0, kTwoPi);
    const double phi = rng.uniform(0.5, 0.9);
    const double sigma = rng.uniform(0.05, 0.15);
    double noise = 0.0;
    auto& x = f.channels[k];
    for (std::size_t r = 0; r < rows; ++r) {
      noise = phi * noise + sigma * rng.normal();
      const double t = static_cast<double>(r);
      x[r] = a1 * std::sin(kTwoPi * t / p1 + ph1) +
             a2 * std::sin(kTwoPi * t / p2 + ph2) + noise;
    }
  }

  auto& target = f.channels[0];
  for (std::size_t r = 1; r < rows; ++r) {
    double v = 0.3 * target[r - 1];
    for (std::size_t k = 1; k < channels; ++k) {
      const double w = (k % 2 == 1 ? 1.0 : -1.0) / static_cast<double>(k);
      v += w * f.channels[k][r - 1];
      if (r >= 2 && k == 1) v += 0.5 * f.channels[k][r - 2];
    }
    target[r] = v + 0.05 * rng.normal();
  }
  return f;
}

}  // namespace tsfool::data
