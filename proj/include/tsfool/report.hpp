#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tsfool/attack_config.hpp"

namespace tsfool {

struct Prediction {
  std::size_t index;
  double target;
  double predicted;
};

/// RMSE of one model on one dataset, with the per-window predictions it came from.
struct EvalReport {
  std::string model_id;
  std::uint64_t dataset_fingerprint = 0;
  double rmse = 0;
  std::vector<Prediction> predictions;
  std::optional<attack::AttackConfig> attack;

  double recompute_rmse() const {
    double s = 0;
    for (const auto& p : predictions) {
      const double d = p.predicted - p.target;
      s += d * d;
    }
    return std::sqrt(s / static_cast<double>(predictions.size()));
  }
};

}  // namespace tsfool
