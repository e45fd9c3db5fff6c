#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tsfool::attack {

enum class Kind { FGSM, BIM };

inline std::string to_string(Kind k) { return k == Kind::FGSM ? "FGSM" : "BIM"; }

inline Kind parse_kind(const std::string& s) {
  if (s == "fgsm" || s == "FGSM") return Kind::FGSM;
  if (s == "bim" || s == "BIM") return Kind::BIM;
  throw std::invalid_argument("unknown attack kind '" + s + "' (expected fgsm or bim)");
}

struct AttackConfig {
  Kind kind = Kind::FGSM;
  double epsilon = 0.2;  // max L-inf perturbation, normalized units
  double alpha = 0.001;  // BIM step size
  std::size_t iters = 200;
  std::vector<bool> feature_mask;  // empty: perturb every channel
  std::optional<std::pair<double, double>> domain_clamp;

  static AttackConfig fgsm(double eps) {
    AttackConfig c;
    c.kind = Kind::FGSM;
    c.epsilon = eps;
    return c;
  }

  static AttackConfig bim(double eps, double alpha, std::size_t iters) {
    AttackConfig c;
    c.kind = Kind::BIM;
    c.epsilon = eps;
    c.alpha = alpha;
    c.iters = iters;
    return c;
  }

  /// Throws on invalid settings. Returns a warning (BIM step larger than the
  /// ball) or an empty string.
  std::string validate() const {
    if (!(epsilon >= 0.0)) throw std::invalid_argument("epsilon must be >= 0");
    if (kind == Kind::BIM) {
      if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
      if (iters < 1) throw std::invalid_argument("BIM needs at least one iteration");
      if (alpha > epsilon) {
        return "BIM step alpha=" + std::to_string(alpha) +
               " exceeds epsilon=" + std::to_string(epsilon);
      }
    }
    if (domain_clamp && domain_clamp->first > domain_clamp->second) {
      throw std::invalid_argument("domain clamp lower bound exceeds upper bound");
    }
    return {};
  }

  bool operator==(const AttackConfig&) const = default;
};

}  // namespace tsfool::attack
