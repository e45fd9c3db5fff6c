#pragma once

#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsfool/attack.hpp"
#include "tsfool/data.hpp"
#include "tsfool/neural.hpp"
#include "tsfool/report.hpp"
#include "tsfool/train.hpp"

namespace tsfool::experiment {

using attack::AttackConfig;
using attack::Kind;
using Json = nlohmann::ordered_json;

inline double pct_increase(double clean, double attacked) {
  return 100.0 * (attacked - clean) / clean;
}

struct AttackEval {
  EvalReport clean;
  EvalReport attacked;
  attack::AdversarialBatch batch;

  double pct_increase() const { return experiment::pct_increase(clean.rmse, attacked.rmse); }
};

/// Clean RMSE and RMSE on white-box adversarial inputs with the original targets.
inline AttackEval attack_eval(const nn::TrainedModel& model,
                              const data::WindowedDataset& ds, const AttackConfig& cfg) {
  nn::check_dims(model.spec, ds);
  AttackEval out;
  out.clean = nn::evaluate(model, ds);
  out.batch = attack::craft(model, ds.X, ds.y, cfg);
  out.attacked = nn::evaluate_inputs(model, out.batch.x_adv, ds.y, ds.fingerprint());
  out.attacked.attack = cfg;
  return out;
}

// ---------------------------------------------------------------------------
// Transferability

struct TransferCell {
  double rmse_clean;        // target model on clean inputs
  double rmse_transferred;  // target model on inputs crafted against the source
  double pct_increase;
};

/// cells[a][s][t]: attack a crafted against source s, evaluated on target t.
struct TransferMatrix {
  std::vector<std::string> model_ids;
  std::vector<std::string> archs;
  std::vector<AttackConfig> attacks;
  std::vector<std::vector<std::vector<TransferCell>>> cells;

  std::size_t models() const { return model_ids.size(); }
  const TransferCell& at(std::size_t attack, std::size_t source, std::size_t target) const {
    return cells.at(attack).at(source).at(target);
  }
};

inline TransferMatrix transfer_matrix(const std::vector<const nn::TrainedModel*>& models,
                                      const data::WindowedDataset& ds,
                                      const std::vector<AttackConfig>& attacks) {
  if (models.empty()) throw std::invalid_argument("transfer_matrix: no models");
  if (attacks.empty()) throw std::invalid_argument("transfer_matrix: no attacks");
  for (const auto* m : models) nn::check_dims(m->spec, ds);
  const std::uint64_t fp = ds.fingerprint();

  TransferMatrix tm;
  tm.attacks = attacks;
  std::vector<double> clean;
  for (const auto* m : models) {
    tm.model_ids.push_back(m->id());
    tm.archs.push_back(nn::to_string(m->spec.arch));
    clean.push_back(nn::evaluate(*m, ds).rmse);
  }
  for (const auto& cfg : attacks) {
    std::vector<std::vector<TransferCell>> grid;
    for (const auto* src : models) {
      const attack::AdversarialBatch crafted = attack::craft(*src, ds.X, ds.y, cfg);
      std::vector<TransferCell> row;
      for (std::size_t t = 0; t < models.size(); ++t) {
        const double r = nn::evaluate_inputs(*models[t], crafted.x_adv, ds.y, fp).rmse;
        row.push_back({clean[t], r, pct_increase(clean[t], r)});
      }
      grid.push_back(std::move(row));
    }
    tm.cells.push_back(std::move(grid));
  }
  return tm;
}

// ---------------------------------------------------------------------------
// Epsilon sweep

struct BimSchedule {
  double alpha = 0.001;
  bool alpha_relative = false;  // when set, step = alpha * epsilon
  std::size_t iters = 200;

  double step_for(double eps) const { return alpha_relative ? alpha * eps : alpha; }
};

struct SweepPoint {
  double epsilon;
  double rmse;
};

struct SweepResult {
  Kind kind;
  std::string model_id;
  double rmse_clean = 0;
  std::vector<SweepPoint> points;
};

inline SweepResult epsilon_sweep(const nn::TrainedModel& model,
                                 const data::WindowedDataset& ds, Kind kind,
                                 const std::vector<double>& eps_grid,
                                 const BimSchedule& bim = {}) {
  if (eps_grid.empty()) throw std::invalid_argument("epsilon_sweep: empty grid");
  for (std::size_t i = 0; i < eps_grid.size(); ++i) {
    if (!(eps_grid[i] >= 0.0) || (i > 0 && !(eps_grid[i] > eps_grid[i - 1]))) {
      throw std::invalid_argument(
          "epsilon_sweep: grid must be nonnegative and strictly increasing");
    }
  }
  nn::check_dims(model.spec, ds);
  SweepResult out;
  out.kind = kind;
  out.model_id = model.id();
  out.rmse_clean = nn::evaluate(model, ds).rmse;
  for (double eps : eps_grid) {
    const AttackConfig cfg = kind == Kind::FGSM
                                 ? AttackConfig::fgsm(eps)
                                 : AttackConfig::bim(eps, bim.step_for(eps), bim.iters);
    out.points.push_back({eps, attack_eval(model, ds, cfg).attacked.rmse});
  }
  return out;
}

/// Parses "start:stop:step" (inclusive stop, tolerant to rounding) or a
/// comma-separated list.
inline std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    double start, stop, step;
    char c1, c2;
    std::istringstream is(text);
    if (!(is >> start >> c1 >> stop >> c2 >> step) || c1 != ':' || c2 != ':' ||
        !(step > 0) || stop < start) {
      throw std::invalid_argument("bad epsilon grid '" + text + "'");
    }
    const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9));
    for (std::size_t i = 0; i <= n; ++i) {
      // Snap to 12 significant digits so 0.1 + 2 * 0.05 reads back as 0.2.
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.12g", start + static_cast<double>(i) * step);
      out.push_back(std::strtod(buf, nullptr));
    }
    return out;
  }
  std::istringstream is(text);
  std::string cell;
  while (std::getline(is, cell, ',')) {
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw std::invalid_argument("bad epsilon grid entry '" + cell + "'");
    }
  }
  if (out.empty()) throw std::invalid_argument("empty epsilon grid");
  return out;
}

// ---------------------------------------------------------------------------
// Report files

inline std::ofstream open_report(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data::DataError("cannot write '" + path + "'");
  return out;
}

inline Json summary_json(const nn::TrainedModel& model, const AttackConfig& cfg,
                         double rmse_clean, double rmse_attacked) {
  Json j;
  j["model"] = model.id();
  j["arch"] = nn::to_string(model.spec.arch);
  j["attack"] = attack::to_string(cfg.kind);
  j["epsilon"] = cfg.epsilon;
  j["alpha"] = cfg.kind == Kind::BIM ? Json(cfg.alpha) : Json(nullptr);
  j["iters"] = cfg.kind == Kind::BIM ? Json(cfg.iters) : Json(nullptr);
  j["rmse_clean"] = rmse_clean;
  j["rmse_attacked"] = rmse_attacked;
  j["pct_increase"] = pct_increase(rmse_clean, rmse_attacked);
  return j;
}

inline void write_json(const Json& j, const std::string& path) {
  auto out = open_report(path);
  out << j.dump(2) << '\n';
}

/// Per-window predictions of a clean/attacked pair.
inline void write_attack_csv(const AttackEval& r, const std::string& path) {
  auto out = open_report(path);
  out << "window_index,target,predicted_clean,predicted_attacked,max_abs_delta\n";
  for (std::size_t m = 0; m < r.clean.predictions.size(); ++m) {
    const auto& c = r.clean.predictions[m];
    out << c.index << ',' << data::format_value(c.target) << ','
        << data::format_value(c.predicted) << ','
        << data::format_value(r.attacked.predictions[m].predicted) << ','
        << data::format_value(r.batch.max_abs_delta[m]) << '\n';
  }
}

inline void write_eval_csv(const EvalReport& r, const std::string& path) {
  auto out = open_report(path);
  out << "window_index,target,predicted\n";
  for (const auto& p : r.predictions) {
    out << p.index << ',' << data::format_value(p.target) << ','
        << data::format_value(p.predicted) << '\n';
  }
}

inline void write_transfer_csv(const TransferMatrix& tm, const std::string& path) {
  auto out = open_report(path);
  out << "attack,source,target,rmse_clean,rmse_transferred,pct_increase\n";
  for (std::size_t a = 0; a < tm.attacks.size(); ++a) {
    for (std::size_t s = 0; s < tm.models(); ++s) {
      for (std::size_t t = 0; t < tm.models(); ++t) {
        const auto& c = tm.at(a, s, t);
        out << attack::to_string(tm.attacks[a].kind) << ",\"" << tm.model_ids[s]
            << "\",\"" << tm.model_ids[t] << "\"," << data::format_value(c.rmse_clean)
            << ',' << data::format_value(c.rmse_transferred) << ','
            << data::format_value(c.pct_increase) << '\n';
      }
    }
  }
}

inline Json transfer_json(const TransferMatrix& tm) {
  Json j;
  j["models"] = tm.model_ids;
  Json cells = Json::array();
  for (std::size_t a = 0; a < tm.attacks.size(); ++a) {
    const auto& cfg = tm.attacks[a];
    for (std::size_t s = 0; s < tm.models(); ++s) {
      for (std::size_t t = 0; t < tm.models(); ++t) {
        const auto& c = tm.at(a, s, t);
        Json row;
        row["model"] = tm.model_ids[t];
        row["arch"] = tm.archs[t];
        row["source"] = tm.model_ids[s];
        row["attack"] = attack::to_string(cfg.kind);
        row["epsilon"] = cfg.epsilon;
        row["alpha"] = cfg.kind == Kind::BIM ? Json(cfg.alpha) : Json(nullptr);
        row["iters"] = cfg.kind == Kind::BIM ? Json(cfg.iters) : Json(nullptr);
        row["rmse_clean"] = c.rmse_clean;
        row["rmse_attacked"] = c.rmse_transferred;
        row["pct_increase"] = c.pct_increase;
        cells.push_back(std::move(row));
      }
    }
  }
  j["cells"] = std::move(cells);
  return j;
}

inline void write_sweep_csv(const SweepResult& r, const std::string& path) {
  auto out = open_report(path);
  out << "model,attack,epsilon,rmse\n";
  for (const auto& p : r.points) {
    out << '"' << r.model_id << "\"," << attack::to_string(r.kind) << ','
        << data::format_value(p.epsilon) << ',' << data::format_value(p.rmse) << '\n';
  }
}

}  // namespace tsfool::experiment
