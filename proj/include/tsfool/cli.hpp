#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tsfool/attack.hpp"
#include "tsfool/data.hpp"
#include "tsfool/experiment.hpp"
#include "tsfool/neural.hpp"
#include "tsfool/serialize.hpp"
#include "tsfool/synth.hpp"
#include "tsfool/train.hpp"

namespace tsfool::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kDataError = 3, kNumerical = 4 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat "section.key" -> raw value map. Later layers override earlier ones.
using Settings = std::map<std::string, std::string>;

struct KeyDoc {
  const char* key;
  const char* help;
};

inline const std::vector<KeyDoc>& known_keys() {
  static const std::vector<KeyDoc> keys{
      {"run.seed", "global seed; model, shuffle and synth seeds default to it"},
      {"run.out", "output directory"},
      {"run.timestamp", "write generated_at into JSON reports (true/false)"},
      {"run.preset", "named preset applied before the config file"},
      {"data.csv", "input CSV; when empty a synthetic series is generated"},
      {"data.synth_rows", "rows of the synthetic series"},
      {"data.synth_channels", "channels of the synthetic series"},
      {"data.synth_seed", "seed of the synthetic series"},
      {"data.timestamp_column", "timestamp column, or A+B to join two columns"},
      {"data.time_format", "strftime pattern of the timestamp, or epoch"},
      {"data.delimiter", "CSV field delimiter (one character)"},
      {"data.columns", "comma list of channels to read (default: all)"},
      {"data.target", "target channel (default: first channel)"},
      {"data.inputs", "comma list of input channels (default: all)"},
      {"data.exclude_target", "drop the target from the inputs (true/false)"},
      {"data.resample", "bucket-mean period in seconds, 0 keeps source rows"},
      {"data.lookback", "window length"},
      {"data.test_fraction", "latest fraction of rows used for testing"},
      {"model.arch", "cnn, lstm or gru"},
      {"model.widths", "comma list of hidden widths"},
      {"model.seed", "initialization seed"},
      {"train.epochs", "training epochs"},
      {"train.batch_size", "mini-batch size"},
      {"train.learning_rate", "Adam learning rate"},
      {"train.shuffle_seed", "mini-batch shuffle seed"},
      {"train.clip_norm", "global gradient-norm cap, 0 disables"},
      {"attack.kind", "fgsm or bim; transfer also accepts a comma list"},
      {"attack.epsilon", "maximum L-inf perturbation in normalized units"},
      {"attack.alpha", "BIM step size"},
      {"attack.iters", "BIM iterations"},
      {"attack.mask", "comma list of channels that may be perturbed (default: all)"},
      {"attack.clamp", "lo,hi range applied to crafted values (default: none)"},
      {"attack.signature", "number of leading windows exported to signature.csv"},
      {"sweep.grid", "epsilon grid: start:stop:step or a comma list"},
      {"sweep.relative_alpha", "BIM step = alpha * epsilon at each grid point"},
  };
  return keys;
}

inline bool is_known_key(const std::string& key) {
  for (const auto& k : known_keys()) {
    if (key == k.key) return true;
  }
  return false;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Parses key=value lines grouped under [section] headers. '#' and ';' start
/// comment lines.
inline Settings parse_config(const std::string& text, const std::string& origin = "config") {
  Settings out;
  std::istringstream in(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (t.front() == '[') {
      if (t.back() != ']') throw UsageError(where + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw UsageError(where + ": expected key = value");
    if (section.empty()) throw UsageError(where + ": key outside of a [section]");
    const std::string key = section + "." + trim(t.substr(0, eq));
    if (!is_known_key(key)) throw UsageError(where + ": unknown key '" + key + "'");
    out[key] = trim(t.substr(eq + 1));
  }
  return out;
}

inline Settings load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

// ---------------------------------------------------------------------------
// Presets

struct Preset {
  std::string name;
  std::string description;
  Settings values;
};

inline Settings power_data() {
  return {{"data.timestamp_column", "Date+Time"},
          {"data.time_format", "%d/%m/%Y %H:%M:%S"},
          {"data.delimiter", ";"},
          {"data.columns",
           "Global_active_power,Global_reactive_power,Voltage,Global_intensity,"
           "Sub_metering_1,Sub_metering_2,Sub_metering_3"},
          {"data.target", "Global_active_power"},
          {"data.resample", "3600"},
          {"data.lookback", "14"},
          {"data.test_fraction", "0.25"}};
}

inline Settings stock_data() {
  return {{"data.timestamp_column", "Date"},
          {"data.time_format", "%Y-%m-%d"},
          {"data.delimiter", ","},
          {"data.columns", "Open,High,Low,Close,Volume"},
          {"data.target", "Open"},
          {"data.resample", "0"},
          {"data.lookback", "60"},
          {"data.test_fraction", "0.3"}};
}

inline Settings with(Settings base, const Settings& extra) {
  for (const auto& [k, v] : extra) base[k] = v;
  return base;
}

inline Settings model_train(const std::string& arch, const std::string& widths,
                            const std::string& batch, const std::string& epochs) {
  return {{"model.arch", arch},
          {"model.widths", widths},
          {"train.batch_size", batch},
          {"train.epochs", epochs}};
}

inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> all{
      {"power-cnn", "household power, CNN(60,60,60) lh(14), batch 512, 200 epochs",
       with(power_data(), model_train("cnn", "60,60,60", "512", "200"))},
      {"power-lstm", "household power, LSTM(30,30,30) lh(14), batch 32, 250 epochs",
       with(power_data(), model_train("lstm", "30,30,30", "32", "250"))},
      {"power-gru", "household power, GRU(30,30,30) lh(14), batch 32, 250 epochs",
       with(power_data(), model_train("gru", "30,30,30", "32", "250"))},
      {"power-lstm-alt", "household power, LSTM(100,100,100) lh(14), batch 32, 250 epochs",
       with(power_data(), model_train("lstm", "100,100,100", "32", "250"))},
      {"power-gru-alt", "household power, GRU(100,100,100) lh(14), batch 32, 250 epochs",
       with(power_data(), model_train("gru", "100,100,100", "32", "250"))},
      {"stock-cnn", "daily stock, CNN(60,60,60) lh(60), batch 14, 250 epochs",
       with(stock_data(), model_train("cnn", "60,60,60", "14", "250"))},
      {"stock-lstm", "daily stock, LSTM(100,100,100) lh(60), batch 14, 300 epochs",
       with(stock_data(), model_train("lstm", "100,100,100", "14", "300"))},
      {"stock-gru", "daily stock, GRU(100,100,100) lh(60), batch 14, 300 epochs",
       with(stock_data(), model_train("gru", "100,100,100", "14", "300"))},
      {"stock-lstm-alt", "daily stock, LSTM(30,30,30) lh(60), batch 14, 300 epochs",
       with(stock_data(), model_train("lstm", "30,30,30", "14", "300"))},
      {"stock-gru-alt", "daily stock, GRU(30,30,30) lh(60), batch 14, 300 epochs",
       with(stock_data(), model_train("gru", "30,30,30", "14", "300"))},
  };
  return all;
}

inline const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets()) {
    if (p.name == name) return p;
  }
  std::string names;
  for (const auto& p : presets()) names += (names.empty() ? "" : ", ") + p.name;
  throw UsageError("unknown preset '" + name + "' (available: " + names + ")");
}

// ---------------------------------------------------------------------------
// Resolved configuration

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  bool timestamp = true;

  std::string csv;
  std::size_t synth_rows = 2000;
  std::size_t synth_channels = 7;
  std::uint64_t synth_seed = 1;
  data::CsvSchema schema;
  data::Recipe recipe;
  bool lookback_given = false;

  nn::Arch arch = nn::Arch::LSTM;
  std::vector<std::size_t> widths{30, 30, 30};
  std::uint64_t model_seed = 1;
  nn::TrainConfig train;

  std::vector<attack::Kind> kinds{attack::Kind::FGSM};
  attack::AttackConfig attack;
  std::vector<std::string> mask_channels;
  std::size_t signature_windows = 0;

  std::vector<double> sweep_grid;
  bool sweep_relative_alpha = false;

  attack::AttackConfig attack_for(attack::Kind k) const {
    attack::AttackConfig c = attack;
    c.kind = k;
    return c;
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string cell;
  while (std::getline(is, cell, ',')) {
    cell = trim(cell);
    if (!cell.empty()) out.push_back(cell);
  }
  return out;
}

class Reader {
 public:
  explicit Reader(const Settings& s) : s_(s) {}

  bool has(const std::string& key) const { return s_.count(key) > 0; }
  std::string str(const std::string& key, const std::string& fallback) const {
    auto it = s_.find(key);
    return it == s_.end() ? fallback : it->second;
  }
  double real(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const std::string v = s_.at(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw UsageError(key + ": expected a number, got '" + v + "'");
    }
  }
  std::uint64_t count(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string v = s_.at(key);
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
      throw UsageError(key + ": expected a nonnegative integer, got '" + v + "'");
    }
    try {
      return std::stoull(v);
    } catch (const std::exception&) {
      throw UsageError(key + ": integer out of range '" + v + "'");
    }
  }
  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = s_.at(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError(key + ": expected true or false, got '" + v + "'");
  }

 private:
  const Settings& s_;
};

}  // namespace detail

/// Turns layered settings into a validated RunConfig. Throws UsageError on
/// any bad value so no work starts with a broken configuration.
inline RunConfig resolve(const Settings& s) {
  for (const auto& [k, _] : s) {
    if (!is_known_key(k)) throw UsageError("unknown key '" + k + "'");
  }
  detail::Reader r(s);
  RunConfig c;
  c.seed = r.count("run.seed", 1);
  c.out_dir = r.str("run.out", "out");
  if (c.out_dir.empty()) throw UsageError("run.out: output directory is empty");
  c.timestamp = r.flag("run.timestamp", true);

  c.csv = r.str("data.csv", "");
  c.synth_rows = r.count("data.synth_rows", 2000);
  c.synth_channels = r.count("data.synth_channels", 7);
  c.synth_seed = r.count("data.synth_seed", c.seed);
  if (c.csv.empty()) {
    if (c.synth_rows < 100) throw UsageError("data.synth_rows: need at least 100 rows");
    if (c.synth_channels < 2) throw UsageError("data.synth_channels: need at least 2");
  } else if (!std::filesystem::is_regular_file(c.csv)) {
    throw UsageError("data.csv: no such file '" + c.csv + "'");
  }
  c.schema.timestamp_column = r.str("data.timestamp_column", c.schema.timestamp_column);
  c.schema.time_format = r.str("data.time_format", c.schema.time_format);
  const std::string delim = r.str("data.delimiter", ",");
  if (delim.size() != 1) throw UsageError("data.delimiter: expected one character");
  c.schema.delimiter = delim[0];
  c.schema.columns = detail::split_list(r.str("data.columns", ""));

  c.recipe.target_channel = r.str("data.target", c.csv.empty() ? "target" : "");
  c.recipe.input_channels = detail::split_list(r.str("data.inputs", ""));
  c.recipe.exclude_target = r.flag("data.exclude_target", false);
  c.recipe.resample_period = static_cast<std::int64_t>(r.count("data.resample", 0));
  c.lookback_given = r.has("data.lookback");
  c.recipe.lookback = r.count("data.lookback", 14);
  if (c.recipe.lookback < 1) throw UsageError("data.lookback: must be >= 1");
  c.recipe.test_fraction = r.real("data.test_fraction", 0.3);
  if (!(c.recipe.test_fraction > 0 && c.recipe.test_fraction < 1)) {
    throw UsageError("data.test_fraction: must lie in (0, 1)");
  }

  try {
    c.arch = nn::parse_arch(r.str("model.arch", "lstm"));
  } catch (const std::exception& e) {
    throw UsageError(std::string("model.arch: ") + e.what());
  }
  c.widths.clear();
  for (const auto& w : detail::split_list(r.str("model.widths", "30,30,30"))) {
    Settings one{{"model.widths", w}};
    c.widths.push_back(detail::Reader(one).count("model.widths", 0));
  }
  if (c.widths.empty()) throw UsageError("model.widths: at least one layer required");
  for (auto w : c.widths) {
    if (w == 0) throw UsageError("model.widths: widths must be positive");
  }
  c.model_seed = r.count("model.seed", c.seed);

  c.train.epochs = r.count("train.epochs", c.train.epochs);
  c.train.batch_size = r.count("train.batch_size", c.train.batch_size);
  c.train.learning_rate = r.real("train.learning_rate", c.train.learning_rate);
  c.train.shuffle_seed = r.count("train.shuffle_seed", c.seed);
  c.train.clip_norm = r.real("train.clip_norm", c.train.clip_norm);
  try {
    c.train.validate();
  } catch (const std::exception& e) {
    throw UsageError(std::string("train: ") + e.what());
  }

  c.kinds.clear();
  for (const auto& k : detail::split_list(r.str("attack.kind", "fgsm"))) {
    try {
      c.kinds.push_back(attack::parse_kind(k));
    } catch (const std::exception& e) {
      throw UsageError(std::string("attack.kind: ") + e.what());
    }
  }
  if (c.kinds.empty()) throw UsageError("attack.kind: no attack given");
  c.attack.kind = c.kinds.front();
  c.attack.epsilon = r.real("attack.epsilon", c.attack.epsilon);
  c.attack.alpha = r.real("attack.alpha", c.attack.alpha);
  c.attack.iters = r.count("attack.iters", c.attack.iters);
  c.mask_channels = detail::split_list(r.str("attack.mask", ""));
  if (r.has("attack.clamp")) {
    const auto parts = detail::split_list(r.str("attack.clamp", ""));
    if (parts.size() != 2) throw UsageError("attack.clamp: expected lo,hi");
    Settings lohi{{"lo", parts[0]}, {"hi", parts[1]}};
    detail::Reader lr(lohi);
    c.attack.domain_clamp = std::pair{lr.real("lo", 0), lr.real("hi", 0)};
  }
  c.signature_windows = r.count("attack.signature", 0);
  for (auto k : c.kinds) {
    try {
      c.attack_for(k).validate();
    } catch (const std::exception& e) {
      throw UsageError(std::string("attack: ") + e.what());
    }
  }

  if (r.has("sweep.grid")) {
    try {
      c.sweep_grid = experiment::parse_grid(r.str("sweep.grid", ""));
    } catch (const std::exception& e) {
      throw UsageError(std::string("sweep.grid: ") + e.what());
    }
    for (std::size_t i = 0; i < c.sweep_grid.size(); ++i) {
      if (!(c.sweep_grid[i] >= 0) || (i > 0 && !(c.sweep_grid[i] > c.sweep_grid[i - 1]))) {
        throw UsageError("sweep.grid: must be nonnegative and strictly increasing");
      }
    }
  }
  c.sweep_relative_alpha = r.flag("sweep.relative_alpha", false);
  return c;
}

// ---------------------------------------------------------------------------
// Pipeline helpers

inline data::SeriesFrame load_frame(const RunConfig& c) {
  if (c.csv.empty()) return data::synth_generate(c.synth_seed, c.synth_rows, c.synth_channels);
  return data::load_csv(c.csv, c.schema);
}

inline data::Recipe recipe_for(const RunConfig& c, const nn::ModelSpec* spec) {
  data::Recipe r = c.recipe;
  if (spec && !c.lookback_given) r.lookback = spec->lookback;
  return r;
}

inline std::vector<bool> mask_for(const RunConfig& c, const data::WindowedDataset& ds) {
  if (c.mask_channels.empty()) return {};
  std::vector<bool> mask(ds.input_dim(), false);
  for (const auto& name : c.mask_channels) {
    auto it = std::find(ds.input_channels.begin(), ds.input_channels.end(), name);
    if (it == ds.input_channels.end()) {
      throw UsageError("attack.mask: '" + name + "' is not an input channel");
    }
    mask[static_cast<std::size_t>(it - ds.input_channels.begin())] = true;
  }
  return mask;
}

inline nn::TrainedModel load_model_file(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw UsageError("no such model file '" + path + "'");
  }
  return io::load_model(path);
}

inline std::filesystem::path ensure_out_dir(const RunConfig& c) {
  std::error_code ec;
  std::filesystem::create_directories(c.out_dir, ec);
  if (ec || !std::filesystem::is_directory(c.out_dir)) {
    throw UsageError("cannot create output directory '" + c.out_dir + "'");
  }
  return c.out_dir;
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  return data::format_time(static_cast<std::int64_t>(t), "%Y-%m-%dT%H:%M:%SZ");
}

inline void stamp(experiment::Json& j, const RunConfig& c) {
  if (c.timestamp) j["generated_at"] = utc_now();
}

inline std::string path_in(const std::filesystem::path& dir, const std::string& name) {
  return (dir / name).string();
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_synth(const RunConfig& c, const std::string& output, std::ostream& out) {
  if (c.synth_rows < 100) throw UsageError("synth: need at least 100 rows");
  const auto frame = data::synth_generate(c.synth_seed, c.synth_rows, c.synth_channels);
  std::string path = output;
  if (path.empty()) path = path_in(ensure_out_dir(c), "synth.csv");
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
  }
  std::ofstream probe(path, std::ios::app);
  if (!probe) throw UsageError("cannot write '" + path + "'");
  probe.close();
  data::write_csv(frame, path);
  out << "wrote " << frame.rows() << " rows x " << frame.width() << " channels to " << path
      << '\n';
  return kOk;
}

inline int cmd_prep(const RunConfig& c, std::ostream& out) {
  const auto raw = load_frame(c);
  const auto p = data::prepare(raw, c.recipe);
  const auto dir = ensure_out_dir(c);
  experiment::Json j;
  j["source_rows"] = p.train.source_rows;
  j["lookback"] = p.train.lookback;
  j["target"] = p.train.target_channel;
  j["inputs"] = p.train.input_channels;
  j["train_windows"] = p.train.size();
  j["test_windows"] = p.test.size();
  j["train_fingerprint"] = data::hex64(p.train.fingerprint());
  j["test_fingerprint"] = data::hex64(p.test.fingerprint());
  experiment::Json sc = experiment::Json::array();
  for (std::size_t k = 0; k < p.scaler.names().size(); ++k) {
    sc.push_back({{"channel", p.scaler.names()[k]},
                  {"min", p.scaler.mins()[k]},
                  {"max", p.scaler.maxs()[k]}});
  }
  j["scaler"] = std::move(sc);
  j["scaler_fit_rows"] = {p.scaler.fit_begin(), p.scaler.fit_end()};
  stamp(j, c);
  const data::SeriesFrame frame = c.recipe.resample_period > 0
                                      ? data::resample_mean(raw, c.recipe.resample_period)
                                      : data::fill_gaps(raw);
  data::write_csv(p.scaler.apply(frame), path_in(dir, "normalized.csv"));
  experiment::write_json(j, path_in(dir, "prep.json"));
  out << "train windows " << p.train.size() << ", test windows " << p.test.size() << '\n';
  return kOk;
}

inline int cmd_train(const RunConfig& c, const std::string& model_out, std::ostream& out) {
  const auto raw = load_frame(c);
  const auto p = data::prepare(raw, c.recipe);
  const auto spec =
      nn::ModelSpec::make(c.arch, c.widths, c.recipe.lookback, p.train.input_dim(), c.model_seed);
  const auto model = nn::train(nn::build_model(spec), p.train, c.train);
  const double rmse = nn::evaluate(model, p.test).rmse;

  const auto dir = ensure_out_dir(c);
  const std::string model_path = model_out.empty() ? path_in(dir, "model.bin") : model_out;
  io::save_model(model, model_path);
  {
    auto h = experiment::open_report(path_in(dir, "history.csv"));
    h << "epoch,train_loss\n";
    for (const auto& e : model.history) {
      h << e.epoch << ',' << data::format_value(e.train_loss) << '\n';
    }
  }
  experiment::Json j;
  j["model"] = model.id();
  j["arch"] = nn::to_string(model.spec.arch);
  j["epochs"] = c.train.epochs;
  j["batch_size"] = c.train.batch_size;
  j["learning_rate"] = c.train.learning_rate;
  j["train_fingerprint"] = data::hex64(model.meta.dataset_fingerprint);
  j["final_train_loss"] = model.history.back().train_loss;
  j["rmse_test"] = rmse;
  stamp(j, c);
  experiment::write_json(j, path_in(dir, "train.json"));
  out << model.id() << ": final train loss "
      << data::format_value(model.history.back().train_loss) << ", test RMSE "
      << data::format_value(rmse) << " -> " << model_path << '\n';
  return kOk;
}

inline data::WindowedDataset test_set_for(const RunConfig& c, const nn::TrainedModel& m) {
  const auto raw = load_frame(c);
  if (!m.scaler.fitted()) throw data::DataError("model file carries no scaler");
  return data::prepare(raw, recipe_for(c, &m.spec), &m.scaler).test;
}

inline int cmd_eval(const RunConfig& c, const std::string& model_path, std::ostream& out) {
  const auto model = load_model_file(model_path);
  const auto ds = test_set_for(c, model);
  const auto r = nn::evaluate(model, ds);
  const auto dir = ensure_out_dir(c);
  experiment::write_eval_csv(r, path_in(dir, "eval.csv"));
  experiment::Json j;
  j["model"] = model.id();
  j["arch"] = nn::to_string(model.spec.arch);
  j["dataset"] = data::hex64(r.dataset_fingerprint);
  j["windows"] = ds.size();
  j["rmse"] = r.rmse;
  stamp(j, c);
  experiment::write_json(j, path_in(dir, "eval.json"));
  out << model.id() << ": test RMSE " << data::format_value(r.rmse) << '\n';
  return kOk;
}

inline int cmd_attack(const RunConfig& c, const std::string& model_path, std::ostream& out,
                      std::ostream& err) {
  const auto model = load_model_file(model_path);
  const auto ds = test_set_for(c, model);
  auto cfg = c.attack_for(c.kinds.front());
  cfg.feature_mask = mask_for(c, ds);
  if (auto warn = cfg.validate(); !warn.empty()) err << "warning: " << warn << '\n';
  const auto r = experiment::attack_eval(model, ds, cfg);

  const auto dir = ensure_out_dir(c);
  experiment::write_attack_csv(r, path_in(dir, "attack.csv"));
  auto j = experiment::summary_json(model, cfg, r.clean.rmse, r.attacked.rmse);
  stamp(j, c);
  experiment::write_json(j, path_in(dir, "attack.json"));
  if (c.signature_windows > 0) {
    std::vector<std::size_t> windows;
    for (std::size_t m = 0; m < std::min(c.signature_windows, ds.size()); ++m) {
      windows.push_back(m);
    }
    attack::write_signature_csv(r.batch, ds.input_channels, path_in(dir, "signature.csv"),
                                windows);
  }
  out << model.id() << " " << attack::to_string(cfg.kind) << " eps "
      << data::format_value(cfg.epsilon) << ": RMSE " << data::format_value(r.clean.rmse)
      << " -> " << data::format_value(r.attacked.rmse) << " ("
      << data::format_value(r.pct_increase()) << "%)\n";
  return kOk;
}

inline int cmd_transfer(const RunConfig& c, const std::vector<std::string>& model_paths,
                        std::ostream& out) {
  if (model_paths.empty()) throw UsageError("transfer: at least one --models file required");
  std::vector<nn::TrainedModel> models;
  for (const auto& p : model_paths) models.push_back(load_model_file(p));
  const auto ds = test_set_for(c, models.front());
  std::vector<const nn::TrainedModel*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  std::vector<attack::AttackConfig> attacks;
  for (auto k : c.kinds) {
    auto cfg = c.attack_for(k);
    cfg.feature_mask = mask_for(c, ds);
    attacks.push_back(cfg);
  }
  const auto tm = experiment::transfer_matrix(ptrs, ds, attacks);
  const auto dir = ensure_out_dir(c);
  experiment::write_transfer_csv(tm, path_in(dir, "transfer.csv"));
  auto j = experiment::transfer_json(tm);
  stamp(j, c);
  experiment::write_json(j, path_in(dir, "transfer.json"));
  for (std::size_t a = 0; a < tm.attacks.size(); ++a) {
    out << attack::to_string(tm.attacks[a].kind) << " pct increase (rows: source, cols: target)\n";
    for (std::size_t s = 0; s < tm.models(); ++s) {
      out << "  " << tm.model_ids[s] << ':';
      for (std::size_t t = 0; t < tm.models(); ++t) {
        out << ' ' << data::format_value(tm.at(a, s, t).pct_increase);
      }
      out << '\n';
    }
  }
  return kOk;
}

inline int cmd_sweep(const RunConfig& c, const std::string& model_path, std::ostream& out) {
  if (c.sweep_grid.empty()) throw UsageError("sweep: --eps grid required");
  const auto model = load_model_file(model_path);
  const auto ds = test_set_for(c, model);
  if (!c.mask_channels.empty()) throw UsageError("sweep: channel masks are not supported");
  experiment::BimSchedule bim{c.attack.alpha, c.sweep_relative_alpha, c.attack.iters};
  const auto r = experiment::epsilon_sweep(model, ds, c.kinds.front(), c.sweep_grid, bim);
  const auto dir = ensure_out_dir(c);
  experiment::write_sweep_csv(r, path_in(dir, "sweep.csv"));
  experiment::Json j;
  j["model"] = r.model_id;
  j["arch"] = nn::to_string(model.spec.arch);
  j["attack"] = attack::to_string(r.kind);
  j["rmse_clean"] = r.rmse_clean;
  experiment::Json pts = experiment::Json::array();
  for (const auto& p : r.points) {
    const auto cfg = r.kind == attack::Kind::FGSM
                         ? attack::AttackConfig::fgsm(p.epsilon)
                         : attack::AttackConfig::bim(p.epsilon, bim.step_for(p.epsilon), bim.iters);
    pts.push_back(experiment::summary_json(model, cfg, r.rmse_clean, p.rmse));
  }
  j["points"] = std::move(pts);
  stamp(j, c);
  experiment::write_json(j, path_in(dir, "sweep.json"));
  for (const auto& p : r.points) {
    out << "eps " << data::format_value(p.epsilon) << ": RMSE " << data::format_value(p.rmse)
        << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// Argument parsing

namespace detail {

struct Layers {
  std::string config_path;
  std::string preset;
  Settings flags;
};

inline void bind(CLI::App* app, Layers& l, const std::string& flag, const std::string& key,
                 const std::string& help) {
  app->add_option_function<std::string>(
      flag, [&l, key](const std::string& v) { l.flags[key] = v; }, help);
}

inline void run_flags(CLI::App* app, Layers& l) {
  app->add_option("--config", l.config_path, "key=value config file with [sections]");
  app->add_option("--preset", l.preset, "named preset (see `tsfool presets`)");
  bind(app, l, "--seed", "run.seed", "global seed (overrides TSFOOL_SEED)");
  bind(app, l, "--out", "run.out", "output directory (default: out)");
  app->add_flag_callback("--no-timestamp", [&l] { l.flags["run.timestamp"] = "false"; },
                         "omit generated_at from JSON reports");
}

inline void data_flags(CLI::App* app, Layers& l) {
  bind(app, l, "--csv", "data.csv", "input CSV (default: synthetic series)");
  bind(app, l, "--synth-rows", "data.synth_rows", "synthetic rows when no CSV is given");
  bind(app, l, "--synth-channels", "data.synth_channels", "synthetic channels");
  bind(app, l, "--synth-seed", "data.synth_seed", "synthetic series seed");
  bind(app, l, "--timestamp-column", "data.timestamp_column", "timestamp column, A+B joins two");
  bind(app, l, "--time-format", "data.time_format", "strftime pattern or epoch");
  bind(app, l, "--delimiter", "data.delimiter", "CSV delimiter");
  bind(app, l, "--columns", "data.columns", "comma list of channels to read");
  bind(app, l, "--target", "data.target", "target channel");
  bind(app, l, "--inputs", "data.inputs", "comma list of input channels");
  app->add_flag_callback("--exclude-target", [&l] { l.flags["data.exclude_target"] = "true"; },
                         "drop the target from the inputs");
  bind(app, l, "--resample", "data.resample", "bucket-mean period in seconds");
  bind(app, l, "--lookback", "data.lookback", "window length");
  bind(app, l, "--test-fraction", "data.test_fraction", "latest fraction of rows for testing");
}

inline void model_flags(CLI::App* app, Layers& l) {
  bind(app, l, "--arch", "model.arch", "cnn, lstm or gru");
  bind(app, l, "--widths", "model.widths", "comma list of hidden widths");
  bind(app, l, "--model-seed", "model.seed", "initialization seed");
  bind(app, l, "--epochs", "train.epochs", "training epochs");
  bind(app, l, "--batch-size", "train.batch_size", "mini-batch size");
  bind(app, l, "--lr", "train.learning_rate", "Adam learning rate");
  bind(app, l, "--shuffle-seed", "train.shuffle_seed", "mini-batch shuffle seed");
  bind(app, l, "--clip-norm", "train.clip_norm", "gradient-norm cap, 0 disables");
}

inline void attack_flags(CLI::App* app, Layers& l, bool with_eps) {
  bind(app, l, "--kind", "attack.kind", "fgsm or bim");
  if (with_eps) bind(app, l, "--eps", "attack.epsilon", "maximum perturbation");
  bind(app, l, "--alpha", "attack.alpha", "BIM step size");
  bind(app, l, "--iters", "attack.iters", "BIM iterations");
  bind(app, l, "--mask", "attack.mask", "comma list of channels that may be perturbed");
  bind(app, l, "--clamp", "attack.clamp", "lo,hi range for crafted values");
}

/// defaults < preset < config file < TSFOOL_SEED < flags
inline Settings merge(const Layers& l) {
  Settings s;
  Settings file;
  if (!l.config_path.empty()) file = load_config(l.config_path);
  std::string preset = l.preset;
  if (preset.empty() && file.count("run.preset")) preset = file.at("run.preset");
  if (!preset.empty()) s = find_preset(preset).values;
  for (const auto& [k, v] : file) s[k] = v;
  if (const char* env = std::getenv("TSFOOL_SEED"); env && *env) s["run.seed"] = env;
  for (const auto& [k, v] : l.flags) s[k] = v;
  return s;
}

}  // namespace detail

/// Runs one command line. Never calls exit(); returns the process exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Adversarial attacks on multivariate time-series regression models", "tsfool"};
  app.require_subcommand(1);
  detail::Layers l;
  std::string output, model_path, model_out;
  std::vector<std::string> model_paths;

  auto* synth = app.add_subcommand("synth", "write a seeded synthetic series as CSV");
  detail::run_flags(synth, l);
  detail::bind(synth, l, "--rows", "data.synth_rows", "rows (>= 100)");
  detail::bind(synth, l, "--channels", "data.synth_channels", "channels (>= 2)");
  synth->add_option("--output,-o", output, "CSV path (default: <out>/synth.csv)");

  auto* prep = app.add_subcommand("prep", "scale, window and split a dataset; write a summary");
  detail::run_flags(prep, l);
  detail::data_flags(prep, l);

  auto* train = app.add_subcommand("train", "train a model and save it");
  detail::run_flags(train, l);
  detail::data_flags(train, l);
  detail::model_flags(train, l);
  train->add_option("--model-out", model_out, "model path (default: <out>/model.bin)");

  auto* eval = app.add_subcommand("eval", "test-set RMSE of a saved model");
  detail::run_flags(eval, l);
  detail::data_flags(eval, l);
  eval->add_option("--model", model_path, "model file")->required();

  auto* atk = app.add_subcommand("attack", "craft adversarial test windows and report RMSE");
  detail::run_flags(atk, l);
  detail::data_flags(atk, l);
  detail::attack_flags(atk, l, true);
  atk->add_option("--model", model_path, "model file")->required();
  detail::bind(atk, l, "--signature", "attack.signature",
               "export the first N windows to signature.csv");

  auto* transfer = app.add_subcommand("transfer", "cross-model transferability matrix");
  detail::run_flags(transfer, l);
  detail::data_flags(transfer, l);
  detail::attack_flags(transfer, l, true);
  transfer->add_option("--models", model_paths, "model files")->required();

  auto* sweep = app.add_subcommand("sweep", "attacked RMSE over an epsilon grid");
  detail::run_flags(sweep, l);
  detail::data_flags(sweep, l);
  detail::attack_flags(sweep, l, false);
  sweep->add_option("--model", model_path, "model file")->required();
  detail::bind(sweep, l, "--eps", "sweep.grid", "grid start:stop:step or comma list");
  sweep->add_flag_callback("--relative-alpha", [&l] { l.flags["sweep.relative_alpha"] = "true"; },
                           "BIM step = alpha * epsilon");

  auto* list = app.add_subcommand("presets", "list the built-in presets");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (list->parsed()) {
      for (const auto& p : presets()) {
        out << std::left << std::setw(16) << p.name << p.description << '\n';
      }
      return kOk;
    }
    const RunConfig c = resolve(detail::merge(l));
    if (synth->parsed()) return cmd_synth(c, output, out);
    if (prep->parsed()) return cmd_prep(c, out);
    if (train->parsed()) return cmd_train(c, model_out, out);
    if (eval->parsed()) return cmd_eval(c, model_path, out);
    if (atk->parsed()) return cmd_attack(c, model_path, out, err);
    if (transfer->parsed()) return cmd_transfer(c, model_paths, out);
    if (sweep->parsed()) return cmd_sweep(c, model_path, out);
    return kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const nn::SpecError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const nn::NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << '\n';
    return kDataError;
  } catch (const data::DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const io::FormatError& e) {
    err << "model file error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

inline int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace tsfool::cli
