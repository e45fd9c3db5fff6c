#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tsfool/tensor.hpp"

namespace tsfool::data {

/// Malformed input or an inconsistent dataset layout.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kGap = std::numeric_limits<double>::quiet_NaN();

inline bool is_gap(double v) { return std::isnan(v); }

/// Timestamped multivariate series. Gaps are stored as NaN.
struct SeriesFrame {
  std::vector<std::int64_t> timestamps;  // seconds since the Unix epoch, UTC
  std::vector<std::string> names;
  std::vector<std::vector<double>> channels;

  std::size_t rows() const { return timestamps.size(); }
  std::size_t width() const { return names.size(); }

  std::size_t channel_index(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw DataError("unknown channel '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
  }

  const std::vector<double>& channel(const std::string& name) const {
    return channels[channel_index(name)];
  }

  void validate() const {
    if (names.size() != channels.size()) {
      throw DataError("frame has " + std::to_string(names.size()) +
                      " names but " + std::to_string(channels.size()) +
                      " channels");
    }
    for (std::size_t c = 0; c < channels.size(); ++c) {
      if (channels[c].size() != timestamps.size()) {
        throw DataError("channel '" + names[c] + "' has " +
                        std::to_string(channels[c].size()) + " values for " +
                        std::to_string(timestamps.size()) + " timestamps");
      }
    }
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
      if (timestamps[i] <= timestamps[i - 1]) {
        throw DataError("timestamps not strictly increasing at row " +
                        std::to_string(i));
      }
    }
  }

  /// Rows [begin, end).
  SeriesFrame rows_between(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows()) throw DataError("row range out of bounds");
    SeriesFrame out;
    out.names = names;
    out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                          timestamps.begin() + static_cast<std::ptrdiff_t>(end));
    for (const auto& ch : channels) {
      out.channels.emplace_back(ch.begin() + static_cast<std::ptrdiff_t>(begin),
                                ch.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
  }

  bool operator==(const SeriesFrame& other) const {
    if (timestamps != other.timestamps || names != other.names ||
        channels.size() != other.channels.size()) {
      return false;
    }
    for (std::size_t c = 0; c < channels.size(); ++c) {
      const auto& a = channels[c];
      const auto& b = other.channels[c];
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (is_gap(a[i]) != is_gap(b[i])) return false;
        if (!is_gap(a[i]) && a[i] != b[i]) return false;
      }
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Fingerprints

class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u64(bits);
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvSchema {
  /// Name of the timestamp column; "Date+Time" joins two columns with a space.
  std::string timestamp_column = "timestamp";
  /// strftime-style pattern, or "epoch" for integer seconds.
  std::string time_format = "%Y-%m-%d %H:%M:%S";
  /// Channels to read, in order. Empty means every non-timestamp column.
  std::vector<std::string> columns;
  char delimiter = ',';
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n\"");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n\"");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, delim)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

inline std::optional<double> parse_number(const std::string& cell) {
  if (cell.empty() || cell == "?") return std::nullopt;
  const char* begin = cell.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

inline std::int64_t parse_time(const std::string& text, const std::string& format) {
  if (format == "epoch") {
    try {
      std::size_t used = 0;
      long long v = std::stoll(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      throw DataError("cannot parse epoch timestamp '" + text + "'");
    }
  }
  std::tm tm{};
  std::istringstream is(text);
  is >> std::get_time(&tm, format.c_str());
  if (is.fail()) {
    throw DataError("cannot parse timestamp '" + text + "' with format '" +
                    format + "'");
  }
  return static_cast<std::int64_t>(timegm(&tm));
}

inline std::string format_time(std::int64_t t, const std::string& format) {
  if (format == "epoch") return std::to_string(t);
  const std::time_t tt = static_cast<std::time_t>(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[128];
  const std::size_t n = std::strftime(buf, sizeof buf, format.c_str(), &tm);
  return std::string(buf, n);
}

/// Reads a delimited file. "?" and empty cells become gaps.
inline SeriesFrame load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) {
    throw DataError("'" + path + "' is empty");
  }
  const auto header = detail::split(line, schema.delimiter);
  auto find_col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw DataError("'" + path + "' has no column '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
  };

  std::vector<std::size_t> time_cols;
  {
    std::string spec = schema.timestamp_column;
    std::size_t pos;
    while ((pos = spec.find('+')) != std::string::npos) {
      time_cols.push_back(find_col(spec.substr(0, pos)));
      spec = spec.substr(pos + 1);
    }
    time_cols.push_back(find_col(spec));
  }

  SeriesFrame frame;
  std::vector<std::size_t> value_cols;
  if (schema.columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (std::find(time_cols.begin(), time_cols.end(), i) != time_cols.end()) continue;
      frame.names.push_back(header[i]);
      value_cols.push_back(i);
    }
  } else {
    for (const auto& name : schema.columns) {
      frame.names.push_back(name);
      value_cols.push_back(find_col(name));
    }
  }
  frame.channels.resize(value_cols.size());

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line, schema.delimiter);
    std::string stamp;
    for (std::size_t k = 0; k < time_cols.size(); ++k) {
      if (time_cols[k] >= cells.size()) {
        throw DataError("'" + path + "' line " + std::to_string(line_no) +
                        ": missing timestamp");
      }
      if (k) stamp += ' ';
      stamp += cells[time_cols[k]];
    }
    frame.timestamps.push_back(parse_time(stamp, schema.time_format));
    for (std::size_t c = 0; c < value_cols.size(); ++c) {
      const std::size_t col = value_cols[c];
      auto v = col < cells.size() ? detail::parse_number(cells[col]) : std::nullopt;
      frame.channels[c].push_back(v ? *v : kGap);
    }
  }
  if (frame.rows() == 0) throw DataError("'" + path + "' has no data rows");
  frame.validate();
  return frame;
}

inline std::string format_value(double v) {
  if (is_gap(v)) return "?";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, res.ptr);
}

/// Writes a frame in the format load_csv reads back with the default schema.
inline void write_csv(const SeriesFrame& frame, const std::string& path,
                      const std::string& time_format = "%Y-%m-%d %H:%M:%S") {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "timestamp";
  for (const auto& n : frame.names) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < frame.rows(); ++r) {
    out << format_time(frame.timestamps[r], time_format);
    for (const auto& ch : frame.channels) out << ',' << format_value(ch[r]);
    out << '\n';
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Gap handling and resampling

/// Forward-fills gaps per channel and drops leading rows that still hold gaps.
inline SeriesFrame fill_gaps(const SeriesFrame& frame) {
  SeriesFrame out = frame;
  for (auto& ch : out.channels) {
    for (std::size_t i = 1; i < ch.size(); ++i) {
      if (is_gap(ch[i])) ch[i] = ch[i - 1];
    }
  }
  std::size_t first = 0;
  while (first < out.rows()) {
    bool any_gap = false;
    for (const auto& ch : out.channels) any_gap = any_gap || is_gap(ch[first]);
    if (!any_gap) break;
    ++first;
  }
  return out.rows_between(first, out.rows());
}

/// Bucket means over fixed periods aligned to multiples of `period` seconds.
/// All-gap (or empty) buckets repeat the previous bucket; leading gaps drop.
inline SeriesFrame resample_mean(const SeriesFrame& frame, std::int64_t period) {
  if (frame.rows() == 0) throw DataError("resample_mean: empty frame");
  if (period <= 0) throw DataError("resample_mean: period must be positive");
  frame.validate();
  std::int64_t spacing = period;
  for (std::size_t i = 1; i < frame.rows(); ++i) {
    spacing = std::min(spacing, frame.timestamps[i] - frame.timestamps[i - 1]);
  }
  if (frame.rows() > 1 && period % spacing != 0) {
    throw DataError("resample_mean: period " + std::to_string(period) +
                    "s is not a multiple of the source spacing " +
                    std::to_string(spacing) + "s");
  }
  auto bucket_of = [period](std::int64_t t) {
    std::int64_t q = t / period;
    if (t % period != 0 && t < 0) --q;
    return q;
  };
  const std::int64_t first = bucket_of(frame.timestamps.front());
  const std::int64_t last = bucket_of(frame.timestamps.back());
  const auto buckets = static_cast<std::size_t>(last - first + 1);

  SeriesFrame out;
  out.names = frame.names;
  out.timestamps.resize(buckets);
  for (std::size_t b = 0; b < buckets; ++b) {
    out.timestamps[b] = (first + static_cast<std::int64_t>(b)) * period;
  }
  out.channels.assign(frame.width(), std::vector<double>(buckets, kGap));
  for (std::size_t c = 0; c < frame.width(); ++c) {
    std::vector<double> total(buckets, 0.0);
    std::vector<std::size_t> count(buckets, 0);
    for (std::size_t r = 0; r < frame.rows(); ++r) {
      const double v = frame.channels[c][r];
      if (is_gap(v)) continue;
      const auto b = static_cast<std::size_t>(bucket_of(frame.timestamps[r]) - first);
      total[b] += v;
      ++count[b];
    }
    auto& ch = out.channels[c];
    for (std::size_t b = 0; b < buckets; ++b) {
      if (count[b] > 0) {
        ch[b] = total[b] / static_cast<double>(count[b]);
      } else if (b > 0) {
        ch[b] = ch[b - 1];
      }
    }
  }
  return fill_gaps(out);
}

// ---------------------------------------------------------------------------
// Scaling

/// Per-channel min-max scaling to [0, 1], fitted on a row range.
class Scaler {
 public:
  Scaler() = default;

  static Scaler fit(const SeriesFrame& frame, std::size_t begin, std::size_t end) {
    if (begin >= end || end > frame.rows()) {
      throw DataError("fit_scaler: empty or out-of-range training rows [" +
                      std::to_string(begin) + "," + std::to_string(end) + ")");
    }
    Scaler s;
    s.names_ = frame.names;
    s.fit_begin_ = begin;
    s.fit_end_ = end;
    for (std::size_t c = 0; c < frame.width(); ++c) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (std::size_t r = begin; r < end; ++r) {
        const double v = frame.channels[c][r];
        if (is_gap(v)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (!(lo <= hi)) {
        throw DataError("fit_scaler: channel '" + frame.names[c] +
                        "' has no values in the training rows");
      }
      s.min_.push_back(lo);
      s.max_.push_back(hi);
    }
    return s;
  }

  static Scaler from_parts(std::vector<std::string> names, std::vector<double> lo,
                           std::vector<double> hi, std::size_t fit_begin = 0,
                           std::size_t fit_end = 0) {
    if (names.size() != lo.size() || names.size() != hi.size()) {
      throw DataError("Scaler: mismatched part lengths");
    }
    for (std::size_t c = 0; c < lo.size(); ++c) {
      if (!(hi[c] >= lo[c])) throw DataError("Scaler: max < min for " + names[c]);
    }
    Scaler s;
    s.names_ = std::move(names);
    s.min_ = std::move(lo);
    s.max_ = std::move(hi);
    s.fit_begin_ = fit_begin;
    s.fit_end_ = fit_end;
    return s;
  }

  bool fitted() const { return !names_.empty(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<double>& mins() const { return min_; }
  const std::vector<double>& maxs() const { return max_; }
  std::size_t fit_begin() const { return fit_begin_; }
  std::size_t fit_end() const { return fit_end_; }

  double apply(std::size_t c, double v) const {
    const double range = max_[c] - min_[c];
    if (is_gap(v)) return v;
    return range > 0 ? (v - min_[c]) / range : 0.0;
  }

  double invert(std::size_t c, double v) const {
    if (is_gap(v)) return v;
    return min_[c] + v * (max_[c] - min_[c]);
  }

  SeriesFrame apply(const SeriesFrame& frame) const { return map(frame, false); }
  SeriesFrame invert(const SeriesFrame& frame) const { return map(frame, true); }

  bool operator==(const Scaler&) const = default;

 private:
  SeriesFrame map(const SeriesFrame& frame, bool inverse) const {
    if (!fitted()) throw DataError("scaler used before fit");
    SeriesFrame out = frame;
    for (std::size_t c = 0; c < frame.width(); ++c) {
      auto it = std::find(names_.begin(), names_.end(), frame.names[c]);
      if (it == names_.end()) {
        throw DataError("scaler has no statistics for channel '" +
                        frame.names[c] + "'");
      }
      const auto k = static_cast<std::size_t>(it - names_.begin());
      for (auto& v : out.channels[c]) v = inverse ? invert(k, v) : apply(k, v);
    }
    return out;
  }

  std::vector<std::string> names_;
  std::vector<double> min_;
  std::vector<double> max_;
  std::size_t fit_begin_ = 0;
  std::size_t fit_end_ = 0;
};

// ---------------------------------------------------------------------------
// Windowing

/// Sliding windows X[m] = rows [m, m+T) of the input channels, y[m] = target
/// at row m+T.
struct WindowedDataset {
  Tensor X;  // [M, T, N]
  Tensor y;  // [M, 1]
  std::size_t lookback = 0;
  std::string target_channel;
  std::vector<std::string> input_channels;
  Scaler scaler;
  std::vector<std::size_t> target_rows;  // source-frame row of each y
  std::size_t source_rows = 0;

  std::size_t size() const { return target_rows.size(); }
  std::size_t input_dim() const { return input_channels.size(); }

  std::uint64_t fingerprint() const {
    Fnv1a h;
    h.u64(lookback);
    h.str(target_channel);
    h.u64(input_channels.size());
    for (const auto& n : input_channels) h.str(n);
    h.u64(size());
    for (real v : X.data()) h.f64(static_cast<double>(v));
    for (real v : y.data()) h.f64(static_cast<double>(v));
    return h.value();
  }

  /// Windows at the given positions, in that order.
  WindowedDataset subset(const std::vector<std::size_t>& idx) const {
    WindowedDataset out;
    out.lookback = lookback;
    out.target_channel = target_channel;
    out.input_channels = input_channels;
    out.scaler = scaler;
    out.source_rows = source_rows;
    const std::size_t stride = lookback * input_dim();
    out.X = Tensor(Shape{idx.size(), lookback, input_dim()});
    out.y = Tensor(Shape{idx.size(), 1});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::size_t m = idx.at(k);
      if (m >= size()) throw DataError("subset: window index out of range");
      std::copy_n(X.data().begin() + static_cast<std::ptrdiff_t>(m * stride), stride,
                  out.X.data().begin() + static_cast<std::ptrdiff_t>(k * stride));
      out.y[k] = y[m];
      out.target_rows.push_back(target_rows[m]);
    }
    return out;
  }
};

/// Builds next-step windows. Empty `input_channels` means every channel.
inline WindowedDataset make_windows(const SeriesFrame& frame, std::size_t lookback,
                                    const std::string& target_channel,
                                    std::vector<std::string> input_channels = {},
                                    const Scaler& scaler = {}) {
  frame.validate();
  if (lookback == 0) throw DataError("make_windows: lookback must be positive");
  if (frame.rows() <= lookback) {
    throw DataError("make_windows: " + std::to_string(frame.rows()) +
                    " rows cannot supply a window of lookback " +
                    std::to_string(lookback));
  }
  if (input_channels.empty()) input_channels = frame.names;
  const std::size_t target_idx = frame.channel_index(target_channel);
  std::vector<std::size_t> cols;
  for (const auto& n : input_channels) cols.push_back(frame.channel_index(n));
  for (std::size_t c : cols) {
    for (double v : frame.channels[c]) {
      if (is_gap(v)) throw DataError("make_windows: channel '" + frame.names[c] + "' has gaps");
    }
  }
  for (double v : frame.channels[target_idx]) {
    if (is_gap(v)) throw DataError("make_windows: target channel has gaps");
  }

  WindowedDataset ds;
  const std::size_t m_count = frame.rows() - lookback;
  const std::size_t n = cols.size();
  ds.X = Tensor(Shape{m_count, lookback, n});
  ds.y = Tensor(Shape{m_count, 1});
  ds.lookback = lookback;
  ds.target_channel = target_channel;
  ds.input_channels = std::move(input_channels);
  ds.scaler = scaler;
  ds.source_rows = frame.rows();
  ds.target_rows.resize(m_count);
  for (std::size_t m = 0; m < m_count; ++m) {
    for (std::size_t t = 0; t < lookback; ++t) {
      for (std::size_t c = 0; c < n; ++c) {
        ds.X[(m * lookback + t) * n + c] =
            static_cast<real>(frame.channels[cols[c]][m + t]);
      }
    }
    ds.y[m] = static_cast<real>(frame.channels[target_idx][m + lookback]);
    ds.target_rows[m] = m + lookback;
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Chronological split

/// First row of the test portion: the latest `fraction` of rows are test.
inline std::size_t split_row(std::size_t rows, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw DataError("split fraction must lie in (0, 1), got " +
                    std::to_string(fraction));
  }
  const auto test = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(rows)));
  if (test == 0 || test >= rows) {
    throw DataError("split of " + std::to_string(rows) + " rows at fraction " +
                    std::to_string(fraction) + " leaves an empty side");
  }
  return rows - test;
}

inline std::pair<SeriesFrame, SeriesFrame> split_chronological(
    const SeriesFrame& frame, double fraction) {
  const std::size_t cut = split_row(frame.rows(), fraction);
  return {frame.rows_between(0, cut), frame.rows_between(cut, frame.rows())};
}

/// Windows whose target row falls at or after the split row go to test.
inline std::pair<WindowedDataset, WindowedDataset> split_chronological(
    const WindowedDataset& ds, double fraction) {
  const std::size_t cut = split_row(ds.source_rows, fraction);
  std::vector<std::size_t> train, test;
  for (std::size_t m = 0; m < ds.size(); ++m) {
    (ds.target_rows[m] < cut ? train : test).push_back(m);
  }
  if (train.empty() || test.empty()) {
    throw DataError("chronological split leaves no training or no test windows");
  }
  return {ds.subset(train), ds.subset(test)};
}

// ---------------------------------------------------------------------------
// End-to-end preparation

struct Recipe {
  std::size_t lookback = 14;
  std::string target_channel;
  std::vector<std::string> input_channels;  // empty: all channels
  bool exclude_target = false;
  std::int64_t resample_period = 0;  // seconds; 0 keeps the source rows
  double test_fraction = 0.3;
};

struct Prepared {
  WindowedDataset train;
  WindowedDataset test;
  Scaler scaler;
};

inline std::vector<std::string> resolve_inputs(const SeriesFrame& frame,
                                               const Recipe& recipe) {
  std::vector<std::string> inputs =
      recipe.input_channels.empty() ? frame.names : recipe.input_channels;
  if (recipe.exclude_target) {
    std::erase(inputs, recipe.target_channel);
  }
  if (inputs.empty()) throw DataError("recipe selects no input channels");
  return inputs;
}

/// Resample, fill gaps, fit the scaler on training rows only (unless one is
/// supplied), window, and split chronologically.
inline Prepared prepare(const SeriesFrame& raw, const Recipe& recipe,
                        const Scaler* fixed_scaler = nullptr) {
  SeriesFrame frame = recipe.resample_period > 0
                          ? resample_mean(raw, recipe.resample_period)
                          : fill_gaps(raw);
  const std::string target =
      recipe.target_channel.empty() ? frame.names.front() : recipe.target_channel;
  Recipe r = recipe;
  r.target_channel = target;
  const std::size_t cut = split_row(frame.rows(), recipe.test_fraction);
  Scaler scaler = fixed_scaler ? *fixed_scaler : Scaler::fit(frame, 0, cut);
  SeriesFrame scaled = scaler.apply(frame);
  WindowedDataset all =
      make_windows(scaled, recipe.lookback, target, resolve_inputs(frame, r), scaler);
  auto [train, test] = split_chronological(all, recipe.test_fraction);
  return {std::move(train), std::move(test), std::move(scaler)};
}

}  // namespace tsfool::data
