#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsfool/neural.hpp"

// Model file layout, every integer and float little-endian:
//
//   "TSFOOL1"                      7-byte magic
//   u8  arch                       0 CNN, 1 LSTM, 2 GRU
//   u32 lookback, u32 input_dim, u32 conv_kernel, u64 seed
//   u32 count, u32 hidden width x count
//   u32 count, u32 dense head width x count
//   u64 dataset fingerprint, u32 epochs, u32 batch size, f64 learning rate
//   u32 count, (u32 epoch, f64 loss) x count            training history
//   u32 count, (u32 len, name, f64 min, f64 max) x count scaler channels
//   u64 scaler fit begin, u64 scaler fit end
//   u32 count, then per parameter block:
//     u32 name length, name bytes, u32 rank, u64 extent x rank,
//     f64 value x product(extents)
namespace tsfool::io {

inline constexpr char kMagic[] = "TSFOOL1";
inline constexpr std::size_t kMagicLen = 7;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void raw(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    le(bits, 8);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }

 private:
  void le(std::uint64_t v, int n) {
    unsigned char b[8];
    for (int i = 0; i < n; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    raw(b, static_cast<std::size_t>(n));
  }
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}
  void raw(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw FormatError("model file truncated");
  }
  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() {
    const std::uint64_t bits = le(8);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 20)) throw FormatError("implausible string length in model file");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

 private:
  std::uint64_t le(int n) {
    unsigned char b[8];
    raw(b, static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::istream& is_;
};

inline void write_model(std::ostream& os, const nn::TrainedModel& m) {
  Writer w(os);
  const auto& s = m.spec;
  w.raw(kMagic, kMagicLen);
  w.u8(static_cast<std::uint8_t>(s.arch));
  w.u32(static_cast<std::uint32_t>(s.lookback));
  w.u32(static_cast<std::uint32_t>(s.input_dim));
  w.u32(static_cast<std::uint32_t>(s.conv_kernel));
  w.u64(s.seed);
  w.u32(static_cast<std::uint32_t>(s.hidden_widths.size()));
  for (auto v : s.hidden_widths) w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(s.dense_head.size()));
  for (auto v : s.dense_head) w.u32(static_cast<std::uint32_t>(v));

  w.u64(m.meta.dataset_fingerprint);
  w.u32(static_cast<std::uint32_t>(m.meta.epochs));
  w.u32(static_cast<std::uint32_t>(m.meta.batch_size));
  w.f64(m.meta.learning_rate);
  w.u32(static_cast<std::uint32_t>(m.history.size()));
  for (const auto& h : m.history) {
    w.u32(static_cast<std::uint32_t>(h.epoch));
    w.f64(h.train_loss);
  }
  const auto& sc = m.scaler;
  w.u32(static_cast<std::uint32_t>(sc.names().size()));
  for (std::size_t c = 0; c < sc.names().size(); ++c) {
    w.str(sc.names()[c]);
    w.f64(sc.mins()[c]);
    w.f64(sc.maxs()[c]);
  }
  w.u64(sc.fit_begin());
  w.u64(sc.fit_end());

  w.u32(static_cast<std::uint32_t>(m.params.size()));
  for (const auto& [name, t] : m.params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.u64(e);
    for (real v : t.data()) w.f64(static_cast<double>(v));
  }
}

inline nn::TrainedModel read_model(std::istream& is) {
  Reader r(is);
  char magic[kMagicLen];
  r.raw(magic, kMagicLen);
  if (std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw FormatError("not a model file (bad magic)");
  }
  nn::TrainedModel m;
  auto& s = m.spec;
  const std::uint8_t arch = r.u8();
  if (arch > 2) throw FormatError("unknown architecture code " + std::to_string(arch));
  s.arch = static_cast<nn::Arch>(arch);
  s.lookback = r.u32();
  s.input_dim = r.u32();
  s.conv_kernel = r.u32();
  s.seed = r.u64();
  s.hidden_widths.resize(r.u32());
  for (auto& v : s.hidden_widths) v = r.u32();
  s.dense_head.resize(r.u32());
  for (auto& v : s.dense_head) v = r.u32();
  try {
    s.validate();
  } catch (const nn::SpecError& e) {
    throw FormatError(std::string("invalid model spec in file: ") + e.what());
  }

  m.meta.dataset_fingerprint = r.u64();
  m.meta.epochs = r.u32();
  m.meta.batch_size = r.u32();
  m.meta.learning_rate = r.f64();
  m.history.resize(r.u32());
  for (auto& h : m.history) {
    h.epoch = r.u32();
    h.train_loss = r.f64();
  }
  const std::uint32_t channels = r.u32();
  std::vector<std::string> names(channels);
  std::vector<double> lo(channels), hi(channels);
  for (std::uint32_t c = 0; c < channels; ++c) {
    names[c] = r.str();
    lo[c] = r.f64();
    hi[c] = r.f64();
  }
  const std::uint64_t fit_begin = r.u64();
  const std::uint64_t fit_end = r.u64();
  if (channels > 0) {
    m.scaler = data::Scaler::from_parts(std::move(names), std::move(lo), std::move(hi),
                                        fit_begin, fit_end);
  }

  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("implausible tensor rank for '" + name + "'");
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    Tensor t(shape);
    for (auto& v : t.data()) v = static_cast<real>(r.f64());
    m.params.emplace(std::move(name), std::move(t));
  }
  try {
    nn::check_params(s, m.params);
  } catch (const nn::SpecError& e) {
    throw FormatError(std::string("parameter blocks do not match spec: ") + e.what());
  }
  return m;
}

inline void save_model(const nn::TrainedModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write model file '" + path + "'");
  write_model(os, m);
  if (!os) throw FormatError("write to '" + path + "' failed");
}

inline nn::TrainedModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open model file '" + path + "'");
  return read_model(is);
}

}  // namespace tsfool::io
