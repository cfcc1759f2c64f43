#pragma once

// Binary checkpoint format (all integers little-endian):
//
//   "P2PC"                      4-byte magic
//   u32  version                (kCheckpointVersion)
//   u64  n, n bytes             serialized RunConfig text (may be empty)
//   u64  epoch                  epochs completed
//   u64  rng seed, u64 rng epoch
//   u64  optimizer step count
//   u32  count, records         model tensors
//   u32  count, records         optimizer moment buffers
//
// record := u32 name length, name bytes, u8 dtype (1 = f64), u32 rank,
//           rank x u64 extents, numel x 8-byte little-endian IEEE-754 f64.
//
// Records are written in the order given; callers pass name-sorted records so
// that save -> load -> save is byte-identical.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "p2p/autodiff/tensor.hpp"
#include "p2p/errors.hpp"

namespace p2p::pipeline {

inline constexpr char kCheckpointMagic[4] = {'P', '2', 'P', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 1;

struct TensorRecord {
  std::string name;
  ad::Shape shape;
  std::vector<double> data;

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct Checkpoint {
  std::string config_text;
  std::uint64_t epoch = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_epoch = 0;
  std::uint64_t optimizer_steps = 0;
  std::vector<TensorRecord> tensors;
  std::vector<TensorRecord> optimizer_state;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return need(1)[0]; }
  std::uint32_t u32() {
    auto p = need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto p = need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::uint64_t n) {
    auto p = need(n);
    return std::string(reinterpret_cast<const char*>(p.data()), p.size());
  }
  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> need(std::uint64_t n) {
    if (n > data_.size() - pos_) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    auto s = data_.subspan(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline void write_records(Writer& w, const std::vector<TensorRecord>& records) {
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name);
    w.u8(kDtypeF64);
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (auto e : r.shape) w.u64(e);
    for (double v : r.data) w.f64(v);
  }
}

inline std::vector<TensorRecord> read_records(Reader& r) {
  const auto count = r.u32();
  std::vector<TensorRecord> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord rec;
    rec.name = r.str(r.u32());
    if (const auto dtype = r.u8(); dtype != kDtypeF64)
      throw FormatError("tensor '" + rec.name + "': unsupported dtype tag " + std::to_string(dtype));
    const auto rank = r.u32();
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = r.u64();
      if (e == 0) throw FormatError("tensor '" + rec.name + "': zero extent");
      rec.shape.push_back(static_cast<std::size_t>(e));
      n *= e;
    }
    if (n > r.remaining() / 8) throw FormatError("checkpoint truncated inside tensor '" + rec.name + "'");
    rec.data.resize(static_cast<std::size_t>(n));
    for (auto& v : rec.data) v = r.f64();
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const Checkpoint& ck) {
  detail::Writer w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u64(ck.config_text.size());
  w.bytes(ck.config_text);
  w.u64(ck.epoch);
  w.u64(ck.rng_seed);
  w.u64(ck.rng_epoch);
  w.u64(ck.optimizer_steps);
  detail::write_records(w, ck.tensors);
  detail::write_records(w, ck.optimizer_state);
  return w.take();
}

inline Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  detail::Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError("not a checkpoint file (bad magic)");
  r.str(4);
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  Checkpoint ck;
  ck.config_text = r.str(r.u64());
  ck.epoch = r.u64();
  ck.rng_seed = r.u64();
  ck.rng_epoch = r.u64();
  ck.optimizer_steps = r.u64();
  ck.tensors = detail::read_records(r);
  ck.optimizer_state = detail::read_records(r);
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
  return ck;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  write_file_bytes(path, serialize(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize(read_file_bytes(path)); }

}  // namespace p2p::pipeline
