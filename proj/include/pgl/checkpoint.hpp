#pragma once

// PGLC checkpoint format (all integers and floats little-endian):
//
//   "PGLC" | u32 version = 1 | u32 tensor count
//   per tensor: u32 name length | UTF-8 name | u32 rank | u64 dims[rank] | f32 data
//   u32 CRC-32 of every byte after the version field
//
// A checkpoint holds the model parameters, batch-norm running statistics,
// optimizer velocities ("opt.velocity.<param>") and the epoch counter
// ("meta.epoch").

#include <bit>
#include <boost/crc.hpp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "pgl/decoupled_net.hpp"
#include "pgl/optim.hpp"

namespace pgl {

inline constexpr char kCheckpointMagic[4] = {'P', 'G', 'L', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> data;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const void* p, std::size_t n) {
    auto* c = static_cast<const unsigned char*>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
  std::vector<unsigned char> bytes;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t size) : p_(data), n_(size) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p_[at_ + i]) << (8 * i);
    at_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p_[at_ + i]) << (8 * i);
    at_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + at_), n);
    at_ += n;
    return s;
  }
  std::size_t remaining() const { return n_ - at_; }

 private:
  void need(std::size_t k) const {
    if (k > n_ - at_) throw CorruptionError("checkpoint truncated");
  }
  const unsigned char* p_;
  std::size_t n_;
  std::size_t at_ = 0;
};

inline std::uint32_t crc32(const unsigned char* data, std::size_t n) {
  boost::crc_32_type crc;
  crc.process_bytes(data, n);
  return crc.checksum();
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    std::uint64_t n = 1;
    for (auto d : t.dims) n *= d;
    if (n != t.data.size()) throw ShapeError("checkpoint tensor " + t.name + " has inconsistent dims");
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name.data(), t.name.size());
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u64(d);
    for (auto v : t.data) w.f32(v);
  }
  w.u32(detail::crc32(w.bytes.data() + 8, w.bytes.size() - 8));
  return std::move(w.bytes);
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16) throw CorruptionError("checkpoint truncated");
  if (!std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin())) throw CorruptionError("bad checkpoint magic");
  detail::ByteReader r(bytes.data() + 4, bytes.size() - 4);
  if (auto v = r.u32(); v != kCheckpointVersion)
    throw CorruptionError("unsupported checkpoint version " + std::to_string(v));
  const std::size_t payload_end = bytes.size() - 4;
  const std::uint32_t stored = detail::ByteReader(bytes.data() + payload_end, 4).u32();
  if (detail::crc32(bytes.data() + 8, payload_end - 8) != stored) throw CorruptionError("checkpoint CRC mismatch");

  detail::ByteReader body(bytes.data() + 8, payload_end - 8);
  Checkpoint ck;
  const std::uint32_t count = body.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = body.str(body.u32());
    const std::uint32_t rank = body.u32();
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.dims.push_back(body.u64());
      n *= t.dims.back();
    }
    if (n > body.remaining() / 4) throw CorruptionError("checkpoint truncated in tensor " + t.name);
    t.data.resize(n);
    for (auto& v : t.data) v = body.f32();
    ck.tensors.push_back(std::move(t));
  }
  if (body.remaining() != 0) throw CorruptionError("trailing bytes in checkpoint");
  return ck;
}

/// Snapshot of model parameters, running statistics, velocities and epoch.
inline Checkpoint make_checkpoint(DecoupledModel& model, const OptimizerState& opt, int epoch) {
  Checkpoint ck;
  auto params = all_params(model);
  for (auto& p : params) {
    NamedTensor t{p.name, {}, p.tensor->values()};
    for (auto d : p.tensor->shape()) t.dims.push_back(d);
    ck.tensors.push_back(std::move(t));
  }
  for (auto& b : all_buffers(model)) ck.tensors.push_back({b.name, {b.values->size()}, *b.values});
  for (auto& p : params) {
    auto it = opt.velocity.find(p.name);
    std::vector<float> v = it == opt.velocity.end() ? std::vector<float>(p.tensor->numel(), 0.0f) : it->second;
    NamedTensor t{"opt.velocity." + p.name, {}, std::move(v)};
    for (auto d : p.tensor->shape()) t.dims.push_back(d);
    ck.tensors.push_back(std::move(t));
  }
  ck.tensors.push_back({"meta.epoch", {1}, {static_cast<float>(epoch)}});
  return ck;
}

/// Copies checkpoint contents into a model of identical architecture.
/// Returns the stored epoch counter.
inline int apply_checkpoint(const Checkpoint& ck, DecoupledModel& model, OptimizerState* opt = nullptr) {
  auto load = [&](const std::string& name, std::span<float> dst) {
    const auto* t = ck.find(name);
    if (!t) throw CorruptionError("checkpoint lacks tensor " + name);
    if (t->data.size() != dst.size()) throw ShapeError("checkpoint tensor " + name + " has the wrong size");
    std::copy(t->data.begin(), t->data.end(), dst.begin());
  };
  for (auto& p : all_params(model)) {
    load(p.name, p.tensor->mutable_data());
    if (opt) {
      auto& v = opt->velocity[p.name];
      v.assign(p.tensor->numel(), 0.0f);
      load("opt.velocity." + p.name, v);
    }
  }
  for (auto& b : all_buffers(model)) load(b.name, *b.values);
  const auto* e = ck.find("meta.epoch");
  return e && !e->data.empty() ? static_cast<int>(e->data[0]) : 0;
}

inline void save_checkpoint(DecoupledModel& model, const OptimizerState& opt, int epoch,
                            const std::filesystem::path& path) {
  auto bytes = encode_checkpoint(make_checkpoint(model, opt, epoch));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace pgl
