#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "noisylab/error.hpp"
#include "noisylab/network.hpp"
#include "noisylab/optim.hpp"

namespace noisylab {

// Layout (all integers and floats little-endian):
//   "NLAB" | version u32 | descriptor count u32
//   per descriptor: kind tag u8, then its dims as u32 (count fixed per kind)
//   every parameter tensor as f64, in layer order
//   Adam: step u64 | lr, beta1, beta2, epsilon, weight_decay f64 | first moments | second moments
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Network network;
  AdamState optimizer;
};

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) {
      throw FormatError("checkpoint truncated: need " + std::to_string(pos_ + n) + " bytes, have " +
                        std::to_string(in_.size()));
    }
  }
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const { return pos_ == in_.size(); }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Network& net, const AdamState& opt) {
  detail::ByteWriter w;
  w.bytes("NLAB", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(net.specs().size()));
  for (const auto& s : net.specs()) {
    w.u8(static_cast<std::uint8_t>(s.kind));
    for (auto d : s.dims) w.u32(d);
  }
  const auto params = net.parameters();
  for (const auto* p : params)
    for (double v : p->values()) w.f64(v);
  if (opt.first_moment.size() != params.size() || opt.second_moment.size() != params.size()) {
    throw StateError("optimizer state does not match network parameters");
  }
  w.u64(opt.step_count);
  w.f64(opt.learning_rate);
  w.f64(opt.beta1);
  w.f64(opt.beta2);
  w.f64(opt.epsilon);
  w.f64(opt.weight_decay);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (opt.first_moment[k].size() != params[k]->size()) throw StateError("moment buffer length mismatch");
    for (double v : opt.first_moment[k]) w.f64(v);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (opt.second_moment[k].size() != params[k]->size()) throw StateError("moment buffer length mismatch");
    for (double v : opt.second_moment[k]) w.f64(v);
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), "NLAB", 4) != 0) throw FormatError("not a checkpoint: bad magic bytes");
  for (int i = 0; i < 4; ++i) r.u8();
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.u32();
  std::vector<LayerSpec> specs;
  for (std::uint32_t i = 0; i < count; ++i) {
    LayerSpec s;
    s.kind = static_cast<LayerKind>(r.u8());
    const auto n = expected_dim_count(s.kind);
    for (std::size_t d = 0; d < n; ++d) s.dims.push_back(r.u32());
    specs.push_back(std::move(s));
  }
  // Build once to learn the parameter shapes, then fill.
  Network shape_probe = Network::from_parameters(specs, {}, 0);
  std::vector<std::vector<double>> values;
  for (const auto* p : std::as_const(shape_probe).parameters()) {
    std::vector<double> v(p->size());
    for (double& x : v) x = r.f64();
    values.push_back(std::move(v));
  }
  Checkpoint ck{Network::from_parameters(specs, values), AdamState{}};
  ck.optimizer.step_count = r.u64();
  ck.optimizer.learning_rate = r.f64();
  ck.optimizer.beta1 = r.f64();
  ck.optimizer.beta2 = r.f64();
  ck.optimizer.epsilon = r.f64();
  ck.optimizer.weight_decay = r.f64();
  for (auto* moments : {&ck.optimizer.first_moment, &ck.optimizer.second_moment}) {
    for (const auto& v : values) {
      std::vector<double> m(v.size());
      for (double& x : m) x = r.f64();
      moments->push_back(std::move(m));
    }
  }
  if (!r.done()) throw FormatError("checkpoint has " + std::to_string(bytes.size() - r.position()) + " trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Network& net, const AdamState& opt) {
  const auto bytes = encode_checkpoint(net, opt);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace noisylab
