// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include "bella/numcore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace bella::numcore {
namespace {

static_assert(sizeof(float) == 4);

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TensorMap& tensors) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.values()) put_f32(out, v);
  }
  return out;
}

TensorMap decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  Reader r(bytes);
  r.str(8);
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  TensorMap out;
  while (!r.done()) {
    const auto name = r.str(r.u32());
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = r.f32();
    if (!out.emplace(name, Tensor<float>(std::move(shape), std::move(data))).second)
      throw CheckpointError("duplicate tensor record '" + name + "'");
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors) {
  const auto bytes = encode_checkpoint(tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("failed writing " + path.string());
}

TensorMap load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::uint64_t tensor_checksum(const Tensor<float>& t) {
  std::uint64_t h = kFnvOffset;
  for (auto d : t.shape()) {
    const auto d32 = static_cast<std::uint32_t>(d);
    fnv(h, &d32, 4);
  }
  fnv(h, t.values().data(), t.size() * sizeof(float));
  return h;
}

std::uint64_t checksum(const TensorMap& tensors) {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : tensors) {
    fnv(h, name.data(), name.size());
    const auto th = tensor_checksum(t);
    fnv(h, &th, sizeof th);
  }
  return h;
}

TensorMap with_prefix(const TensorMap& tensors, const std::string& prefix) {
  TensorMap out;
  for (const auto& [name, t] : tensors)
    if (name.rfind(prefix, 0) == 0) out.emplace(name, t);
  return out;
}

}  // namespace bella::numcore
