// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary tensor checkpoints.
//
// Layout (all integers little-endian):
//   8 bytes   magic "BELLACKP"
//   u32       format version (1)
//   repeated until end of file:
//     u32     name length, then that many bytes of UTF-8 name
//     u32     rank, then rank x u32 dims
//     f32     payload, product(dims) values

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bella/numcore/tensor.hpp"

namespace bella::numcore {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'B', 'E', 'L', 'L', 'A', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Ordered name -> tensor map; record order in the file follows name order.
using TensorMap = std::map<std::string, Tensor<float>>;

std::vector<std::uint8_t> encode_checkpoint(const TensorMap& tensors);
TensorMap decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the raw f32 bytes of the tensor (shape included).
std::uint64_t tensor_checksum(const Tensor<float>& t);
/// Combined checksum over names, shapes and values of a tensor map.
std::uint64_t checksum(const TensorMap& tensors);

/// Tensors whose names start with `prefix`, prefix kept.
TensorMap with_prefix(const TensorMap& tensors, const std::string& prefix);

}  // namespace bella::numcore
