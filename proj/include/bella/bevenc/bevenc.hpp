// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Frozen bird's-eye-view encoder: rasterize a scene onto a 32x32 grid with
// 9 channels, then mix the channels with a fixed 3x3 convolution and tanh.
//
// Grid geometry: +-32 m around ego at 2 m per cell. Row 0 is the far-front
// edge (front = decreasing row index), column 0 the far-right edge:
//   row = floor((32 - x) / 2), col = floor((y + 32) / 2)
// Channels:
//   0..5  occupancy of car, truck, bus, bicycle, motorcycle, pedestrian
//   6     speed / 15, clipped to [0, 1]
//   7, 8  unit velocity direction (cos, sin); zero when stationary
// The ego cell (x = 0, y = 0) carries the ego's own speed in channel 6 and
// heading (1, 0) in channels 7..8 while it moves.

#pragma once

#include <cstdint>
#include <utility>

#include "bella/numcore/checkpoint.hpp"
#include "bella/numcore/tensor.hpp"
#include "bella/scenesim/scene.hpp"

namespace bella::bevenc {

inline constexpr std::size_t kGridSize = 32;
inline constexpr std::size_t kChannels = 9;
inline constexpr double kResolution = 2.0;
inline constexpr double kSpeedScale = 15.0;
inline constexpr std::size_t kSpeedChannel = 6;
inline constexpr std::size_t kDirChannel = 7;
/// Seed of the mixing kernels. Kernels are drawn i.i.d. uniform in
/// [-sqrt(6/81), +sqrt(6/81)] from SplitMix64 in [out][in][ky][kx] order.
inline constexpr std::uint64_t kFrozenSeed = 0xBE11A0F0C0DEULL;

struct BevGrid {
  numcore::Tensor<float> tensor;  // [H, W, C]
  double extent = scenesim::kExtent;
  double resolution = kResolution;
};

struct FrozenEncoderParams {
  numcore::Tensor<float> kernels;  // [C, C, 3, 3]
  numcore::Tensor<float> bias;     // [C], zeros

  /// The canonical frozen parameters.
  static FrozenEncoderParams canonical();
  numcore::TensorMap tensors() const;
  std::uint64_t checksum() const;
};

/// (row, col) of a metric position, clamped onto the grid.
std::pair<std::size_t, std::size_t> cell_of(double x, double y);

BevGrid rasterize(const scenesim::Scene& scene);

/// tanh(conv3x3_same(grid)); returns [H, W, C].
numcore::Tensor<float> encode(const BevGrid& grid, const FrozenEncoderParams& params);

/// rasterize then encode.
numcore::Tensor<float> encode_scene(const scenesim::Scene& scene, const FrozenEncoderParams& params);

}  // namespace bella::bevenc
