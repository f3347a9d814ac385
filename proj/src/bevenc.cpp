// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include "bella/bevenc/bevenc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bella/numcore/ops.hpp"
#include "bella/numcore/rng.hpp"

namespace bella::bevenc {

using numcore::Tensor;

FrozenEncoderParams FrozenEncoderParams::canonical() {
  SplitMix64 rng(kFrozenSeed);
  const double bound = std::sqrt(6.0 / 81.0);
  std::vector<float> k(kChannels * kChannels * 9);
  for (auto& v : k) v = static_cast<float>(rng.uniform(-bound, bound));
  FrozenEncoderParams p;
  p.kernels = Tensor<float>({kChannels, kChannels, 3, 3}, std::move(k));
  p.bias = Tensor<float>::zeros({kChannels});
  return p;
}

numcore::TensorMap FrozenEncoderParams::tensors() const {
  return {{"bevenc/mix.weight", kernels}, {"bevenc/mix.bias", bias}};
}

std::uint64_t FrozenEncoderParams::checksum() const { return numcore::checksum(tensors()); }

std::pair<std::size_t, std::size_t> cell_of(double x, double y) {
  const auto clamp = [](double v) {
    const double f = std::floor(v);
    return static_cast<std::size_t>(std::clamp(f, 0.0, double(kGridSize - 1)));
  };
  return {clamp((scenesim::kExtent - x) / kResolution), clamp((y + scenesim::kExtent) / kResolution)};
}

BevGrid rasterize(const scenesim::Scene& scene) {
  std::vector<float> data(kGridSize * kGridSize * kChannels, 0.0f);
  // Direction components can be negative, so a cell's first writer sets them
  // and later writers in the same cell take the max.
  std::vector<char> written(data.size(), 0);
  auto put = [&](std::size_t r, std::size_t c, std::size_t ch, float v) {
    const std::size_t i = (r * kGridSize + c) * kChannels + ch;
    data[i] = written[i] ? std::max(data[i], v) : v;
    written[i] = 1;
  };

  for (const auto& a : scene.actors) {
    if (std::abs(a.x) > scenesim::kExtent || std::abs(a.y) > scenesim::kExtent)
      throw std::invalid_argument("rasterize: actor " + std::to_string(a.id) + " outside the grid extent");
    const auto [r, c] = cell_of(a.x, a.y);
    put(r, c, static_cast<std::size_t>(a.cls), 1.0f);
    const double speed = a.speed();
    if (speed > 0.0) {
      put(r, c, kSpeedChannel, static_cast<float>(std::min(speed / kSpeedScale, 1.0)));
      put(r, c, kDirChannel, static_cast<float>(a.vx / speed));
      put(r, c, kDirChannel + 1, static_cast<float>(a.vy / speed));
    }
  }
  if (scene.ego_speed > 0.0) {
    const auto [r, c] = cell_of(0.0, 0.0);
    put(r, c, kSpeedChannel, static_cast<float>(std::min(scene.ego_speed / kSpeedScale, 1.0)));
    if (scene.ego_speed >= scenesim::kMovingSpeed) put(r, c, kDirChannel, 1.0f);
  }
  BevGrid g;
  g.tensor = Tensor<float>({kGridSize, kGridSize, kChannels}, std::move(data));
  return g;
}

Tensor<float> encode(const BevGrid& grid, const FrozenEncoderParams& params) {
  const auto& src = grid.tensor.values();
  const std::size_t hw = kGridSize * kGridSize;
  std::vector<float> chw(src.size());
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t ch = 0; ch < kChannels; ++ch) chw[ch * hw + p] = src[p * kChannels + ch];
  numcore::Tape<float> tape(false);
  Tensor<float> x({kChannels, kGridSize, kGridSize}, std::move(chw));
  auto mixed = numcore::tanh(tape, numcore::conv2d(tape, x, params.kernels, params.bias, 1, 1));
  std::vector<float> hwc(src.size());
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t ch = 0; ch < kChannels; ++ch) hwc[p * kChannels + ch] = mixed[ch * hw + p];
  return Tensor<float>({kGridSize, kGridSize, kChannels}, std::move(hwc));
}

Tensor<float> encode_scene(const scenesim::Scene& scene, const FrozenEncoderParams& params) {
  return encode(rasterize(scene), params);
}

}  // namespace bella::bevenc
