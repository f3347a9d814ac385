// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Trainable projector: compresses an encoded BEV tensor [32, 32, 9] into a
// single d-wide token embedding.
//
//   deep_conv     conv 9->16->32->64 (3x3, stride 2, pad 1, tanh each)
//   shallow_conv  conv 9->16 (3x3, stride 2, pad 1, tanh)
//   conv variants then: avgpool 4x4 -> flatten -> linear(->256) -> tanh
//                       -> linear(256->d) -> linear(d->d) -> layer_norm
//   linear        flatten(9216) -> linear(->d) -> layer_norm

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bella/numcore/ops.hpp"
#include "bella/numcore/rng.hpp"
#include "bella/numcore/tensor.hpp"

namespace bella::projector {

using numcore::Tape;
using numcore::Tensor;

template <typename T>
using NamedTensors = std::map<std::string, Tensor<T>>;

enum class Variant { kLinear, kShallowConv, kDeepConv };

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kLinear:
      return "linear";
    case Variant::kShallowConv:
      return "shallow_conv";
    case Variant::kDeepConv:
      return "deep_conv";
  }
  return "?";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
  for (auto v : {Variant::kLinear, Variant::kShallowConv, Variant::kDeepConv})
    if (variant_name(v) == s) return v;
  return std::nullopt;
}

inline constexpr std::size_t kInputSize = 32;
inline constexpr std::size_t kInputChannels = 9;
inline constexpr std::size_t kPool = 4;
inline constexpr std::size_t kHidden = 256;
inline constexpr std::string_view kPrefix = "projector/";
inline constexpr double kNormEpsilon = 1e-5;

struct ProjectorConfig {
  Variant variant = Variant::kDeepConv;
  std::size_t d = 128;
};

inline std::vector<std::size_t> conv_widths(Variant v) {
  switch (v) {
    case Variant::kLinear:
      return {};
    case Variant::kShallowConv:
      return {16};
    case Variant::kDeepConv:
      return {16, 32, 64};
  }
  return {};
}

/// Uniform in +-1/sqrt(fan_in).
template <typename T>
Tensor<T> fan_in_uniform(SplitMix64& rng, numcore::Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> data(numcore::shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(data), true);
}

template <typename T>
struct ProjectorParams {
  ProjectorConfig config;
  std::vector<Tensor<T>> conv_w, conv_b;
  Tensor<T> fc1_w, fc1_b;  // conv variants: flat -> 256
  Tensor<T> fc2_w, fc2_b;  // conv variants: 256 -> d; linear variant: 9216 -> d
  Tensor<T> out_w, out_b;  // conv variants: d -> d
  Tensor<T> gamma, beta;

  /// Fan-in uniform weights, zero biases, gamma = 1, beta = 0. Tensors are
  /// drawn in declaration order from one generator seeded with `seed`.
  static ProjectorParams init(const ProjectorConfig& config, std::uint64_t seed) {
    if (config.d == 0) throw std::invalid_argument("projector: d must be positive");
    ProjectorParams p;
    p.config = config;
    SplitMix64 rng(seed);
    const std::size_t d = config.d;
    if (config.variant == Variant::kLinear) {
      const std::size_t flat = kInputSize * kInputSize * kInputChannels;
      p.fc2_w = fan_in_uniform<T>(rng, {d, flat}, flat);
      p.fc2_b = Tensor<T>::zeros({d}, true);
    } else {
      std::size_t cin = kInputChannels;
      for (auto cout : conv_widths(config.variant)) {
        p.conv_w.push_back(fan_in_uniform<T>(rng, {cout, cin, 3, 3}, cin * 9));
        p.conv_b.push_back(Tensor<T>::zeros({cout}, true));
        cin = cout;
      }
      const std::size_t flat = cin * kPool * kPool;
      p.fc1_w = fan_in_uniform<T>(rng, {kHidden, flat}, flat);
      p.fc1_b = Tensor<T>::zeros({kHidden}, true);
      p.fc2_w = fan_in_uniform<T>(rng, {d, kHidden}, kHidden);
      p.fc2_b = Tensor<T>::zeros({d}, true);
      p.out_w = fan_in_uniform<T>(rng, {d, d}, d);
      p.out_b = Tensor<T>::zeros({d}, true);
    }
    p.gamma = Tensor<T>::full({d}, T(1), true);
    p.beta = Tensor<T>::zeros({d}, true);
    return p;
  }

  /// Every trainable tensor under the "projector/" prefix.
  NamedTensors<T> named() const {
    NamedTensors<T> out;
    const std::string pre(kPrefix);
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
      out[pre + "conv" + std::to_string(i) + ".weight"] = conv_w[i];
      out[pre + "conv" + std::to_string(i) + ".bias"] = conv_b[i];
    }
    if (fc1_w.defined()) {
      out[pre + "fc1.weight"] = fc1_w;
      out[pre + "fc1.bias"] = fc1_b;
    }
    out[pre + "fc2.weight"] = fc2_w;
    out[pre + "fc2.bias"] = fc2_b;
    if (out_w.defined()) {
      out[pre + "out.weight"] = out_w;
      out[pre + "out.bias"] = out_b;
    }
    out[pre + "norm.gamma"] = gamma;
    out[pre + "norm.beta"] = beta;
    return out;
  }

  /// Overwrites parameter values from `tensors` (names as in named()).
  /// Throws std::invalid_argument on a missing name or shape mismatch.
  void load(const NamedTensors<T>& tensors) {
    for (auto& [name, t] : named()) {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw std::invalid_argument("projector: checkpoint lacks " + name);
      if (it->second.shape() != t.shape())
        throw std::invalid_argument("projector: " + name + " has shape " + numcore::shape_str(it->second.shape()) +
                                    ", expected " + numcore::shape_str(t.shape()));
      auto dst = t.mutable_values();
      std::copy(it->second.values().begin(), it->second.values().end(), dst.begin());
    }
  }

  std::size_t count_params() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t.size();
    return n;
  }

  std::size_t conv_param_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < conv_w.size(); ++i) n += conv_w[i].size() + conv_b[i].size();
    return n;
  }

  template <typename U>
  ProjectorParams<U> cast() const {
    ProjectorParams<U> p;
    p.config = config;
    auto c = [](const Tensor<T>& t) { return t.defined() ? t.template cast<U>() : Tensor<U>(); };
    for (const auto& w : conv_w) p.conv_w.push_back(c(w));
    for (const auto& b : conv_b) p.conv_b.push_back(c(b));
    p.fc1_w = c(fc1_w), p.fc1_b = c(fc1_b), p.fc2_w = c(fc2_w), p.fc2_b = c(fc2_b);
    p.out_w = c(out_w), p.out_b = c(out_b), p.gamma = c(gamma), p.beta = c(beta);
    return p;
  }
};

/// Intermediate read-back for tests.
template <typename T>
struct ProjectorTrace {
  Tensor<T> pre_norm;  // [N, d] input to the final layer_norm
};

/// Projects a batch of encoded grids. `grids` is [N, 32, 32, 9] (or a single
/// [32, 32, 9]); returns [N, d]. The grids are treated as constants.
template <typename T>
Tensor<T> project(Tape<T>& tape, const Tensor<T>& grids, const ProjectorParams<T>& p,
                  ProjectorTrace<T>* trace = nullptr) {
  const bool single = grids.rank() == 3;
  numcore::detail::require(
      (single || grids.rank() == 4) && grids.dim(grids.rank() - 3) == kInputSize &&
          grids.dim(grids.rank() - 2) == kInputSize && grids.dim(grids.rank() - 1) == kInputChannels,
      "project: expected [N, 32, 32, 9] input, got " + numcore::shape_str(grids.shape()));
  const std::size_t n = single ? 1 : grids.dim(0);
  const std::size_t hw = kInputSize * kInputSize;
  const std::size_t per = hw * kInputChannels;
  Tensor<T> z;
  if (p.config.variant == Variant::kLinear) {
    Tensor<T> flat({n, per}, std::vector<T>(grids.values().begin(), grids.values().end()));
    z = numcore::linear(tape, flat, p.fc2_w, p.fc2_b);
  } else {
    std::vector<T> chw(grids.size());
    const auto src = grids.values();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t px = 0; px < hw; ++px)
        for (std::size_t c = 0; c < kInputChannels; ++c)
          chw[b * per + c * hw + px] = src[b * per + px * kInputChannels + c];
    Tensor<T> x({n, kInputChannels, kInputSize, kInputSize}, std::move(chw));
    for (std::size_t i = 0; i < p.conv_w.size(); ++i)
      x = numcore::tanh(tape, numcore::conv2d(tape, x, p.conv_w[i], p.conv_b[i], 2, 1));
    x = numcore::adaptive_avg_pool2d(tape, x, kPool, kPool);
    auto flat = numcore::reshape(tape, x, {n, x.size() / n});
    auto h = numcore::tanh(tape, numcore::linear(tape, flat, p.fc1_w, p.fc1_b));
    z = numcore::linear(tape, h, p.fc2_w, p.fc2_b);
    z = numcore::linear(tape, z, p.out_w, p.out_b);
  }
  if (trace) trace->pre_norm = z;
  return numcore::layer_norm(tape, z, p.gamma, p.beta, static_cast<T>(kNormEpsilon));
}

}  // namespace bella::projector
