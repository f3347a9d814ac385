// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "bella/numcore/tensor.hpp"

namespace bella::numcore {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators for one parameter.
template <typename T>
struct OptimizerState {
  AdamWConfig config;
  std::vector<T> first_moment;
  std::vector<T> second_moment;
  std::uint64_t step = 0;

  OptimizerState() = default;
  OptimizerState(std::size_t size, AdamWConfig cfg)
      : config(cfg), first_moment(size, T(0)), second_moment(size, T(0)) {
    if (cfg.learning_rate <= 0) throw std::invalid_argument("AdamW: learning rate must be positive");
    if (cfg.weight_decay < 0) throw std::invalid_argument("AdamW: weight decay must be non-negative");
  }
};

/// One AdamW update: bias-corrected adaptive-moment step, then the decoupled
/// decay param <- param * (1 - lr * weight_decay).
template <typename T>
void adamw_step(std::span<T> param, std::span<const T> grad, OptimizerState<T>& state) {
  if (param.size() != grad.size())
    throw ShapeError("adamw_step: parameter has " + std::to_string(param.size()) + " elements, gradient " +
                     std::to_string(grad.size()));
  if (state.first_moment.size() != param.size())
    throw ShapeError("adamw_step: optimizer state does not belong to this parameter");
  const auto& c = state.config;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const T b1 = T(c.beta1), b2 = T(c.beta2), lr = T(c.learning_rate), eps = T(c.epsilon);
  const T inv_bc1 = T(1.0 / bc1), inv_bc2 = T(1.0 / bc2);
  const T decay = T(1.0 - c.learning_rate * c.weight_decay);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    T& m = state.first_moment[i];
    T& v = state.second_moment[i];
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g * g;
    const T mhat = m * inv_bc1;
    const T vhat = v * inv_bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    param[i] *= decay;
  }
}

/// AdamW over named parameter groups, each group with its own learning rate.
/// The optimizer only ever holds state for the tensors it was given.
template <typename T>
class AdamW {
 public:
  void add_group(const std::string& group, const std::map<std::string, Tensor<T>>& params, AdamWConfig cfg) {
    for (const auto& [name, tensor] : params) {
      if (slots_.count(name)) throw std::invalid_argument("AdamW: parameter '" + name + "' registered twice");
      if (!tensor.requires_grad())
        throw std::invalid_argument("AdamW: parameter '" + name + "' is frozen and cannot be optimized");
      slots_.emplace(name, Slot{group, tensor, OptimizerState<T>(tensor.size(), cfg)});
    }
  }

  /// Applies one update to every parameter (a missing gradient counts as
  /// zero) and clears the gradients.
  void step() {
    for (auto& [name, slot] : slots_) {
      std::vector<T> zeros;
      std::span<const T> g;
      if (slot.tensor.has_grad()) {
        g = slot.tensor.grad();
      } else {
        zeros.assign(slot.tensor.size(), T(0));
        g = zeros;
      }
      adamw_step<T>(slot.tensor.mutable_values(), g, slot.state);
      slot.tensor.zero_grad();
    }
  }

  std::set<std::string> parameter_names() const {
    std::set<std::string> out;
    for (const auto& [name, slot] : slots_) out.insert(name);
    return out;
  }

  /// L2 norm of the current gradients of one group (before step()).
  double grad_norm(const std::string& group) const {
    double acc = 0;
    for (const auto& [name, slot] : slots_) {
      if (slot.group != group || !slot.tensor.has_grad()) continue;
      for (auto g : slot.tensor.grad()) acc += double(g) * double(g);
    }
    return std::sqrt(acc);
  }

  const OptimizerState<T>& state(const std::string& name) const { return slots_.at(name).state; }

 private:
  struct Slot {
    std::string group;
    Tensor<T> tensor;
    OptimizerState<T> state;
  };
  std::map<std::string, Slot> slots_;
};

}  // namespace bella::numcore
