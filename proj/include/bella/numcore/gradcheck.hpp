// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checker.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "bella/numcore/rng.hpp"
#include "bella/numcore/tensor.hpp"

namespace bella::numcore {

struct GradCheckResult {
  double max_relative_error = 0;
  double max_abs_analytic = 0;
  std::size_t elements = 0;
};

struct GradCheckOptions {
  double h = 1e-5;
  /// Elements probed per tensor; 0 probes every element. A probed subset is
  /// drawn without replacement from `sample_seed`.
  std::size_t max_per_tensor = 0;
  std::uint64_t sample_seed = 0;
  /// Lower bound of the relative-error denominator.
  double denominator_floor = 1e-6;
};

/// Indices probed for a tensor of `size` elements.
inline std::vector<std::size_t> probe_indices(std::size_t size, const GradCheckOptions& opt, std::size_t tensor_index) {
  std::vector<std::size_t> idx(size);
  for (std::size_t i = 0; i < size; ++i) idx[i] = i;
  if (opt.max_per_tensor == 0 || size <= opt.max_per_tensor) return idx;
  SplitMix64 rng(SplitMix64::derive(opt.sample_seed, tensor_index));
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(opt.max_per_tensor);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// f builds a scalar on the tape it is handed. Analytic gradients of every
/// tensor in `params` are compared with (f(x+h) - f(x-h)) / 2h elementwise;
/// the relative error uses the denominator max(|a|, |n|, denominator_floor).
inline GradCheckResult grad_check(const std::function<Tensor<double>(Tape<double>&)>& f,
                                  std::vector<Tensor<double>> params, const GradCheckOptions& opt) {
  const double h = opt.h;
  auto eval = [&f]() {
    Tape<double> tape(false);
    const double v = f(tape).item();
    if (!std::isfinite(v)) throw std::domain_error("grad_check: objective is not finite");
    return v;
  };

  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape<double> tape(true);
    auto loss = f(tape);
    if (!std::isfinite(loss.item())) throw std::domain_error("grad_check: objective is not finite");
    // A loss built without any tape op does not depend on the parameters.
    if (loss.tape_id() == tape.id()) tape.backward(loss);
  }

  GradCheckResult result;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto values = p.mutable_values();
    for (std::size_t i : probe_indices(values.size(), opt, t)) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = eval();
      values[i] = saved - h;
      const double down = eval();
      values[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.denominator_floor});
      result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
      result.max_abs_analytic = std::max(result.max_abs_analytic, std::abs(a));
      ++result.elements;
    }
    p.zero_grad();
  }
  return result;
}

inline GradCheckResult grad_check(const std::function<Tensor<double>(Tape<double>&)>& f,
                                  std::vector<Tensor<double>> params, double h = 1e-5) {
  return grad_check(f, std::move(params), GradCheckOptions{h, 0, 0, 1e-6});
}

}  // namespace bella::numcore
