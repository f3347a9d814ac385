// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central-difference checks of every differentiable operator and of the
// composed projector + language-model graph, in double precision.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace bella::trainer {

struct GradCheckRow {
  std::string op;
  int seeds = 0;
  int shapes = 0;
  std::size_t elements = 0;
  double max_relative_error = 0;
  bool passed = false;
};

struct GradSuiteConfig {
  int seeds = 10;
  double h = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t base_seed = 1;
  /// Elements probed per tensor of the composite graph (operators are probed
  /// exhaustively).
  std::size_t composite_probes = 6;
};

/// Operator names in suite order.
std::vector<std::string> gradcheck_ops();

/// Runs `ops` (all when empty); every op cycles through three shapes.
std::vector<GradCheckRow> run_gradcheck_suite(const GradSuiteConfig& config, const std::vector<std::string>& ops = {});

}  // namespace bella::trainer
