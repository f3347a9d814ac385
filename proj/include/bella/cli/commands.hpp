// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// The `bella` command line: gen, pretrain, finetune, eval, ask, gradcheck
// and ablate. Exit codes: 0 success, 1 runtime failure, 2 invalid
// configuration or usage, 3 missing checkpoint. Failures print one JSON
// line {"error", "message", "exit_code"} on the error stream.

#pragma once

#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bella::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitSchema = 2;
inline constexpr int kExitMissingCheckpoint = 3;

class MissingCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs one command. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Full `--help` text.
std::string help_text();

}  // namespace bella::cli
