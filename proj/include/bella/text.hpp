// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace bella::text {

/// Lower-cases, puts spaces around '.', '?' and ',', and collapses runs of
/// whitespace to a single space with no leading or trailing space.
std::string normalize(std::string_view s);

/// Whitespace split of normalize(s).
std::vector<std::string> words(std::string_view s);

std::string join(const std::vector<std::string>& words, std::string_view sep = " ");

/// Answer form used for exact-match scoring: normalize, then drop a trailing
/// " ." if present.
std::string normalize_answer(std::string_view s);

}  // namespace bella::text
