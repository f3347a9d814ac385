// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include "bella/text.hpp"

#include <cctype>
#include <sstream>

namespace bella::text {

std::string normalize(std::string_view s) {
  std::string spaced;
  spaced.reserve(s.size() + 8);
  for (char c : s) {
    const auto uc = static_cast<unsigned char>(c);
    if (c == '.' || c == '?' || c == ',') {
      spaced += ' ';
      spaced += c;
      spaced += ' ';
    } else if (std::isspace(uc)) {
      spaced += ' ';
    } else {
      spaced += static_cast<char>(std::tolower(uc));
    }
  }
  std::istringstream in(spaced);
  std::string w, out;
  while (in >> w) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in(normalize(s));
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string join(const std::vector<std::string>& ws, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < ws.size(); ++i) {
    if (i) out += sep;
    out += ws[i];
  }
  return out;
}

std::string normalize_answer(std::string_view s) {
  std::string n = normalize(s);
  if (n == ".") return "";
  if (n.size() >= 2 && n.compare(n.size() - 2, 2, " .") == 0) n.erase(n.size() - 2);
  return n;
}

}  // namespace bella::text
