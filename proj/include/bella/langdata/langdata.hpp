// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Text side of the corpus: the closed word-level vocabulary, frame
// descriptions with synonym variation, stride-4 frame subsampling and QA
// generation.

#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bella/scenesim/oracle.hpp"
#include "bella/scenesim/scene.hpp"

namespace bella::langdata {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kBevPlaceholder = 3;
inline constexpr std::string_view kBevSurface = "<bev>";
inline constexpr int kSubsampleStride = 4;

class OutOfVocabulary : public std::invalid_argument {
 public:
  explicit OutOfVocabulary(const std::string& word)
      : std::invalid_argument("out-of-vocabulary word '" + word + "'"), word_(word) {}
  const std::string& word() const { return word_; }

 private:
  std::string word_;
};

class Vocab {
 public:
  /// The built-in vocabulary: specials, punctuation, then every word any
  /// template or synonym list can emit, in first-use order.
  static Vocab standard();
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool contains(std::string_view word) const;
  int id(std::string_view word) const;  // throws OutOfVocabulary
  const std::string& token(int id) const;

  /// Normalizes then maps every word; throws OutOfVocabulary naming the word.
  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;

  /// FNV-1a over the ordered token list.
  std::uint64_t fingerprint() const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// canonical word -> synonym set (each set contains its canonical word first).
using SynonymTable = std::map<std::string, std::vector<std::string>>;
const SynonymTable& synonyms();

/// Actor sentences are ordered by quadrant (front, back, left, right), then
/// distance, then id.
std::vector<const scenesim::Actor*> description_order(const scenesim::Scene& scene);

/// "the ego vehicle is <motion> . there is a <class> <status> to the
/// <quadrant> . ..." with each slot drawn from its synonym set. An empty
/// scene yields "... . there are no objects nearby".
std::string describe(const scenesim::Scene& scene, std::uint64_t seed);

/// Frames 0, 4, 8, 12, 16 of a 20-frame episode.
std::vector<scenesim::Scene> subsample(const scenesim::Episode& episode);

/// Up to per_category items per category in category order. Answers come from
/// the oracle; templates without a unique answer are skipped.
std::vector<scenesim::QAItem> make_qa(const scenesim::Scene& scene, std::uint64_t seed, int per_category,
                                      int episode_id = 0);

/// Every distinct surface sentence fragment the templates can produce, used
/// for closed-world checks.
std::vector<std::string> all_template_expansions();

}  // namespace bella::langdata
