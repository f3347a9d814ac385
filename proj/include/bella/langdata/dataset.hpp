// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Corpus assembly and the on-disk JSON-lines formats:
//   scenes.jsonl    one Episode per line
//   pretrain.jsonl  {episode_id, frame_index, description, split}
//   qa.jsonl        {episode_id, frame_index, category, question, answer, split}
//   vocab.json      ordered token list
// The last `test_episodes` episode ids form the test split.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bella/langdata/langdata.hpp"
#include "bella/scenesim/oracle.hpp"
#include "bella/scenesim/scene.hpp"

namespace bella::langdata {

inline constexpr std::string_view kTrain = "train";
inline constexpr std::string_view kTest = "test";

struct DescriptionSample {
  int episode_id = 0;
  int frame_index = 0;
  std::string description;
  std::string split{kTrain};

  bool operator==(const DescriptionSample&) const = default;
};

struct QARecord {
  scenesim::QAItem item;
  std::string split{kTrain};

  bool operator==(const QARecord&) const = default;
};

struct CorpusConfig {
  std::uint64_t seed = 7;
  int episodes = 250;
  int test_episodes = 50;
  int qa_per_frame = 2;
  scenesim::GeneratorConfig generator;
};

struct Corpus {
  std::vector<scenesim::Episode> episodes;
  std::vector<DescriptionSample> pretrain;
  std::vector<QARecord> qa;
  Vocab vocab = Vocab::standard();

  /// Scene lookup by (episode_id, frame_index).
  const scenesim::Scene& scene(int episode_id, int frame_index) const;
};

/// Per-episode seed; episodes are independent of how many are generated.
std::uint64_t episode_seed(std::uint64_t corpus_seed, int episode_id);

Corpus build_corpus(const CorpusConfig& config);

/// Writes the four corpus files into `dir` (which must exist).
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);

/// Reads a corpus directory back. Throws std::runtime_error on malformed
/// lines, naming file and line number.
Corpus read_corpus(const std::filesystem::path& dir);

std::vector<scenesim::Episode> read_scenes(const std::filesystem::path& file);
std::vector<DescriptionSample> read_pretrain(const std::filesystem::path& file);
std::vector<QARecord> read_qa(const std::filesystem::path& file);
Vocab read_vocab(const std::filesystem::path& file);

std::string scene_to_json(const scenesim::Scene& scene);
scenesim::Scene scene_from_json(const std::string& text);

/// Items per category, in category order.
std::map<scenesim::Category, int> category_counts(const std::vector<QARecord>& qa);

}  // namespace bella::langdata
