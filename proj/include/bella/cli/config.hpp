// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a schema-closed JSON document with the sections data,
// model, train, eval and paths. Every key has a default; unknown keys and
// type mismatches are rejected.

#pragma once

#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "bella/langdata/dataset.hpp"
#include "bella/trainer/trainer.hpp"

namespace bella::cli {

using Json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class KeyType { kInt, kUInt, kReal, kBool, kString, kIntList };

struct KeySpec {
  std::string path;  // "section.key"
  KeyType type;
  Json default_value;
  std::string help;
};

/// Every configuration key in document order.
const std::vector<KeySpec>& schema();

/// One applied change, for the override log.
struct Override {
  std::string path;
  Json from;
  Json to;
  std::string source;  // "config", "flag", "env"
};

class RunConfig {
 public:
  /// All defaults.
  RunConfig();

  /// Defaults overlaid with a JSON document. Throws ConfigError.
  static RunConfig from_json(const Json& doc);
  static RunConfig from_file(const std::string& path);

  /// Sets one key from a JSON value or, for convenience, from its text form
  /// ("8", "true", "deep_conv", "[1,2,3]"). Throws ConfigError.
  void set(const std::string& path, const Json& value, const std::string& source);
  void set_text(const std::string& path, const std::string& text, const std::string& source);

  const Json& get(const std::string& path) const;
  const Json& document() const { return doc_; }
  const std::vector<Override>& overrides() const { return overrides_; }

  /// Applies BELLA_SEED (if set) to data.seed and train.seed.
  void apply_env();

  langdata::CorpusConfig corpus() const;
  trainer::TrainConfig train() const;
  std::vector<std::uint64_t> ablation_seeds() const;

 private:
  Json doc_;
  std::vector<Override> overrides_;
};

/// Text listing every key with its type, default and description.
std::string config_help();

}  // namespace bella::cli
