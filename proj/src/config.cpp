// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include "bella/cli/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace bella::cli {

namespace {

std::vector<KeySpec> build_schema() {
  using K = KeyType;
  return {
      {"data.seed", K::kUInt, 7, "corpus seed"},
      {"data.episodes", K::kInt, 250, "episodes to generate"},
      {"data.test_episodes", K::kInt, 50, "trailing episode ids held out as the test split"},
      {"data.qa_per_frame", K::kInt, 2, "QA items kept per subsampled frame"},
      {"data.min_actors", K::kInt, 0, "minimum actors per episode"},
      {"data.max_actors", K::kInt, 6, "maximum actors per episode"},
      {"data.forced_actor_count", K::kInt, -1, "exact actor count per episode; -1 disables"},
      {"model.variant", K::kString, "deep_conv", "projector: linear | shallow_conv | deep_conv"},
      {"model.d", K::kInt, 128, "language-model width"},
      {"model.layers", K::kInt, 4, "transformer blocks"},
      {"model.heads", K::kInt, 4, "attention heads"},
      {"model.ff", K::kInt, 512, "feed-forward width"},
      {"model.max_len", K::kInt, 64, "maximum sequence length"},
      {"model.lora_r", K::kInt, 8, "LoRA rank"},
      {"model.lora_alpha", K::kReal, 16.0, "LoRA alpha (scaling alpha / r)"},
      {"train.seed", K::kUInt, 7, "training seed (projector and LoRA init, batch order)"},
      {"train.epochs", K::kInt, 10, "epochs per stage"},
      {"train.batch_size", K::kInt, 2, "sequences per step"},
      {"train.lr_projector", K::kReal, 1e-4, "AdamW learning rate of the projector"},
      {"train.lr_lm", K::kReal, 2e-4, "AdamW learning rate of the LoRA adapters"},
      {"train.beta1", K::kReal, 0.9, "AdamW beta1"},
      {"train.beta2", K::kReal, 0.999, "AdamW beta2"},
      {"train.epsilon", K::kReal, 1e-8, "AdamW epsilon"},
      {"train.weight_decay", K::kReal, 0.01, "AdamW decoupled weight decay"},
      {"train.validation_fraction", K::kReal, 0.1, "trailing share of training episodes used for validation"},
      {"train.ablate_pretraining", K::kBool, false, "finetune from a freshly initialized projector"},
      {"train.lm_seed", K::kUInt, 1234, "base language-model init seed"},
      {"train.lm_warmup_epochs", K::kInt, 4, "text-only warm-up epochs of the base language model"},
      {"train.lm_warmup_batch", K::kInt, 16, "warm-up batch size"},
      {"train.lm_warmup_lr", K::kReal, 1e-3, "warm-up learning rate"},
      {"eval.split", K::kString, "test", "split scored by eval"},
      {"eval.max_new_tokens", K::kInt, 12, "greedy decoding budget"},
      {"eval.ablation_seeds", K::kIntList, Json::array({1, 2, 3}), "training seeds of every ablation arm"},
      {"eval.ablation_kind", K::kString, "both", "ablation: pretraining | projector | both"},
      {"paths.data_dir", K::kString, "data", "corpus directory"},
      {"paths.runs_dir", K::kString, "runs", "parent of run-stamped output directories"},
      {"paths.base_lm", K::kString, "", "warmed-up base LM checkpoint; empty warms up a fresh one"},
      {"paths.stage1", K::kString, "", "stage-1 checkpoint for finetune"},
      {"paths.checkpoint", K::kString, "", "model checkpoint for eval and ask"},
  };
}

const KeySpec& spec_of(const std::string& path) {
  for (const auto& k : schema())
    if (k.path == path) return k;
  throw ConfigError("unknown config key '" + path + "'");
}

const char* type_name(KeyType t) {
  switch (t) {
    case KeyType::kInt:
      return "int";
    case KeyType::kUInt:
      return "uint";
    case KeyType::kReal:
      return "real";
    case KeyType::kBool:
      return "bool";
    case KeyType::kString:
      return "string";
    case KeyType::kIntList:
      return "int list";
  }
  return "?";
}

bool type_ok(KeyType t, const Json& v) {
  switch (t) {
    case KeyType::kInt:
      return v.is_number_integer();
    case KeyType::kUInt:
      return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    case KeyType::kReal:
      return v.is_number();
    case KeyType::kBool:
      return v.is_boolean();
    case KeyType::kString:
      return v.is_string();
    case KeyType::kIntList:
      if (!v.is_array()) return false;
      for (const auto& e : v)
        if (!e.is_number_integer() || e.get<long long>() < 0) return false;
      return true;
  }
  return false;
}

std::pair<std::string, std::string> split_path(const std::string& path) {
  const auto dot = path.find('.');
  return {path.substr(0, dot), path.substr(dot + 1)};
}

int positive(const RunConfig& c, const std::string& path, int min = 1) {
  const int v = c.get(path).get<int>();
  if (v < min) throw ConfigError(path + " must be >= " + std::to_string(min) + ", got " + std::to_string(v));
  return v;
}

double positive_real(const RunConfig& c, const std::string& path) {
  const double v = c.get(path).get<double>();
  if (!(v > 0)) throw ConfigError(path + " must be positive");
  return v;
}

}  // namespace

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> s = build_schema();
  return s;
}

RunConfig::RunConfig() {
  for (const auto& k : schema()) {
    const auto [sec, key] = split_path(k.path);
    doc_[sec][key] = k.default_value;
  }
}

RunConfig RunConfig::from_json(const Json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  for (const auto& [sec, body] : doc.items()) {
    if (!c.doc_.contains(sec)) throw ConfigError("unknown config section '" + sec + "'");
    if (!body.is_object()) throw ConfigError("config section '" + sec + "' must be an object");
    for (const auto& [key, value] : body.items()) c.set(sec + "." + key, value, "config");
  }
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

void RunConfig::set(const std::string& path, const Json& value, const std::string& source) {
  const auto& spec = spec_of(path);
  if (!type_ok(spec.type, value))
    throw ConfigError("config key '" + path + "' expects " + type_name(spec.type) + ", got " + value.dump());
  const auto [sec, key] = split_path(path);
  Json v = value;
  if (spec.type == KeyType::kReal) v = value.get<double>();
  const Json from = doc_[sec][key];
  if (from == v) return;
  overrides_.push_back({path, from, v, source});
  doc_[sec][key] = v;
}

void RunConfig::set_text(const std::string& path, const std::string& text, const std::string& source) {
  const auto& spec = spec_of(path);
  if (spec.type == KeyType::kString) return set(path, Json(text), source);
  Json v;
  try {
    v = Json::parse(text);
  } catch (const Json::parse_error&) {
    throw ConfigError("config key '" + path + "' expects " + type_name(spec.type) + ", got '" + text + "'");
  }
  set(path, v, source);
}

const Json& RunConfig::get(const std::string& path) const {
  spec_of(path);
  const auto [sec, key] = split_path(path);
  return doc_.at(sec).at(key);
}

void RunConfig::apply_env() {
  const char* env = std::getenv("BELLA_SEED");
  if (!env) return;
  set_text("data.seed", env, "env");
  set_text("train.seed", env, "env");
}

langdata::CorpusConfig RunConfig::corpus() const {
  langdata::CorpusConfig c;
  c.seed = get("data.seed").get<std::uint64_t>();
  c.episodes = positive(*this, "data.episodes", 0);
  c.test_episodes = positive(*this, "data.test_episodes", 0);
  c.qa_per_frame = positive(*this, "data.qa_per_frame", 0);
  c.generator.min_actors = positive(*this, "data.min_actors", 0);
  c.generator.max_actors = positive(*this, "data.max_actors", 0);
  if (c.generator.max_actors < c.generator.min_actors) throw ConfigError("data.max_actors < data.min_actors");
  const int forced = get("data.forced_actor_count").get<int>();
  if (forced >= 0) c.generator.forced_actor_count = forced;
  return c;
}

trainer::TrainConfig RunConfig::train() const {
  trainer::TrainConfig t;
  const auto variant = projector::parse_variant(get("model.variant").get<std::string>());
  if (!variant) throw ConfigError("model.variant must be linear, shallow_conv or deep_conv");
  t.variant = *variant;
  t.lm.d = positive(*this, "model.d");
  t.lm.layers = positive(*this, "model.layers");
  t.lm.heads = positive(*this, "model.heads");
  t.lm.ff = positive(*this, "model.ff");
  t.lm.max_len = positive(*this, "model.max_len", 4);
  if (t.lm.d % t.lm.heads != 0) throw ConfigError("model.d must be divisible by model.heads");
  t.lora.r = positive(*this, "model.lora_r");
  t.lora.alpha = positive_real(*this, "model.lora_alpha");
  t.seed = get("train.seed").get<std::uint64_t>();
  t.epochs = positive(*this, "train.epochs");
  t.batch_size = positive(*this, "train.batch_size");
  t.lr_projector = positive_real(*this, "train.lr_projector");
  t.lr_lm = positive_real(*this, "train.lr_lm");
  t.beta1 = get("train.beta1").get<double>();
  t.beta2 = get("train.beta2").get<double>();
  if (t.beta1 < 0 || t.beta1 >= 1 || t.beta2 < 0 || t.beta2 >= 1) throw ConfigError("AdamW betas must be in [0, 1)");
  t.epsilon = positive_real(*this, "train.epsilon");
  t.weight_decay = get("train.weight_decay").get<double>();
  if (t.weight_decay < 0) throw ConfigError("train.weight_decay must be non-negative");
  t.validation_fraction = get("train.validation_fraction").get<double>();
  if (t.validation_fraction < 0 || t.validation_fraction >= 1)
    throw ConfigError("train.validation_fraction must be in [0, 1)");
  t.ablate_pretraining = get("train.ablate_pretraining").get<bool>();
  t.lm_seed = get("train.lm_seed").get<std::uint64_t>();
  t.lm_warmup_epochs = positive(*this, "train.lm_warmup_epochs", 0);
  t.lm_warmup_batch = positive(*this, "train.lm_warmup_batch");
  t.lm_warmup_lr = positive_real(*this, "train.lm_warmup_lr");
  t.max_new_tokens = positive(*this, "eval.max_new_tokens");
  return t;
}

std::vector<std::uint64_t> RunConfig::ablation_seeds() const {
  std::vector<std::uint64_t> out;
  for (const auto& s : get("eval.ablation_seeds")) out.push_back(s.get<std::uint64_t>());
  if (out.empty()) throw ConfigError("eval.ablation_seeds must not be empty");
  return out;
}

std::string config_help() {
  std::ostringstream os;
  os << "Configuration keys (JSON sections; override with --set section.key=value):\n";
  std::string section;
  for (const auto& k : schema()) {
    const auto [sec, key] = split_path(k.path);
    if (sec != section) {
      os << "  [" << sec << "]\n";
      section = sec;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "    %-28s %-8s default %-12s %s\n", k.path.c_str(), type_name(k.type),
                  k.default_value.dump().c_str(), k.help.c_str());
    os << buf;
  }
  return os.str();
}

}  // namespace bella::cli
