// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include "bella/trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "bella/numcore/rng.hpp"
#include "bella/text.hpp"

namespace bella::trainer {

using langdata::Corpus;
using lm::PromptAssembly;
using numcore::Tape;
using numcore::Tensor;
using numcore::TensorMap;

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kProjectorSalt = 0x9A01;
constexpr std::uint64_t kLoraSalt = 0x9A02;
constexpr std::uint64_t kShuffleSalt = 0x9A03;
constexpr std::uint64_t kWarmupShuffleSalt = 0x9A04;
constexpr int kEvalBatch = 16;

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

struct Sample {
  PromptAssembly prompt;
  std::pair<int, int> key;  // (episode, frame)
};

int sep_id(const langdata::Vocab& v) { return v.id("."); }

std::vector<Sample> description_samples(const Corpus& c, const Splits& s, bool validation, std::size_t max_len) {
  std::vector<Sample> out;
  for (const auto& d : c.pretrain) {
    if (d.frame_index % langdata::kSubsampleStride != 0)
      throw std::invalid_argument("pretrain: frame " + std::to_string(d.frame_index) + " of episode " +
                                  std::to_string(d.episode_id) + " violates the every-fourth-frame rule");
    if (validation ? !s.is_validation(d.episode_id) : !s.is_train(d.episode_id)) continue;
    out.push_back({lm::assemble_prompt(lm::Stage::kPretrain, {}, c.vocab.encode(d.description), sep_id(c.vocab),
                                       max_len),
                   {d.episode_id, d.frame_index}});
  }
  return out;
}

std::vector<Sample> qa_samples(const Corpus& c, const Splits& s, bool validation, std::size_t max_len) {
  std::vector<Sample> out;
  for (const auto& r : c.qa) {
    if (validation ? !s.is_validation(r.item.episode_id) : !s.is_train(r.item.episode_id)) continue;
    out.push_back({lm::assemble_prompt(lm::Stage::kFinetune, c.vocab.encode(r.item.question),
                                       c.vocab.encode(r.item.gold_answer), sep_id(c.vocab), max_len),
                   {r.item.episode_id, r.item.frame_index}});
  }
  return out;
}

lm::LMConfig lm_config_for(const TrainConfig& cfg, const langdata::Vocab& vocab) {
  auto c = cfg.lm;
  c.vocab = vocab.size();
  return c;
}

projector::ProjectorConfig projector_config_for(const TrainConfig& cfg) { return {cfg.variant, cfg.lm.d}; }

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  SplitMix64 rng(SplitMix64::derive(seed, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(idx.begin(), idx.end());
  return idx;
}

double named_grad_norm(const lm::NamedTensors<float>& tensors) {
  double acc = 0;
  for (const auto& [n, t] : tensors)
    if (t.has_grad())
      for (float g : t.grad()) acc += double(g) * g;
  return std::sqrt(acc);
}

/// Shared loop of both stages.
struct StageRunner {
  const TrainConfig& cfg;
  const Corpus& corpus;
  const lm::MicroLMParams<float>& base;
  const GridCache& cache;
  projector::ProjectorParams<float>& proj;
  lm::LoraAdapter<float>* lora;

  double batch_loss(const std::vector<const Sample*>& batch, bool train, double* out_loss) {
    std::vector<std::pair<int, int>> keys;
    std::vector<const PromptAssembly*> prompts;
    for (const auto* s : batch) keys.push_back(s->key), prompts.push_back(&s->prompt);
    Tape<float> tape(train);
    auto ebev = projector::project(tape, cache.stack(keys), proj);
    auto loss = lm::sequence_loss(tape, prompts, ebev, base, lora);
    *out_loss = loss.item();
    if (train) tape.backward(loss);
    return *out_loss;
  }

  double mean_loss(const std::vector<Sample>& samples) {
    if (samples.empty()) return 0.0;
    double total = 0;
    std::size_t targets = 0;
    for (std::size_t i = 0; i < samples.size(); i += kEvalBatch) {
      std::vector<const Sample*> batch;
      std::size_t t = 0;
      for (std::size_t j = i; j < std::min(samples.size(), i + kEvalBatch); ++j) {
        batch.push_back(&samples[j]);
        t += samples[j].prompt.target_count();
      }
      double l = 0;
      batch_loss(batch, false, &l);
      total += l * t;
      targets += t;
    }
    return total / targets;
  }

  TrainLog run(const std::string& stage, const std::vector<Sample>& train, const std::vector<Sample>& validation) {
    TrainLog log;
    log.stage = stage;
    log.warnings = cfg.warnings();
    const auto start = Clock::now();
    const auto bev_before = cache_checksum();
    const auto lm_before = numcore::checksum(to_map(base.named()));
    log.checksums["bevenc/before"] = bev_before;
    log.checksums["lm/before"] = lm_before;
    if (train.empty()) throw std::invalid_argument(stage + ": no training samples");
    if (cfg.epochs < 1 || cfg.batch_size < 1) throw std::invalid_argument(stage + ": epochs and batch_size must be >= 1");

    numcore::AdamW<float> opt;
    opt.add_group("projector", proj.named(), cfg.adamw(cfg.lr_projector));
    if (lora) opt.add_group("lora", lora->named(), cfg.adamw(cfg.lr_lm));

    double best_val = std::numeric_limits<double>::infinity();
    projector::ProjectorParams<float> best_proj = proj.cast<float>();
    std::optional<lm::LoraAdapter<float>> best_lora;
    if (lora) best_lora = lora->cast<float>();
    int step = 0;
    const auto base_named = base.named();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      const auto order = epoch_order(train.size(), SplitMix64::derive(cfg.seed, kShuffleSalt), epoch);
      double sum = 0;
      int batches = 0;
      for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
        std::vector<const Sample*> batch;
        for (std::size_t j = i; j < std::min(order.size(), i + cfg.batch_size); ++j) batch.push_back(&train[order[j]]);
        double l = 0;
        batch_loss(batch, true, &l);
        TrainEvent ev;
        ev.step = step++;
        ev.epoch = epoch;
        ev.stage = stage;
        ev.loss = l;
        ev.grad_norms["projector"] = opt.grad_norm("projector");
        if (lora) ev.grad_norms["lora"] = opt.grad_norm("lora");
        ev.grad_norms["lm_base"] = named_grad_norm(base_named);
        ev.timestamp = now_seconds();
        log.steps.push_back(std::move(ev));
        opt.step();
        sum += l;
        ++batches;
      }
      log.epoch_mean_loss.push_back(sum / batches);
      const double val = validation.empty() ? log.epoch_mean_loss.back() : mean_loss(validation);
      log.validation_loss.push_back(val);
      if (val < best_val) {
        best_val = val;
        log.best_epoch = epoch;
        best_proj = proj.cast<float>();
        if (lora) best_lora = lora->cast<float>();
      }
    }
    proj.load(best_proj.named());
    if (lora) lora->load(best_lora->named());
    log.checksums["bevenc/after"] = cache_checksum();
    log.checksums["lm/after"] = numcore::checksum(to_map(base.named()));
    if (log.checksums["bevenc/after"] != bev_before || log.checksums["lm/after"] != lm_before)
      throw std::logic_error(stage + ": frozen parameters changed during training");
    log.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return log;
  }

  std::uint64_t cache_checksum() const { return bevenc::FrozenEncoderParams::canonical().checksum(); }

  static TensorMap to_map(const lm::NamedTensors<float>& m) { return TensorMap(m.begin(), m.end()); }
};

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// meta/model_config layout
enum MetaField { kVocab, kD, kLayers, kHeads, kFF, kMaxLen, kVariant, kLoraR, kLoraAlpha, kHasLora, kMetaCount };

Tensor<float> fingerprint_tensor(const langdata::Vocab& v) {
  const auto fp = v.fingerprint();
  std::vector<float> parts(4);
  for (int i = 0; i < 4; ++i) parts[i] = static_cast<float>((fp >> (16 * i)) & 0xFFFF);
  return Tensor<float>({4}, std::move(parts));
}

void check_fingerprint(const TensorMap& t, const langdata::Vocab& vocab) {
  auto it = t.find("meta/vocab_fingerprint");
  if (it == t.end()) throw CheckpointMismatch("checkpoint has no vocabulary fingerprint");
  const auto expect = fingerprint_tensor(vocab);
  if (!std::equal(expect.values().begin(), expect.values().end(), it->second.values().begin(),
                  it->second.values().end()))
    throw CheckpointMismatch("vocabulary of the corpus does not match the checkpoint's");
}

lm::LMConfig lm_config_from(const Tensor<float>& meta) {
  lm::LMConfig c;
  c.vocab = static_cast<std::size_t>(meta[kVocab]);
  c.d = static_cast<std::size_t>(meta[kD]);
  c.layers = static_cast<std::size_t>(meta[kLayers]);
  c.heads = static_cast<std::size_t>(meta[kHeads]);
  c.ff = static_cast<std::size_t>(meta[kFF]);
  c.max_len = static_cast<std::size_t>(meta[kMaxLen]);
  return c;
}

Tensor<float> meta_tensor(const lm::LMConfig& c, projector::Variant v, const std::optional<lm::LoraConfig>& lora) {
  std::vector<float> m(kMetaCount, 0.0f);
  m[kVocab] = float(c.vocab), m[kD] = float(c.d), m[kLayers] = float(c.layers), m[kHeads] = float(c.heads);
  m[kFF] = float(c.ff), m[kMaxLen] = float(c.max_len), m[kVariant] = float(static_cast<int>(v));
  if (lora) m[kLoraR] = float(lora->r), m[kLoraAlpha] = float(lora->alpha), m[kHasLora] = 1.0f;
  return Tensor<float>({kMetaCount}, std::move(m));
}

const Tensor<float>& require_tensor(const TensorMap& t, const std::string& name) {
  auto it = t.find(name);
  if (it == t.end()) throw CheckpointMismatch("checkpoint lacks " + name);
  return it->second;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<std::string> TrainConfig::warnings() const {
  std::vector<std::string> w;
  if (lr_projector == lr_lm)
    w.push_back("lr_projector equals lr_lm (" + std::to_string(lr_projector) +
                "); the reference setup uses distinct rates 1e-4 and 2e-4");
  return w;
}

void TrainLog::write_jsonl(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  for (const auto& e : steps) {
    nlohmann::ordered_json j{{"step", e.step}, {"epoch", e.epoch},           {"stage", e.stage},
                             {"loss", e.loss}, {"grad_norms", e.grad_norms}, {"timestamp", e.timestamp}};
    out << j.dump() << '\n';
  }
  nlohmann::ordered_json summary{{"summary", stage},
                                 {"epoch_mean_loss", epoch_mean_loss},
                                 {"validation_loss", validation_loss},
                                 {"best_epoch", best_epoch},
                                 {"wall_seconds", wall_seconds},
                                 {"warnings", warnings}};
  auto& cs = summary["checksums"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : checksums) cs[k] = hex64(v);
  out << summary.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints

TensorMap base_lm_checkpoint(const lm::MicroLMParams<float>& lm, const langdata::Vocab& vocab) {
  TensorMap out;
  for (const auto& [n, t] : lm.named()) out[n] = t;
  out["meta/model_config"] = meta_tensor(lm.config, projector::Variant::kDeepConv, std::nullopt);
  out["meta/vocab_fingerprint"] = fingerprint_tensor(vocab);
  return out;
}

lm::MicroLMParams<float> base_lm_from_checkpoint(const TensorMap& t, const langdata::Vocab& vocab) {
  check_fingerprint(t, vocab);
  const auto cfg = lm_config_from(require_tensor(t, "meta/model_config"));
  if (cfg.vocab != vocab.size()) throw CheckpointMismatch("checkpoint vocabulary size differs from the corpus");
  auto lm = lm::MicroLMParams<float>::init(cfg, 0);
  try {
    lm.load(lm::NamedTensors<float>(t.begin(), t.end()));
  } catch (const std::invalid_argument& e) {
    throw CheckpointMismatch(e.what());
  }
  lm.set_trainable(false);
  return lm;
}

TensorMap model_checkpoint(const Model& m) {
  TensorMap out;
  for (const auto& [n, t] : m.bev.tensors()) out[n] = t;
  for (const auto& [n, t] : m.lm.named()) out[n] = t;
  for (const auto& [n, t] : m.proj.named()) out[n] = t;
  std::optional<lm::LoraConfig> lc;
  if (m.lora) {
    lc = m.lora->config;
    for (const auto& [n, t] : m.lora->named()) out[n] = t;
  }
  out["meta/model_config"] = meta_tensor(m.lm.config, m.proj.config.variant, lc);
  out["meta/vocab_fingerprint"] = fingerprint_tensor(m.vocab);
  return out;
}

Model model_from_checkpoint(const TensorMap& t, const langdata::Vocab& vocab) {
  Model m;
  m.vocab = vocab;
  m.lm = base_lm_from_checkpoint(t, vocab);
  const auto& meta = require_tensor(t, "meta/model_config");
  const auto variant = static_cast<projector::Variant>(static_cast<int>(meta[kVariant]));
  m.proj = projector::ProjectorParams<float>::init({variant, m.lm.config.d}, 0);
  try {
    m.proj.load(projector::NamedTensors<float>(t.begin(), t.end()));
    if (meta[kHasLora] != 0.0f) {
      lm::LoraConfig lc{static_cast<std::size_t>(meta[kLoraR]), double(meta[kLoraAlpha])};
      m.lora = lm::LoraAdapter<float>::init(m.lm.config, lc, 0);
      m.lora->load(lm::NamedTensors<float>(t.begin(), t.end()));
    }
  } catch (const std::invalid_argument& e) {
    throw CheckpointMismatch(e.what());
  }
  const auto stored_bev = numcore::checksum(numcore::with_prefix(t, "bevenc/"));
  if (stored_bev != m.bev.checksum()) throw CheckpointMismatch("checkpoint carries different frozen encoder weights");
  return m;
}

// ---------------------------------------------------------------------------
// Data plumbing

bool Splits::is_train(int e) const { return std::binary_search(train.begin(), train.end(), e); }
bool Splits::is_validation(int e) const { return std::binary_search(validation.begin(), validation.end(), e); }

Splits make_splits(const Corpus& corpus, double validation_fraction) {
  if (validation_fraction < 0 || validation_fraction >= 1)
    throw std::invalid_argument("validation_fraction must be in [0, 1)");
  std::set<int> test, all;
  for (const auto& d : corpus.pretrain) {
    all.insert(d.episode_id);
    if (d.split == langdata::kTest) test.insert(d.episode_id);
  }
  for (const auto& r : corpus.qa) {
    all.insert(r.item.episode_id);
    if (r.split == langdata::kTest) test.insert(r.item.episode_id);
  }
  Splits s;
  std::vector<int> rest;
  for (int e : all) (test.count(e) ? s.test : rest).push_back(e);
  const auto n_val = static_cast<std::size_t>(std::floor(rest.size() * validation_fraction));
  s.train.assign(rest.begin(), rest.end() - static_cast<long>(n_val));
  s.validation.assign(rest.end() - static_cast<long>(n_val), rest.end());
  return s;
}

GridCache::GridCache(const Corpus& corpus, const bevenc::FrozenEncoderParams& params) {
  std::set<std::pair<int, int>> keys;
  for (const auto& d : corpus.pretrain) keys.insert({d.episode_id, d.frame_index});
  for (const auto& r : corpus.qa) keys.insert({r.item.episode_id, r.item.frame_index});
  for (const auto& k : keys) grids_.emplace(k, bevenc::encode_scene(corpus.scene(k.first, k.second), params));
}

const Tensor<float>& GridCache::get(int episode, int frame) const {
  auto it = grids_.find({episode, frame});
  if (it == grids_.end())
    throw std::out_of_range("no encoded grid for episode " + std::to_string(episode) + " frame " +
                            std::to_string(frame));
  return it->second;
}

Tensor<float> GridCache::stack(const std::vector<std::pair<int, int>>& keys) const {
  const std::size_t per = bevenc::kGridSize * bevenc::kGridSize * bevenc::kChannels;
  std::vector<float> data;
  data.reserve(keys.size() * per);
  for (const auto& k : keys) {
    const auto v = get(k.first, k.second).values();
    data.insert(data.end(), v.begin(), v.end());
  }
  return Tensor<float>({keys.size(), bevenc::kGridSize, bevenc::kGridSize, bevenc::kChannels}, std::move(data));
}

// ---------------------------------------------------------------------------
// Training

namespace {

/// Slot rows for the warm-up: the mean token embedding of each frame's
/// description, standardized over the width like a LayerNorm output.
Tensor<float> summary_rows(const lm::MicroLMParams<float>& model, const std::vector<const std::vector<int>*>& texts) {
  const std::size_t d = model.config.d;
  const auto table = model.tok_emb.values();
  std::vector<float> out(texts.size() * d, 0.0f);
  for (std::size_t n = 0; n < texts.size(); ++n) {
    std::vector<double> mean(d, 0.0);
    for (int id : *texts[n])
      for (std::size_t j = 0; j < d; ++j) mean[j] += table[static_cast<std::size_t>(id) * d + j];
    double mu = 0, var = 0;
    for (double v : mean) mu += v;
    mu /= d;
    for (double v : mean) var += (v - mu) * (v - mu);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + projector::kNormEpsilon);
    for (std::size_t j = 0; j < d; ++j) out[n * d + j] = static_cast<float>((mean[j] - mu) * inv);
  }
  return Tensor<float>({texts.size(), d}, std::move(out));
}

}  // namespace

lm::MicroLMParams<float> warmup_lm(const TrainConfig& cfg, const Corpus& corpus, TrainLog* log) {
  auto model = lm::MicroLMParams<float>::init(lm_config_for(cfg, corpus.vocab), cfg.lm_seed);
  const auto splits = make_splits(corpus, cfg.validation_fraction);
  auto samples = description_samples(corpus, splits, false, model.config.max_len);
  auto qa = qa_samples(corpus, splits, false, model.config.max_len);
  samples.insert(samples.end(), qa.begin(), qa.end());
  std::map<std::pair<int, int>, std::vector<int>> descriptions;
  for (const auto& d : corpus.pretrain)
    descriptions[{d.episode_id, d.frame_index}] = corpus.vocab.encode(d.description);
  TrainLog local;
  local.stage = "warmup";
  const auto start = Clock::now();
  if (cfg.lm_warmup_epochs > 0 && !samples.empty()) {
    model.set_trainable(true);
    numcore::AdamW<float> opt;
    opt.add_group("lm", model.named(), cfg.adamw(cfg.lm_warmup_lr));
    const std::size_t bs = static_cast<std::size_t>(std::max(1, cfg.lm_warmup_batch));
    int step = 0;
    for (int epoch = 0; epoch < cfg.lm_warmup_epochs; ++epoch) {
      const auto order = epoch_order(samples.size(), SplitMix64::derive(cfg.lm_seed, kWarmupShuffleSalt), epoch);
      double sum = 0;
      int batches = 0;
      for (std::size_t i = 0; i < order.size(); i += bs) {
        std::vector<const PromptAssembly*> batch;
        std::vector<const std::vector<int>*> texts;
        for (std::size_t j = i; j < std::min(order.size(), i + bs); ++j) {
          const auto& s = samples[order[j]];
          batch.push_back(&s.prompt);
          auto it = descriptions.find(s.key);
          if (it == descriptions.end())
            throw std::invalid_argument("warm-up: no description for episode " + std::to_string(s.key.first) +
                                        " frame " + std::to_string(s.key.second));
          texts.push_back(&it->second);
        }
        Tape<float> tape(true);
        const auto slot = summary_rows(model, texts);
        auto loss = lm::sequence_loss(tape, batch, slot, model, static_cast<const lm::LoraAdapter<float>*>(nullptr));
        tape.backward(loss);
        TrainEvent ev{step++, epoch, "warmup", loss.item(), {{"lm", opt.grad_norm("lm")}}, now_seconds()};
        local.steps.push_back(std::move(ev));
        opt.step();
        sum += loss.item();
        ++batches;
      }
      local.epoch_mean_loss.push_back(sum / batches);
    }
  }
  model.set_trainable(false);
  local.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  if (log) *log = std::move(local);
  return model;
}

StageResult pretrain(const TrainConfig& cfg, const Corpus& corpus, const lm::MicroLMParams<float>& base,
                     const GridCache* cache) {
  if (base.config.vocab != corpus.vocab.size()) throw CheckpointMismatch("base LM vocabulary differs from the corpus");
  std::optional<GridCache> own;
  if (!cache) cache = &own.emplace(corpus, bevenc::FrozenEncoderParams::canonical());
  const auto splits = make_splits(corpus, cfg.validation_fraction);
  const auto train = description_samples(corpus, splits, false, base.config.max_len);
  const auto val = description_samples(corpus, splits, true, base.config.max_len);
  StageResult r;
  r.proj = projector::ProjectorParams<float>::init(projector_config_for(cfg), SplitMix64::derive(cfg.seed, kProjectorSalt));
  StageRunner runner{cfg, corpus, base, *cache, r.proj, nullptr};
  r.log = runner.run("pretrain", train, val);
  return r;
}

StageResult finetune(const TrainConfig& cfg, const Corpus& corpus, const lm::MicroLMParams<float>& base,
                     const projector::ProjectorParams<float>* stage1, const GridCache* cache) {
  if (base.config.vocab != corpus.vocab.size()) throw CheckpointMismatch("base LM vocabulary differs from the corpus");
  if (!stage1 && !cfg.ablate_pretraining)
    throw std::invalid_argument("finetune: a stage-1 checkpoint is required unless ablate_pretraining is set");
  std::optional<GridCache> own;
  if (!cache) cache = &own.emplace(corpus, bevenc::FrozenEncoderParams::canonical());
  const auto splits = make_splits(corpus, cfg.validation_fraction);
  const auto train = qa_samples(corpus, splits, false, base.config.max_len);
  const auto val = qa_samples(corpus, splits, true, base.config.max_len);
  StageResult r;
  r.proj = projector::ProjectorParams<float>::init(projector_config_for(cfg), SplitMix64::derive(cfg.seed, kProjectorSalt));
  if (stage1 && !cfg.ablate_pretraining) {
    if (stage1->config.variant != cfg.variant || stage1->config.d != cfg.lm.d)
      throw CheckpointMismatch("stage-1 projector variant or width differs from the configuration");
    r.proj.load(stage1->named());
  }
  r.lora = lm::LoraAdapter<float>::init(base.config, cfg.lora, SplitMix64::derive(cfg.seed, kLoraSalt));
  StageRunner runner{cfg, corpus, base, *cache, r.proj, &*r.lora};
  r.log = runner.run("finetune", train, val);
  return r;
}

// ---------------------------------------------------------------------------
// Inference

namespace {

std::string generate_answer(const Model& m, const Tensor<float>& grid, const std::string& question, int max_new) {
  const auto q = m.vocab.encode(question);
  const auto prompt = lm::assemble_query(q, sep_id(m.vocab), m.lm.config.max_len);
  Tape<float> tape(false);
  auto ebev = projector::project(tape, grid, m.proj);
  const auto ids = lm::generate(prompt, ebev, m.lm, m.adapter(), static_cast<std::size_t>(std::max(1, max_new)));
  return m.vocab.decode(ids);
}

}  // namespace

std::vector<Prediction> predict(const Model& model, const Corpus& corpus, std::string_view split, int max_new,
                                const GridCache* cache) {
  std::optional<GridCache> own;
  if (!cache) cache = &own.emplace(corpus, model.bev);
  std::vector<Prediction> out;
  for (const auto& r : corpus.qa) {
    if (r.split != split) continue;
    const auto& grid = cache->get(r.item.episode_id, r.item.frame_index);
    out.push_back({r.item, generate_answer(model, grid, r.item.question, max_new)});
  }
  return out;
}

std::string answer(const Model& model, const scenesim::Scene& scene, const std::string& question, int max_new) {
  scenesim::validate_scene(scene);
  return generate_answer(model, bevenc::encode_scene(scene, model.bev), question, max_new);
}

MemorizeResult memorize(const TrainConfig& cfg, const lm::MicroLMParams<float>& base, const langdata::Vocab& vocab,
                        const scenesim::Scene& scene, const std::string& question, const std::string& gold,
                        int max_steps, int check_every) {
  if (max_steps < 1 || check_every < 1) throw std::invalid_argument("memorize: steps must be >= 1");
  Model m;
  m.vocab = vocab;
  m.lm = base;
  m.proj = projector::ProjectorParams<float>::init(projector_config_for(cfg), SplitMix64::derive(cfg.seed, kProjectorSalt));
  m.lora = lm::LoraAdapter<float>::init(base.config, cfg.lora, SplitMix64::derive(cfg.seed, kLoraSalt));
  const auto grid = bevenc::encode_scene(scene, m.bev);
  const auto prompt = lm::assemble_prompt(lm::Stage::kFinetune, vocab.encode(question), vocab.encode(gold),
                                          sep_id(vocab), base.config.max_len);
  numcore::AdamW<float> opt;
  opt.add_group("projector", m.proj.named(), cfg.adamw(cfg.lr_projector));
  opt.add_group("lora", m.lora->named(), cfg.adamw(cfg.lr_lm));
  const auto want = text::normalize_answer(gold);
  MemorizeResult r;
  for (int step = 1; step <= max_steps; ++step) {
    Tape<float> tape;
    auto ebev = projector::project(tape, grid, m.proj);
    auto loss = lm::sequence_loss(tape, {&prompt}, ebev, m.lm, m.adapter());
    r.losses.push_back(loss.item());
    tape.backward(loss);
    opt.step();
    if (step % check_every == 0 || step == max_steps) {
      r.answer = generate_answer(m, grid, question, static_cast<int>(prompt.target_count()) + 1);
      if (text::normalize_answer(r.answer) == want) {
        r.steps = step;
        return r;
      }
    }
  }
  return r;
}

evalmetrics::EvalReport score(const std::vector<Prediction>& predictions) {
  std::vector<evalmetrics::ScoredItem> items;
  for (const auto& p : predictions) items.push_back({p.item.category, p.prediction, p.item.gold_answer});
  return evalmetrics::evaluate(items);
}

double qa_overall(const evalmetrics::EvalReport& report) {
  double correct = 0;
  int total = 0;
  for (const auto& [c, row] : report.per_category) {
    if (c == scenesim::Category::kBehavior) continue;
    correct += row.accuracy * row.count;
    total += row.count;
  }
  return total ? correct / total : 0.0;
}

// ---------------------------------------------------------------------------
// Ablations

std::string corpus_hash(const Corpus& corpus) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const std::string& s) {
    for (char c : s) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    h = (h ^ 0x1f) * 0x100000001b3ULL;
  };
  for (const auto& d : corpus.pretrain)
    mix(std::to_string(d.episode_id) + "/" + std::to_string(d.frame_index) + "/" + d.description + "/" + d.split);
  for (const auto& r : corpus.qa)
    mix(std::to_string(r.item.episode_id) + "/" + std::to_string(r.item.frame_index) + "/" + r.item.question + "/" +
        r.item.gold_answer + "/" + r.split);
  return hex64(h);
}

const AblationRow& AblationReport::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r;
  throw std::out_of_range("ablation report has no row " + name);
}

namespace {

const std::vector<std::string> kTableColumns = {"exist", "count", "object", "status", "comparison", "overall"};

std::string arm_key(projector::Variant v, bool pretrained, std::uint64_t seed) {
  return std::string(projector::variant_name(v)) + "/" + (pretrained ? "pretrained" : "none") + "/" +
         std::to_string(seed);
}

}  // namespace

std::string AblationReport::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = kind == AblationKind::kPretraining ? "pretraining" : "projector";
  j["seeds"] = seeds;
  j["data_hash"] = data_hash;
  j["columns"] = kTableColumns;
  auto& rs = j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row{{"name", r.name}};
    for (const auto& c : kTableColumns) row[c] = r.accuracy.at(c);
    row["overall_per_seed"] = r.overall_per_seed;
    rs.push_back(row);
  }
  if (rows.size() >= 2) {
    nlohmann::ordered_json delta;
    for (const auto& c : kTableColumns) delta[c] = rows.back().accuracy.at(c) - rows.front().accuracy.at(c);
    j["delta_last_minus_first"] = delta;
  }
  j["wall_seconds"] = wall_seconds;
  return j.dump(2);
}

std::string AblationReport::to_table() const {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-16s", kind == AblationKind::kPretraining ? "Setting" : "Projector");
  os << buf;
  for (const auto& c : kTableColumns) {
    std::snprintf(buf, sizeof buf, "%12s", c.c_str());
    os << buf;
  }
  os << '\n';
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-16s", r.name.c_str());
    os << buf;
    for (const auto& c : kTableColumns) {
      std::snprintf(buf, sizeof buf, "%12.1f", r.accuracy.at(c));
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

AblationReport run_ablation(AblationKind kind, const TrainConfig& base_cfg, const Corpus& corpus,
                            const std::vector<std::uint64_t>& seeds, const lm::MicroLMParams<float>* base_lm,
                            AblationMemo* memo, std::ostream* progress) {
  if (seeds.empty()) throw std::invalid_argument("ablation: at least one seed is required");
  const auto start = Clock::now();
  std::optional<lm::MicroLMParams<float>> own_lm;
  if (!base_lm) {
    if (progress) *progress << "ablation: warming up the base LM\n" << std::flush;
    base_lm = &own_lm.emplace(warmup_lm(base_cfg, corpus));
  }
  const GridCache cache(corpus, bevenc::FrozenEncoderParams::canonical());
  AblationMemo local;
  if (!memo) memo = &local;

  struct Arm {
    std::string name;
    projector::Variant variant;
    bool pretrained;
  };
  std::vector<Arm> arms;
  if (kind == AblationKind::kPretraining) {
    arms = {{"No Pretraining", base_cfg.variant, false}, {"Full Model", base_cfg.variant, true}};
  } else {
    arms = {{"Linear", projector::Variant::kLinear, true},
            {"Conv.", projector::Variant::kShallowConv, true},
            {"Deeper Conv.", projector::Variant::kDeepConv, true}};
  }

  AblationReport rep;
  rep.kind = kind;
  rep.seeds = seeds;
  rep.data_hash = corpus_hash(corpus);
  for (const auto& arm : arms) {
    AblationRow row;
    row.name = arm.name;
    std::map<std::string, double> sums;
    for (auto seed : seeds) {
      const auto key = arm_key(arm.variant, arm.pretrained, seed);
      if (!memo->count(key)) {
        TrainConfig cfg = base_cfg;
        cfg.seed = seed;
        cfg.variant = arm.variant;
        cfg.ablate_pretraining = !arm.pretrained;
        const auto t0 = Clock::now();
        std::optional<StageResult> s1;
        if (arm.pretrained) s1 = pretrain(cfg, corpus, *base_lm, &cache);
        auto s2 = finetune(cfg, corpus, *base_lm, s1 ? &s1->proj : nullptr, &cache);
        Model m{corpus.vocab, bevenc::FrozenEncoderParams::canonical(), *base_lm, s2.proj, s2.lora};
        (*memo)[key] = score(predict(m, corpus, langdata::kTest, cfg.max_new_tokens, &cache));
        if (progress)
          *progress << "ablation: " << key << " overall " << qa_overall((*memo)[key]) << " ("
                    << std::chrono::duration<double>(Clock::now() - t0).count() << " s)\n"
                    << std::flush;
      }
      const auto& report = memo->at(key);
      for (const auto& c : kTableColumns) {
        if (c == "overall") continue;
        const auto cat = *scenesim::parse_category(c);
        auto it = report.per_category.find(cat);
        sums[c] += it == report.per_category.end() ? 0.0 : it->second.accuracy;
      }
      row.overall_per_seed.push_back(qa_overall(report));
      sums["overall"] += row.overall_per_seed.back();
    }
    for (const auto& c : kTableColumns) row.accuracy[c] = sums[c] / seeds.size();
    rep.rows.push_back(std::move(row));
  }
  rep.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return rep;
}

}  // namespace bella::trainer
