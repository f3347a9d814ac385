// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-stage training pipeline.
//
//   warm-up  text-only language modelling that initializes the base LM,
//            which is frozen from then on
//   stage 1  BEV-text alignment: only the projector trains
//   stage 2  QA finetuning: projector (lr_projector) and LoRA (lr_lm) train
//
// The training split is every non-test episode minus the last
// `validation_fraction` of them, which are held out for best-epoch selection.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <optional>
#include <string>
#include <vector>

#include "bella/bevenc/bevenc.hpp"
#include "bella/evalmetrics/metrics.hpp"
#include "bella/langdata/dataset.hpp"
#include "bella/lm/lm.hpp"
#include "bella/numcore/checkpoint.hpp"
#include "bella/numcore/optim.hpp"
#include "bella/projector/projector.hpp"

namespace bella::trainer {

struct TrainConfig {
  std::uint64_t seed = 7;
  int epochs = 10;
  int batch_size = 2;
  double lr_projector = 1e-4;
  double lr_lm = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  projector::Variant variant = projector::Variant::kDeepConv;
  lm::LMConfig lm;  // vocab is filled from the corpus
  lm::LoraConfig lora;
  bool ablate_pretraining = false;
  double validation_fraction = 0.1;
  /// Base-LM warm-up on the training-split text, after which the LM is
  /// frozen. The BEV slot holds a text summary of the frame: the mean token
  /// embedding of its description, standardized over the width.
  std::uint64_t lm_seed = 1234;
  int lm_warmup_epochs = 4;
  int lm_warmup_batch = 16;
  double lm_warmup_lr = 1e-3;
  int max_new_tokens = 12;

  numcore::AdamWConfig adamw(double lr) const { return {lr, weight_decay, beta1, beta2, epsilon}; }
  /// Human-readable warnings for settings that depart from the reference
  /// hyperparameters (e.g. equal learning rates).
  std::vector<std::string> warnings() const;
};

struct TrainEvent {
  int step = 0;
  int epoch = 0;
  std::string stage;
  double loss = 0;
  std::map<std::string, double> grad_norms;
  double timestamp = 0;
};

struct TrainLog {
  std::string stage;
  std::vector<TrainEvent> steps;
  std::vector<double> epoch_mean_loss;
  std::vector<double> validation_loss;
  int best_epoch = -1;
  double wall_seconds = 0;
  /// "<bevenc|lm>/<before|after>" -> checksum
  std::map<std::string, std::uint64_t> checksums;
  std::vector<std::string> warnings;

  /// One JSON object per step event, then one summary object.
  void write_jsonl(const std::filesystem::path& file) const;
};

/// Everything a trained pipeline needs at inference time.
struct Model {
  langdata::Vocab vocab;
  bevenc::FrozenEncoderParams bev = bevenc::FrozenEncoderParams::canonical();
  lm::MicroLMParams<float> lm;
  projector::ProjectorParams<float> proj;
  std::optional<lm::LoraAdapter<float>> lora;

  const lm::LoraAdapter<float>* adapter() const { return lora ? &*lora : nullptr; }
};

class CheckpointMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensors plus "meta/model_config" and "meta/vocab_fingerprint".
numcore::TensorMap model_checkpoint(const Model& model);

/// Rebuilds a model; the vocabulary must match the stored fingerprint.
/// Throws CheckpointMismatch otherwise.
Model model_from_checkpoint(const numcore::TensorMap& tensors, const langdata::Vocab& vocab);

/// Base LM only (plus meta), used to share a warmed-up LM between runs.
numcore::TensorMap base_lm_checkpoint(const lm::MicroLMParams<float>& lm, const langdata::Vocab& vocab);
lm::MicroLMParams<float> base_lm_from_checkpoint(const numcore::TensorMap& tensors, const langdata::Vocab& vocab);

/// Split membership by episode id.
struct Splits {
  std::vector<int> train, validation, test;
  bool is_train(int episode) const;
  bool is_validation(int episode) const;
};
Splits make_splits(const langdata::Corpus& corpus, double validation_fraction);

/// Precomputed frozen-encoder outputs per (episode, frame).
class GridCache {
 public:
  GridCache(const langdata::Corpus& corpus, const bevenc::FrozenEncoderParams& params);
  const numcore::Tensor<float>& get(int episode, int frame) const;
  /// [N, 32, 32, 9] stack.
  numcore::Tensor<float> stack(const std::vector<std::pair<int, int>>& keys) const;

 private:
  std::map<std::pair<int, int>, numcore::Tensor<float>> grids_;
};

/// Text-only warm-up of a freshly initialized base LM. Every prompt's slot
/// row is the standardized mean token embedding of its frame's description.
lm::MicroLMParams<float> warmup_lm(const TrainConfig& config, const langdata::Corpus& corpus, TrainLog* log = nullptr);

struct StageResult {
  projector::ProjectorParams<float> proj;
  std::optional<lm::LoraAdapter<float>> lora;
  TrainLog log;
};

/// Stage 1. Rejects descriptions whose frame index is not a multiple of 4.
StageResult pretrain(const TrainConfig& config, const langdata::Corpus& corpus, const lm::MicroLMParams<float>& base,
                     const GridCache* cache = nullptr);

/// Stage 2. `stage1` may be null only when config.ablate_pretraining is set,
/// in which case the projector starts from its random initialization.
StageResult finetune(const TrainConfig& config, const langdata::Corpus& corpus, const lm::MicroLMParams<float>& base,
                     const projector::ProjectorParams<float>* stage1, const GridCache* cache = nullptr);

struct Prediction {
  scenesim::QAItem item;
  std::string prediction;
};

/// Greedy answers for every QA item of `split`.
std::vector<Prediction> predict(const Model& model, const langdata::Corpus& corpus, std::string_view split,
                                int max_new_tokens, const GridCache* cache = nullptr);

std::string answer(const Model& model, const scenesim::Scene& scene, const std::string& question, int max_new_tokens);

struct MemorizeResult {
  int steps = -1;  // first checked step whose greedy answer is exact; -1 if none
  std::string answer;
  std::vector<double> losses;
};

/// Overfits one (scene, question, answer) triple: projector and fresh LoRA
/// train on it alone, and the greedy answer is checked every `check_every`
/// steps.
MemorizeResult memorize(const TrainConfig& config, const lm::MicroLMParams<float>& base, const langdata::Vocab& vocab,
                        const scenesim::Scene& scene, const std::string& question, const std::string& answer,
                        int max_steps = 200, int check_every = 10);

evalmetrics::EvalReport score(const std::vector<Prediction>& predictions);

/// Mean accuracy over the five question-answering categories (behavior is
/// excluded), sample weighted.
double qa_overall(const evalmetrics::EvalReport& report);

// ---------------------------------------------------------------------------
// Ablations

enum class AblationKind { kPretraining, kProjector };

struct AblationRow {
  std::string name;
  std::map<std::string, double> accuracy;  // category -> mean percent over seeds; plus "overall"
  std::vector<double> overall_per_seed;
};

struct AblationReport {
  AblationKind kind = AblationKind::kPretraining;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;
  std::string data_hash;  // shared by every arm
  double wall_seconds = 0;

  const AblationRow& row(const std::string& name) const;
  std::string to_json() const;
  std::string to_table() const;
};

/// Test-split reports of finished arms keyed by "<variant>/<pretrained|none>/<seed>",
/// so that the two ablations can share their common arm.
using AblationMemo = std::map<std::string, evalmetrics::EvalReport>;

/// Runs every arm for every seed on the same corpus. The base LM is warmed
/// up once (unless given) and shared by all arms and seeds.
AblationReport run_ablation(AblationKind kind, const TrainConfig& base, const langdata::Corpus& corpus,
                            const std::vector<std::uint64_t>& seeds, const lm::MicroLMParams<float>* base_lm = nullptr,
                            AblationMemo* memo = nullptr, std::ostream* progress = nullptr);

/// FNV-1a over the training and test QA/description records.
std::string corpus_hash(const langdata::Corpus& corpus);

}  // namespace bella::trainer
