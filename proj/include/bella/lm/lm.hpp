// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Micro decoder-only language model with a BEV placeholder slot and LoRA
// adapters.
//
// Sequences are packed row-wise into one [R, d] matrix; attention runs per
// segment. The placeholder row of each sequence is overwritten by that
// sequence's BEV embedding before the positional embedding is added.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bella/numcore/gemm.hpp"
#include "bella/numcore/ops.hpp"
#include "bella/numcore/rng.hpp"
#include "bella/numcore/tensor.hpp"

namespace bella::lm {

using numcore::Tape;
using numcore::Tensor;

template <typename T>
using NamedTensors = std::map<std::string, Tensor<T>>;

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kPlaceholder = 3;
inline constexpr std::size_t kPlaceholderPosition = 1;
inline constexpr double kNormEpsilon = 1e-5;

struct LMConfig {
  std::size_t vocab = 0;
  std::size_t d = 128;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t ff = 512;
  std::size_t max_len = 64;

  void validate() const {
    if (vocab < 4) throw std::invalid_argument("lm: vocabulary must hold the four special tokens");
    if (d == 0 || heads == 0 || d % heads != 0)
      throw std::invalid_argument("lm: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                                  " heads");
    if (layers == 0 || ff == 0 || max_len < 3) throw std::invalid_argument("lm: degenerate configuration");
  }
  bool operator==(const LMConfig&) const = default;
};

struct LoraConfig {
  std::size_t r = 8;
  double alpha = 16.0;
  double scaling() const { return alpha / static_cast<double>(r); }
};

/// Adapted linears per block, in this order.
enum Site { kQuery, kKey, kValue, kOutput, kFF1, kFF2, kSiteCount };
inline constexpr std::array<const char*, kSiteCount> kSiteNames = {"q", "k", "v", "o", "ff1", "ff2"};

template <typename T>
struct Block {
  Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
  std::array<Tensor<T>, kSiteCount> w, b;  // w[site] is [out, in]
};

namespace detail {

template <typename T>
Tensor<T> uniform(SplitMix64& rng, numcore::Shape shape, double bound) {
  std::vector<T> data(numcore::shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> normal(SplitMix64& rng, numcore::Shape shape, double stddev) {
  std::vector<T> data(numcore::shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(stddev * rng.normal());
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
void copy_into(Tensor<T>& dst, const Tensor<T>& src, const std::string& name) {
  if (dst.shape() != src.shape())
    throw std::invalid_argument(name + " has shape " + numcore::shape_str(src.shape()) + ", expected " +
                                numcore::shape_str(dst.shape()));
  std::copy(src.values().begin(), src.values().end(), dst.mutable_values().begin());
}

}  // namespace detail

inline std::pair<std::size_t, std::size_t> site_shape(const LMConfig& c, int site) {
  switch (site) {
    case kFF1:
      return {c.ff, c.d};
    case kFF2:
      return {c.d, c.ff};
    default:
      return {c.d, c.d};
  }
}

template <typename T>
struct MicroLMParams {
  LMConfig config;
  Tensor<T> tok_emb;  // [V, d]
  Tensor<T> pos_emb;  // [L_max, d]
  std::vector<Block<T>> blocks;
  Tensor<T> lnf_g, lnf_b;
  Tensor<T> head_w, head_b;  // [V, d], [V]
  /// Set by merge_lora; a merged model refuses a second merge.
  bool lora_merged = false;

  /// Embeddings ~ N(0, 0.02^2); linear weights uniform in +-1/sqrt(fan_in);
  /// biases 0; norm gains 1.
  static MicroLMParams init(const LMConfig& config, std::uint64_t seed) {
    config.validate();
    MicroLMParams p;
    p.config = config;
    SplitMix64 rng(seed);
    const std::size_t d = config.d;
    p.tok_emb = detail::normal<T>(rng, {config.vocab, d}, 0.02);
    p.pos_emb = detail::normal<T>(rng, {config.max_len, d}, 0.02);
    for (std::size_t l = 0; l < config.layers; ++l) {
      Block<T> b;
      b.ln1_g = Tensor<T>::full({d}, T(1));
      b.ln1_b = Tensor<T>::zeros({d});
      b.ln2_g = Tensor<T>::full({d}, T(1));
      b.ln2_b = Tensor<T>::zeros({d});
      for (int s = 0; s < kSiteCount; ++s) {
        const auto [out, in] = site_shape(config, s);
        b.w[s] = detail::uniform<T>(rng, {out, in}, 1.0 / std::sqrt(double(in)));
        b.b[s] = Tensor<T>::zeros({out});
      }
      p.blocks.push_back(std::move(b));
    }
    p.lnf_g = Tensor<T>::full({d}, T(1));
    p.lnf_b = Tensor<T>::zeros({d});
    p.head_w = detail::uniform<T>(rng, {config.vocab, d}, 1.0 / std::sqrt(double(d)));
    p.head_b = Tensor<T>::zeros({config.vocab});
    return p;
  }

  /// All base tensors under the "lm/" prefix.
  NamedTensors<T> named() const {
    NamedTensors<T> out;
    out["lm/tok_emb"] = tok_emb;
    out["lm/pos_emb"] = pos_emb;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const std::string pre = "lm/block" + std::to_string(l) + ".";
      const auto& b = blocks[l];
      out[pre + "ln1.gamma"] = b.ln1_g;
      out[pre + "ln1.beta"] = b.ln1_b;
      out[pre + "ln2.gamma"] = b.ln2_g;
      out[pre + "ln2.beta"] = b.ln2_b;
      for (int s = 0; s < kSiteCount; ++s) {
        out[pre + kSiteNames[s] + ".weight"] = b.w[s];
        out[pre + kSiteNames[s] + ".bias"] = b.b[s];
      }
    }
    out["lm/final_norm.gamma"] = lnf_g;
    out["lm/final_norm.beta"] = lnf_b;
    out["lm/head.weight"] = head_w;
    out["lm/head.bias"] = head_b;
    return out;
  }

  void load(const NamedTensors<T>& tensors) {
    for (auto& [name, t] : named()) {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw std::invalid_argument("lm: checkpoint lacks " + name);
      detail::copy_into(t, it->second, name);
    }
  }

  void set_trainable(bool flag) {
    for (auto& [name, t] : named()) {
      auto copy = t;
      copy.set_requires_grad(flag);
    }
  }

  std::size_t count_params() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t.size();
    return n;
  }

  /// Deep copy with fresh storage.
  MicroLMParams clone() const {
    MicroLMParams p = *this;
    p.tok_emb = tok_emb.clone();
    p.pos_emb = pos_emb.clone();
    for (auto& b : p.blocks) {
      b.ln1_g = b.ln1_g.clone(), b.ln1_b = b.ln1_b.clone(), b.ln2_g = b.ln2_g.clone(), b.ln2_b = b.ln2_b.clone();
      for (int s = 0; s < kSiteCount; ++s) b.w[s] = b.w[s].clone(), b.b[s] = b.b[s].clone();
    }
    p.lnf_g = lnf_g.clone(), p.lnf_b = lnf_b.clone(), p.head_w = head_w.clone(), p.head_b = head_b.clone();
    return p;
  }

  template <typename U>
  MicroLMParams<U> cast() const {
    MicroLMParams<U> p;
    p.config = config;
    p.lora_merged = lora_merged;
    auto c = [](const Tensor<T>& t) { return t.template cast<U>(); };
    p.tok_emb = c(tok_emb), p.pos_emb = c(pos_emb);
    for (const auto& b : blocks) {
      Block<U> o;
      o.ln1_g = c(b.ln1_g), o.ln1_b = c(b.ln1_b), o.ln2_g = c(b.ln2_g), o.ln2_b = c(b.ln2_b);
      for (int s = 0; s < kSiteCount; ++s) o.w[s] = c(b.w[s]), o.b[s] = c(b.b[s]);
      p.blocks.push_back(std::move(o));
    }
    p.lnf_g = c(lnf_g), p.lnf_b = c(lnf_b), p.head_w = c(head_w), p.head_b = c(head_b);
    return p;
  }
};

template <typename T>
struct LoraPair {
  Tensor<T> a;  // [r, in]
  Tensor<T> b;  // [out, r]
};

template <typename T>
struct LoraAdapter {
  LoraConfig config;
  std::vector<std::array<LoraPair<T>, kSiteCount>> layers;

  /// A uniform in +-1/sqrt(in), B = 0, so the adapted model starts equal to
  /// the base model. Both are trainable.
  static LoraAdapter init(const LMConfig& lm, const LoraConfig& config, std::uint64_t seed) {
    if (config.r == 0) throw std::invalid_argument("lora: rank must be positive");
    LoraAdapter out;
    out.config = config;
    SplitMix64 rng(seed);
    for (std::size_t l = 0; l < lm.layers; ++l) {
      std::array<LoraPair<T>, kSiteCount> sites;
      for (int s = 0; s < kSiteCount; ++s) {
        const auto [o, in] = site_shape(lm, s);
        sites[s].a = detail::uniform<T>(rng, {config.r, in}, 1.0 / std::sqrt(double(in)));
        sites[s].a.set_requires_grad(true);
        sites[s].b = Tensor<T>::zeros({o, config.r}, true);
      }
      out.layers.push_back(std::move(sites));
    }
    return out;
  }

  /// "lora/blockN.<site>.A" and ".B".
  NamedTensors<T> named() const {
    NamedTensors<T> out;
    for (std::size_t l = 0; l < layers.size(); ++l)
      for (int s = 0; s < kSiteCount; ++s) {
        const std::string pre = "lora/block" + std::to_string(l) + "." + kSiteNames[s];
        out[pre + ".A"] = layers[l][s].a;
        out[pre + ".B"] = layers[l][s].b;
      }
    return out;
  }

  void load(const NamedTensors<T>& tensors) {
    for (auto& [name, t] : named()) {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw std::invalid_argument("lora: checkpoint lacks " + name);
      detail::copy_into(t, it->second, name);
    }
  }

  std::size_t count_params() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t.size();
    return n;
  }

  template <typename U>
  LoraAdapter<U> cast() const {
    LoraAdapter<U> out;
    out.config = config;
    for (const auto& sites : layers) {
      std::array<LoraPair<U>, kSiteCount> o;
      for (int s = 0; s < kSiteCount; ++s) o[s] = {sites[s].a.template cast<U>(), sites[s].b.template cast<U>()};
      out.layers.push_back(std::move(o));
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Prompts

enum class Stage { kPretrain, kFinetune };

struct PromptAssembly {
  std::vector<int> ids;
  std::vector<char> loss_mask;  // loss_mask[p]: ids[p] is a target predicted from position p - 1
  std::size_t placeholder = kPlaceholderPosition;

  std::size_t length() const { return ids.size(); }
  std::size_t target_count() const { return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), 1)); }
};

/// pretrain: [BOS, <bev>, y..., EOS], loss on y and EOS.
/// finetune: [BOS, <bev>, q..., SEP, a..., EOS], loss on a and EOS.
/// Throws std::length_error when the sequence exceeds max_len and
/// std::invalid_argument on an empty finetune question.
inline PromptAssembly assemble_prompt(Stage stage, const std::vector<int>& question, const std::vector<int>& target,
                                      int sep_id, std::size_t max_len) {
  PromptAssembly a;
  a.ids = {kBos, kPlaceholder};
  if (stage == Stage::kFinetune) {
    if (question.empty()) throw std::invalid_argument("assemble_prompt: finetune question is empty");
    a.ids.insert(a.ids.end(), question.begin(), question.end());
    a.ids.push_back(sep_id);
  } else if (!question.empty()) {
    throw std::invalid_argument("assemble_prompt: pretrain prompts carry no question");
  }
  const std::size_t prefix = a.ids.size();
  a.ids.insert(a.ids.end(), target.begin(), target.end());
  a.ids.push_back(kEos);
  if (a.ids.size() > max_len)
    throw std::length_error("assemble_prompt: sequence of " + std::to_string(a.ids.size()) + " tokens (" +
                            std::to_string(question.size()) + " question, " + std::to_string(target.size()) +
                            " target) exceeds max length " + std::to_string(max_len));
  a.loss_mask.assign(a.ids.size(), 0);
  for (std::size_t p = prefix; p < a.ids.size(); ++p) a.loss_mask[p] = 1;
  for (std::size_t p = 0; p < a.ids.size(); ++p)
    if (a.ids[p] == kPlaceholder && p != kPlaceholderPosition)
      throw std::invalid_argument("assemble_prompt: placeholder token inside question or target");
  return a;
}

/// Generation prompt: [BOS, <bev>, q..., SEP] (or [BOS, <bev>] with no question).
inline PromptAssembly assemble_query(const std::vector<int>& question, int sep_id, std::size_t max_len) {
  PromptAssembly a;
  a.ids = {kBos, kPlaceholder};
  if (!question.empty()) {
    a.ids.insert(a.ids.end(), question.begin(), question.end());
    a.ids.push_back(sep_id);
  }
  if (a.ids.size() > max_len)
    throw std::length_error("assemble_query: " + std::to_string(a.ids.size()) + " tokens exceed max length " +
                            std::to_string(max_len));
  a.loss_mask.assign(a.ids.size(), 0);
  return a;
}

inline void check_assembly(const PromptAssembly& a, std::size_t max_len) {
  if (a.ids.size() < 2 || a.ids.size() > max_len)
    throw std::invalid_argument("lm: sequence length " + std::to_string(a.ids.size()) + " outside [2, " +
                                std::to_string(max_len) + "]");
  const auto n = std::count(a.ids.begin(), a.ids.end(), kPlaceholder);
  if (n != 1 || a.placeholder >= a.ids.size() || a.ids[a.placeholder] != kPlaceholder)
    throw std::invalid_argument("lm: sequence must hold exactly one placeholder, found " + std::to_string(n));
}

// ---------------------------------------------------------------------------
// Forward

template <typename T>
struct ForwardTrace {
  Tensor<T> embedded;  // [R, d] token + placeholder + positional rows
};

namespace detail {

template <typename T>
Tensor<T> adapted_linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         const LoraPair<T>* lora, T scaling) {
  auto y = numcore::linear(tape, x, w, b);
  if (!lora) return y;
  auto delta = numcore::linear(tape, numcore::linear(tape, x, lora->a), lora->b);
  return numcore::add(tape, y, numcore::scale(tape, delta, scaling));
}

}  // namespace detail

/// Runs a packed batch. `ebev` is [N, d], one row per sequence. Returns the
/// logits of `rows` (indices into the packed [R, V] matrix), or of every row
/// when `rows` is null.
template <typename T>
Tensor<T> forward(Tape<T>& tape, const std::vector<const PromptAssembly*>& batch, const Tensor<T>& ebev,
                  const MicroLMParams<T>& lm, const LoraAdapter<T>* lora, const std::vector<std::size_t>* rows = nullptr,
                  ForwardTrace<T>* trace = nullptr) {
  const auto& cfg = lm.config;
  numcore::detail::require(!batch.empty(), "lm: empty batch");
  numcore::detail::require(ebev.rank() == 2 && ebev.dim(0) == batch.size() && ebev.dim(1) == cfg.d,
                           "lm: BEV embedding " + numcore::shape_str(ebev.shape()) + " does not match " +
                               std::to_string(batch.size()) + " sequences of width " + std::to_string(cfg.d));
  if (lora && lora->layers.size() != cfg.layers) throw std::invalid_argument("lm: adapter depth mismatch");
  std::vector<int> ids, positions;
  std::vector<std::size_t> placeholder_rows;
  std::vector<numcore::Segment> segments;
  for (const auto* a : batch) {
    check_assembly(*a, cfg.max_len);
    const std::size_t start = ids.size();
    segments.push_back({start, a->ids.size()});
    placeholder_rows.push_back(start + a->placeholder);
    for (std::size_t p = 0; p < a->ids.size(); ++p) {
      if (a->ids[p] < 0 || static_cast<std::size_t>(a->ids[p]) >= cfg.vocab)
        throw std::out_of_range("lm: token id " + std::to_string(a->ids[p]) + " outside the vocabulary");
      ids.push_back(a->ids[p]);
      positions.push_back(static_cast<int>(p));
    }
  }
  auto x = numcore::embedding(tape, lm.tok_emb, ids);
  x = numcore::scatter_rows(tape, x, placeholder_rows, ebev);
  x = numcore::add(tape, x, numcore::embedding(tape, lm.pos_emb, positions));
  if (trace) trace->embedded = x;

  const T eps = static_cast<T>(kNormEpsilon);
  const T scaling = lora ? static_cast<T>(lora->config.scaling()) : T(0);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& b = lm.blocks[l];
    const LoraPair<T>* ad = lora ? lora->layers[l].data() : nullptr;
    auto site = [&](int s) { return ad ? ad + s : nullptr; };
    auto h = numcore::layer_norm(tape, x, b.ln1_g, b.ln1_b, eps);
    auto q = detail::adapted_linear(tape, h, b.w[kQuery], b.b[kQuery], site(kQuery), scaling);
    auto k = detail::adapted_linear(tape, h, b.w[kKey], b.b[kKey], site(kKey), scaling);
    auto v = detail::adapted_linear(tape, h, b.w[kValue], b.b[kValue], site(kValue), scaling);
    auto att = numcore::causal_attention(tape, q, k, v, segments, cfg.heads);
    x = numcore::add(tape, x, detail::adapted_linear(tape, att, b.w[kOutput], b.b[kOutput], site(kOutput), scaling));
    h = numcore::layer_norm(tape, x, b.ln2_g, b.ln2_b, eps);
    auto f = numcore::gelu(tape, detail::adapted_linear(tape, h, b.w[kFF1], b.b[kFF1], site(kFF1), scaling));
    x = numcore::add(tape, x, detail::adapted_linear(tape, f, b.w[kFF2], b.b[kFF2], site(kFF2), scaling));
  }
  if (rows) x = numcore::gather_rows(tape, x, *rows);
  x = numcore::layer_norm(tape, x, lm.lnf_g, lm.lnf_b, eps);
  return numcore::linear(tape, x, lm.head_w, lm.head_b);
}

/// Mean next-token cross-entropy over every masked position of the batch.
template <typename T>
Tensor<T> sequence_loss(Tape<T>& tape, const std::vector<const PromptAssembly*>& batch, const Tensor<T>& ebev,
                        const MicroLMParams<T>& lm, const LoraAdapter<T>* lora) {
  std::vector<std::size_t> rows;
  std::vector<int> targets;
  std::size_t start = 0;
  for (const auto* a : batch) {
    if (a->loss_mask.size() != a->ids.size()) throw std::invalid_argument("lm: loss mask length mismatch");
    for (std::size_t p = 1; p < a->ids.size(); ++p)
      if (a->loss_mask[p]) {
        rows.push_back(start + p - 1);
        targets.push_back(a->ids[p]);
      }
    if (a->loss_mask[0]) throw std::invalid_argument("lm: position 0 cannot be a target");
    start += a->ids.size();
  }
  if (rows.empty()) throw std::invalid_argument("lm: batch has no target positions");
  auto logits = forward(tape, batch, ebev, lm, lora, &rows);
  return numcore::cross_entropy(tape, logits, targets);
}

/// Greedy decoding: argmax (lowest id on ties) until EOS or max_new tokens.
/// EOS is not included in the result.
template <typename T>
std::vector<int> generate(const PromptAssembly& prompt, const Tensor<T>& ebev, const MicroLMParams<T>& lm,
                          const LoraAdapter<T>* lora, std::size_t max_new) {
  if (max_new == 0) throw std::invalid_argument("generate: max_new must be >= 1");
  PromptAssembly cur = prompt;
  std::vector<int> out;
  const Tensor<T> e = ebev.rank() == 1 ? ebev.reshaped({1, ebev.dim(0)}) : ebev;
  for (std::size_t step = 0; step < max_new && cur.ids.size() <= lm.config.max_len; ++step) {
    Tape<T> tape(false);
    const std::vector<std::size_t> last = {cur.ids.size() - 1};
    auto logits = forward(tape, {&cur}, e, lm, lora, &last);
    const auto v = logits.values();
    // Pad, BOS and the placeholder are never emitted.
    int best = kEos;
    for (int i = 0; i < static_cast<int>(v.size()); ++i)
      if (i != kPad && i != kBos && i != kPlaceholder && v[i] > v[best]) best = i;
    if (best == kEos) break;
    out.push_back(best);
    if (cur.ids.size() == lm.config.max_len) break;
    cur.ids.push_back(best);
    cur.loss_mask.push_back(0);
  }
  return out;
}

/// W' = W + scaling * B A for every adapted linear. Throws std::logic_error
/// when `base` already has an adapter merged into it.
template <typename T>
MicroLMParams<T> merge_lora(const MicroLMParams<T>& base, const LoraAdapter<T>& lora) {
  if (base.lora_merged) throw std::logic_error("merge_lora: adapter already merged into these weights");
  if (lora.layers.size() != base.blocks.size()) throw std::invalid_argument("merge_lora: depth mismatch");
  auto out = base.clone();
  const T scaling = static_cast<T>(lora.config.scaling());
  for (std::size_t l = 0; l < out.blocks.size(); ++l)
    for (int s = 0; s < kSiteCount; ++s) {
      auto& w = out.blocks[l].w[s];
      const auto& pair = lora.layers[l][s];
      const std::size_t o = w.dim(0), in = w.dim(1), r = pair.a.dim(0);
      if (pair.b.dim(0) != o || pair.a.dim(1) != in || pair.b.dim(1) != r)
        throw std::invalid_argument("merge_lora: adapter shape mismatch");
      std::vector<T> ba(o * in, T(0));
      numcore::gemm::nn(pair.b.values().data(), pair.a.values().data(), ba.data(), o, in, r, false);
      auto dst = w.mutable_values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scaling * ba[i];
    }
  out.lora_merged = true;
  return out;
}

}  // namespace bella::lm
