// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Top-1 exact-match accuracy by question category and the generative text
// metrics BLEU-4, ROUGE-L, METEOR-lite and CIDEr.
//
// Token sequences are the whitespace words of text::normalize_answer.
// Candidate and reference roles are not interchangeable in any metric.

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bella/scenesim/oracle.hpp"

namespace bella::evalmetrics {

using Tokens = std::vector<std::string>;
using scenesim::Category;

/// Words of the normalized answer form.
Tokens tokenize(const std::string& text);

// ---------------------------------------------------------------------------
// Accuracy

struct CategoryAccuracy {
  int correct = 0;
  int total = 0;
  double percent() const { return total ? 100.0 * correct / total : 0.0; }
};

struct AccuracyResult {
  std::map<Category, CategoryAccuracy> per_category;  // only categories present
  CategoryAccuracy overall;
};

/// Exact match after answer normalization. Throws std::invalid_argument on
/// length mismatch.
AccuracyResult accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& golds,
                        const std::vector<Category>& categories);

// ---------------------------------------------------------------------------
// BLEU-4

/// Clipped n-gram matches and the candidate's n-gram total.
std::pair<int, int> clipped_ngram_counts(const Tokens& candidate, const std::vector<Tokens>& references, int n);

/// Geometric mean of clipped precisions n = 1..4 times the brevity penalty
/// exp(1 - r/c) (r = closest reference length, shortest on ties). A zero
/// match count is floored to 1 / (2 * candidate_length). Empty candidate -> 0.
double bleu4(const Tokens& candidate, const std::vector<Tokens>& references);

// ---------------------------------------------------------------------------
// ROUGE-L

std::size_t lcs_length(const Tokens& a, const Tokens& b);

/// LCS F1: 2PR/(P+R) with P = LCS/|cand|, R = LCS/|ref|.
double rouge_l(const Tokens& candidate, const Tokens& reference);
double rouge_l_recall(const Tokens& candidate, const Tokens& reference);

// ---------------------------------------------------------------------------
// METEOR-lite

struct MeteorAlignment {
  int matches = 0;
  int chunks = 0;
};

/// Word stem used by the second matching pass: strips one of the suffixes
/// "ing", "ed", "s" when at least two characters remain.
std::string stem(const std::string& word);

/// Exact matches first, then stem matches among the remaining words; each
/// pass pairs every candidate word, left to right, with the first unused
/// reference word.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference);

/// Fmean = 10PR/(R+9P); penalty = 0.5 (chunks/matches)^3; score = Fmean (1 - penalty).
double meteor_lite(const Tokens& candidate, const Tokens& reference);

// ---------------------------------------------------------------------------
// CIDEr

/// Document frequencies are taken over a corpus of reference sets (one set per
/// item). idf(g) = log(N / max(1, df(g))), which is never negative, so
/// n-grams present in every item contribute nothing.
class CiderScorer {
 public:
  /// Throws std::invalid_argument for fewer than two corpus items.
  explicit CiderScorer(const std::vector<std::vector<Tokens>>& corpus);

  double idf(const Tokens& ngram) const;

  /// 10 * mean over n = 1..4 of the cosine between tf-idf vectors with
  /// length-normalized term frequency, averaged over references. A pair where
  /// either vector is all zero contributes 0.
  double score(const Tokens& candidate, const std::vector<Tokens>& references) const;

  std::size_t corpus_size() const { return n_docs_; }

 private:
  std::size_t n_docs_ = 0;
  std::map<Tokens, int> df_;
};

/// Mean per-item CIDEr, with the reference sets as the idf corpus.
double cider(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references);

// ---------------------------------------------------------------------------
// Report

struct ScoredItem {
  Category category = Category::kExist;
  std::string prediction;
  std::string gold;
};

struct MetricRow {
  int count = 0;
  double accuracy = 0;  // percent
  double bleu4 = 0;
  double meteor = 0;
  double rouge_l = 0;
  double cider = 0;
};

struct EvalReport {
  std::map<Category, MetricRow> per_category;
  MetricRow overall;  // accuracy is sample-weighted over all items

  std::string to_json() const;
  /// Accuracy table (category columns then Overall) and a generative-metric
  /// table per category.
  std::string to_table() const;
};

/// CIDEr idf is computed once over the gold answers of all items.
EvalReport evaluate(const std::vector<ScoredItem>& items);

}  // namespace bella::evalmetrics
