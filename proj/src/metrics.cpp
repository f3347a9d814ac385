// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include "bella/evalmetrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "bella/text.hpp"

namespace bella::evalmetrics {

namespace {

std::map<Tokens, int> ngram_counts(const Tokens& t, int n) {
  std::map<Tokens, int> out;
  if (static_cast<int>(t.size()) < n) return out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + i, t.begin() + i + n)];
  return out;
}

std::string fmt(double v, int prec = 1) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

}  // namespace

Tokens tokenize(const std::string& s) { return text::words(text::normalize_answer(s)); }

AccuracyResult accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& golds,
                        const std::vector<Category>& categories) {
  if (predictions.size() != golds.size() || golds.size() != categories.size())
    throw std::invalid_argument("accuracy: " + std::to_string(predictions.size()) + " predictions, " +
                                std::to_string(golds.size()) + " golds, " + std::to_string(categories.size()) +
                                " categories");
  AccuracyResult r;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const bool ok = text::normalize_answer(predictions[i]) == text::normalize_answer(golds[i]);
    auto& c = r.per_category[categories[i]];
    ++c.total;
    ++r.overall.total;
    if (ok) ++c.correct, ++r.overall.correct;
  }
  return r;
}

std::pair<int, int> clipped_ngram_counts(const Tokens& candidate, const std::vector<Tokens>& references, int n) {
  const auto cand = ngram_counts(candidate, n);
  std::map<Tokens, int> max_ref;
  for (const auto& ref : references)
    for (const auto& [g, c] : ngram_counts(ref, n)) max_ref[g] = std::max(max_ref[g], c);
  int clipped = 0, total = 0;
  for (const auto& [g, c] : cand) {
    total += c;
    auto it = max_ref.find(g);
    if (it != max_ref.end()) clipped += std::min(c, it->second);
  }
  return {clipped, total};
}

double bleu4(const Tokens& candidate, const std::vector<Tokens>& references) {
  if (candidate.empty() || references.empty()) return 0.0;
  const double c = static_cast<double>(candidate.size());
  double log_sum = 0;
  for (int n = 1; n <= 4; ++n) {
    const auto [clipped, total] = clipped_ngram_counts(candidate, references, n);
    const double p = clipped > 0 ? double(clipped) / total : 1.0 / (2.0 * c);
    log_sum += std::log(p);
  }
  double r = static_cast<double>(references.front().size());
  for (const auto& ref : references) {
    const double len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / 4.0);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0) return 0.0;
  const double p = lcs / candidate.size(), r = lcs / reference.size();
  return 2 * p * r / (p + r);
}

double rouge_l_recall(const Tokens& candidate, const Tokens& reference) {
  if (reference.empty()) return 0.0;
  return static_cast<double>(lcs_length(candidate, reference)) / reference.size();
}

std::string stem(const std::string& w) {
  for (const char* suffix : {"ing", "ed", "s"}) {
    const std::string s(suffix);
    if (w.size() >= s.size() + 2 && w.compare(w.size() - s.size(), s.size(), s) == 0)
      return w.substr(0, w.size() - s.size());
  }
  return w;
}

MeteorAlignment meteor_align(const Tokens& cand, const Tokens& ref) {
  std::vector<int> link(cand.size(), -1);
  std::vector<char> used(ref.size(), 0);
  auto pass = [&](auto&& same) {
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (link[i] >= 0) continue;
      for (std::size_t j = 0; j < ref.size(); ++j)
        if (!used[j] && same(cand[i], ref[j])) {
          link[i] = static_cast<int>(j);
          used[j] = 1;
          break;
        }
    }
  };
  pass([](const std::string& a, const std::string& b) { return a == b; });
  pass([](const std::string& a, const std::string& b) { return stem(a) == stem(b); });
  MeteorAlignment al;
  int prev = -2;
  bool prev_matched = false;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (link[i] < 0) {
      prev_matched = false;
      continue;
    }
    ++al.matches;
    if (!prev_matched || link[i] != prev + 1) ++al.chunks;
    prev = link[i];
    prev_matched = true;
  }
  return al;
}

double meteor_lite(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const auto al = meteor_align(candidate, reference);
  if (al.matches == 0) return 0.0;
  const double p = double(al.matches) / candidate.size(), r = double(al.matches) / reference.size();
  const double fmean = 10 * p * r / (r + 9 * p);
  const double penalty = 0.5 * std::pow(double(al.chunks) / al.matches, 3);
  return fmean * (1 - penalty);
}

CiderScorer::CiderScorer(const std::vector<std::vector<Tokens>>& corpus) : n_docs_(corpus.size()) {
  if (corpus.size() < 2) throw std::invalid_argument("cider: corpus needs at least 2 items");
  for (const auto& refs : corpus) {
    std::set<Tokens> seen;
    for (const auto& ref : refs)
      for (int n = 1; n <= 4; ++n)
        for (const auto& [g, c] : ngram_counts(ref, n)) seen.insert(g);
    for (const auto& g : seen) ++df_[g];
  }
}

double CiderScorer::idf(const Tokens& g) const {
  auto it = df_.find(g);
  const double df = it == df_.end() ? 0.0 : it->second;
  return std::max(0.0, std::log(double(n_docs_) / std::max(1.0, df)));
}

double CiderScorer::score(const Tokens& candidate, const std::vector<Tokens>& references) const {
  if (references.empty()) return 0.0;
  auto vec = [&](const Tokens& t, int n) {
    std::map<Tokens, double> v;
    const auto counts = ngram_counts(t, n);
    double total = 0;
    for (const auto& [g, c] : counts) total += c;
    for (const auto& [g, c] : counts) v[g] = (c / total) * idf(g);
    return v;
  };
  double sum = 0;
  for (int n = 1; n <= 4; ++n) {
    const auto vc = vec(candidate, n);
    double nc = 0;
    for (const auto& [g, x] : vc) nc += x * x;
    double per_n = 0;
    for (const auto& ref : references) {
      const auto vr = vec(ref, n);
      double nr = 0, dot = 0;
      for (const auto& [g, x] : vr) {
        nr += x * x;
        auto it = vc.find(g);
        if (it != vc.end()) dot += x * it->second;
      }
      if (nc > 0 && nr > 0) per_n += dot / (std::sqrt(nc) * std::sqrt(nr));
    }
    sum += per_n / references.size();
  }
  return std::clamp(10.0 * sum / 4.0, 0.0, 10.0);
}

double cider(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references) {
  if (candidates.size() != references.size()) throw std::invalid_argument("cider: candidate/reference count mismatch");
  const CiderScorer scorer(references);
  double total = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) total += scorer.score(candidates[i], references[i]);
  return total / candidates.size();
}

EvalReport evaluate(const std::vector<ScoredItem>& items) {
  EvalReport rep;
  std::vector<std::vector<Tokens>> corpus;
  for (const auto& it : items) corpus.push_back({tokenize(it.gold)});
  std::optional<CiderScorer> scorer;
  if (corpus.size() >= 2) scorer.emplace(corpus);

  auto accumulate = [](MetricRow& row, double acc, double b, double m, double r, double c) {
    ++row.count;
    row.accuracy += acc, row.bleu4 += b, row.meteor += m, row.rouge_l += r, row.cider += c;
  };
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto cand = tokenize(items[i].prediction);
    const auto& gold = corpus[i][0];
    const double acc = text::normalize_answer(items[i].prediction) == text::normalize_answer(items[i].gold) ? 100 : 0;
    const double b = bleu4(cand, {gold}), m = meteor_lite(cand, gold), r = rouge_l(cand, gold);
    const double c = scorer ? scorer->score(cand, {gold}) : 0.0;
    accumulate(rep.per_category[items[i].category], acc, b, m, r, c);
    accumulate(rep.overall, acc, b, m, r, c);
  }
  auto finish = [](MetricRow& row) {
    if (!row.count) return;
    row.accuracy /= row.count, row.bleu4 /= row.count, row.meteor /= row.count, row.rouge_l /= row.count,
        row.cider /= row.count;
  };
  for (auto& [c, row] : rep.per_category) finish(row);
  finish(rep.overall);
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  auto row_json = [](const MetricRow& r) {
    return nlohmann::ordered_json{{"count", r.count},   {"accuracy", r.accuracy}, {"bleu4", r.bleu4},
                                  {"meteor", r.meteor}, {"rouge_l", r.rouge_l},   {"cider", r.cider}};
  };
  auto& cats = j["per_category"] = nlohmann::ordered_json::object();
  for (const auto& [c, row] : per_category) cats[std::string(scenesim::category_name(c))] = row_json(row);
  j["overall"] = row_json(overall);
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << "Accuracy (%)\n";
  std::string header, values;
  for (const auto& [c, row] : per_category) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%12s", std::string(scenesim::category_name(c)).c_str());
    header += buf;
    std::snprintf(buf, sizeof buf, "%12s", fmt(row.accuracy).c_str());
    values += buf;
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%12s", "overall");
  header += buf;
  std::snprintf(buf, sizeof buf, "%12s", fmt(overall.accuracy).c_str());
  values += buf;
  os << header << '\n' << values << "\n\n";
  std::snprintf(buf, sizeof buf, "%-12s%8s%8s%8s%8s%8s\n", "category", "n", "BLEU-4", "METEOR", "ROUGE-L", "CIDEr");
  os << buf;
  auto line = [&](const std::string& name, const MetricRow& r) {
    std::snprintf(buf, sizeof buf, "%-12s%8d%8s%8s%8s%8s\n", name.c_str(), r.count, fmt(r.bleu4, 3).c_str(),
                  fmt(r.meteor, 3).c_str(), fmt(r.rouge_l, 3).c_str(), fmt(r.cider, 3).c_str());
    os << buf;
  };
  for (const auto& [c, row] : per_category) line(std::string(scenesim::category_name(c)), row);
  line("overall", overall);
  return os.str();
}

}  // namespace bella::evalmetrics
