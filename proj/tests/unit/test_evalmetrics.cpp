// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "bella/evalmetrics/metrics.hpp"
#include "bella/langdata/langdata.hpp"
#include "bella/numcore/ops.hpp"
#include "bella/numcore/rng.hpp"

namespace bella::evalmetrics {
namespace {

constexpr double kTol = 1e-9;

Tokens t(const std::string& s) { return tokenize(s); }

TEST(Accuracy, PerfectPredictions) {
  const std::vector<std::string> golds = {"yes", "2", "car"};
  const auto r = accuracy(golds, golds, {Category::kExist, Category::kCount, Category::kObject});
  EXPECT_EQ(r.overall.percent(), 100.0);
  for (const auto& [c, a] : r.per_category) EXPECT_EQ(a.percent(), 100.0);
}

TEST(Accuracy, HalfRight) {
  const auto r = accuracy({"yes", "no"}, {"yes", "yes"}, {Category::kExist, Category::kExist});
  EXPECT_EQ(r.per_category.at(Category::kExist).percent(), 50.0);
  EXPECT_EQ(r.overall.percent(), 50.0);
}

TEST(Accuracy, NormalizesBeforeMatching) {
  const auto r = accuracy({"The Ego Vehicle is stopped."}, {"the ego vehicle is stopped"}, {Category::kBehavior});
  EXPECT_EQ(r.overall.correct, 1);
}

TEST(Accuracy, LengthMismatchIsRejected) {
  EXPECT_THROW(accuracy({"yes"}, {"yes", "no"}, {Category::kExist}), std::invalid_argument);
}

TEST(Bleu, IdentityIsOne) { EXPECT_NEAR(bleu4(t("there is a car to the front"), {t("there is a car to the front")}), 1.0, kTol); }

TEST(Bleu, ClippedUnigramPrecisionIsOneQuarter) {
  const auto [matches, total] = clipped_ngram_counts(t("the the the the"), {t("the cat")}, 1);
  EXPECT_EQ(matches, 1);
  EXPECT_EQ(total, 4);
  EXPECT_NEAR(static_cast<double>(matches) / total, 0.25, kTol);
}

TEST(Bleu, BrevityPenaltyOnPerfectShortCandidate) {
  EXPECT_NEAR(bleu4(t("a b c d"), {t("a b c d e f")}), std::exp(1.0 - 6.0 / 4.0), kTol);
}

TEST(Bleu, EmptyCandidateScoresZero) { EXPECT_EQ(bleu4({}, {t("a b")}), 0.0); }

TEST(Bleu, ZeroCountsUseTheSmoothingFloor) {
  // c = 4, unigram 2/4, higher orders zero -> each floored to 1/8.
  const double expected = std::pow(0.5 * 0.125 * 0.125 * 0.125, 0.25);
  EXPECT_NEAR(bleu4(t("a x b y"), {t("a q b r")}), expected, kTol);
}

TEST(RougeL, IdentityIsOne) { EXPECT_NEAR(rouge_l(t("a b c"), t("a b c")), 1.0, kTol); }

TEST(RougeL, TwoThirdsCase) {
  EXPECT_EQ(lcs_length(t("the cat sat"), t("the cat sat on the mat")), 3u);
  EXPECT_NEAR(rouge_l(t("the cat sat"), t("the cat sat on the mat")), 2.0 / 3.0, kTol);
}

TEST(RougeL, DisjointIsZero) { EXPECT_EQ(rouge_l(t("a b"), t("c d")), 0.0); }

TEST(RougeL, RecallNeverDropsWhenExtendingACorrectPrefix) {
  const auto ref = t("there is a bus parked to the rear");
  Tokens cand;
  double prev = 0;
  for (const auto& w : ref) {
    cand.push_back(w);
    const double r = rouge_l_recall(cand, ref);
    EXPECT_GE(r, prev);
    prev = r;
  }
  EXPECT_NEAR(prev, 1.0, kTol);
}

TEST(Meteor, IdentityOfFourWords) {
  const auto a = meteor_align(t("a b c d"), t("a b c d"));
  EXPECT_EQ(a.matches, 4);
  EXPECT_EQ(a.chunks, 1);
  EXPECT_NEAR(meteor_lite(t("a b c d"), t("a b c d")), 1.0 - 0.5 / 64.0, kTol);
}

TEST(Meteor, ZeroMatchesIsZero) { EXPECT_EQ(meteor_lite(t("a b"), t("c d")), 0.0); }

TEST(Meteor, StemRuleMatchesPlural) {
  EXPECT_EQ(stem("cars"), "car");
  EXPECT_EQ(stem("parked"), "park");
  EXPECT_EQ(stem("walking"), "walk");
  EXPECT_EQ(stem("is"), "is");
  EXPECT_EQ(meteor_align(t("cars"), t("car")).matches, 1);
}

TEST(Meteor, RolesAreNotSymmetric) {
  EXPECT_NE(meteor_lite(t("a b"), t("a b c d e")), meteor_lite(t("a b c d e"), t("a b")));
}

TEST(Cider, IdentityOnTwoItemCorpusIsTen) {
  const std::vector<std::vector<Tokens>> corpus = {{t("a b c d e")}, {t("f g h i j")}};
  const CiderScorer s(corpus);
  EXPECT_NEAR(s.score(t("a b c d e"), corpus[0]), 10.0, kTol);
  EXPECT_NEAR(cider({t("a b c d e"), t("f g h i j")}, corpus), 10.0, kTol);
}

TEST(Cider, NoSharedNgramIsZero) {
  const std::vector<std::vector<Tokens>> corpus = {{t("a b c d e")}, {t("f g h i j")}};
  EXPECT_EQ(CiderScorer(corpus).score(t("f g h"), corpus[0]), 0.0);
}

TEST(Cider, SaturatedNgramContributesNothing) {
  const std::vector<std::vector<Tokens>> corpus = {{t("the a")}, {t("the b")}, {t("the c")}};
  const CiderScorer s(corpus);
  EXPECT_EQ(s.idf({"the"}), 0.0);
  EXPECT_GT(s.idf({"a"}), 0.0);
  EXPECT_EQ(s.score(t("the"), corpus[0]), 0.0);
}

TEST(Cider, RejectsTinyCorpus) { EXPECT_THROW(CiderScorer({{t("a")}}), std::invalid_argument); }

TEST(Cider, CorpusOrderDoesNotMatter) {
  std::vector<std::vector<Tokens>> corpus = {{t("a b c")}, {t("a d e")}, {t("f g a")}};
  const double before = CiderScorer(corpus).score(t("a b"), {t("a b c")});
  std::reverse(corpus.begin(), corpus.end());
  EXPECT_NEAR(CiderScorer(corpus).score(t("a b"), {t("a b c")}), before, kTol);
}

TEST(Ranges, FuzzedPairsStayInBounds) {
  const std::vector<std::string> words = {"a", "b", "car", "cars", "parked", "park", "the", "to", "front", "fore"};
  SplitMix64 rng(42);
  auto sentence = [&] {
    Tokens s(rng.below(8));
    for (auto& w : s) w = words[rng.below(words.size())];
    return s;
  };
  std::vector<Tokens> cands, refs;
  for (int i = 0; i < 1000; ++i) {
    cands.push_back(sentence());
    refs.push_back(sentence());
  }
  std::vector<std::vector<Tokens>> ref_sets;
  for (const auto& r : refs) ref_sets.push_back({r});
  const CiderScorer scorer(ref_sets);
  for (int i = 0; i < 1000; ++i) {
    for (double v : {bleu4(cands[i], {refs[i]}), rouge_l(cands[i], refs[i]), meteor_lite(cands[i], refs[i])}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0 + kTol);
    }
    const double c = scorer.score(cands[i], ref_sets[i]);
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 10.0 + kTol);
  }
}

TEST(Report, OverallIsSampleWeighted) {
  const std::vector<ScoredItem> items = {{Category::kExist, "yes", "yes"},
                                         {Category::kExist, "no", "yes"},
                                         {Category::kCount, "2", "2"},
                                         {Category::kBehavior, "the ego vehicle is stopped", "the ego vehicle is stopped"}};
  const auto r = evaluate(items);
  EXPECT_EQ(r.per_category.at(Category::kExist).accuracy, 50.0);
  EXPECT_EQ(r.per_category.at(Category::kCount).accuracy, 100.0);
  EXPECT_EQ(r.overall.accuracy, 75.0);
  EXPECT_EQ(r.overall.count, 4);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_TRUE(j.is_object());
  EXPECT_NE(r.to_table().find("Accuracy"), std::string::npos);
}

TEST(Loss, UniformLogitsGiveLnV) {
  const std::size_t v = langdata::Vocab::standard().size();
  numcore::Tape<double> tape(false);
  const auto logits = numcore::Tensor<double>::zeros({3, v});
  const auto loss = numcore::cross_entropy(tape, logits, {4, 9, 17});
  EXPECT_NEAR(loss.item(), std::log(static_cast<double>(v)), kTol);
}

}  // namespace
}  // namespace bella::evalmetrics
