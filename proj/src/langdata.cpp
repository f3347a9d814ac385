// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include "bella/langdata/langdata.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "bella/numcore/rng.hpp"
#include "bella/text.hpp"

namespace bella::langdata {

using scenesim::Actor;
using scenesim::ActorClass;
using scenesim::Category;
using scenesim::Predicate;
using scenesim::QAItem;
using scenesim::Quadrant;
using scenesim::Question;
using scenesim::Scene;
using scenesim::Status;
using scenesim::Template;

namespace {

const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", std::string(kBevSurface)};

std::vector<std::string> split(std::string_view s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    auto end = s.find(' ', pos);
    if (end == std::string_view::npos) end = s.size();
    if (end > pos) out.emplace_back(s.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

const std::string& pick(SplitMix64& rng, const std::vector<std::string>& options) {
  return options[rng.below(options.size())];
}

std::vector<Status> statuses_for(ActorClass c) {
  std::vector<Status> out;
  for (auto s : scenesim::kAllStatuses)
    if (scenesim::status_compatible(c, s)) out.push_back(s);
  return out;
}

Predicate random_predicate(SplitMix64& rng, bool with_status, bool with_quadrant) {
  Predicate p;
  p.cls = scenesim::kAllClasses[rng.below(scenesim::kAllClasses.size())];
  if (with_status) {
    const auto st = statuses_for(*p.cls);
    p.status = st[rng.below(st.size())];
  }
  if (with_quadrant) p.quadrant = scenesim::kAllQuadrants[rng.below(4)];
  return p;
}

Predicate grounded_predicate(const Actor& a, bool with_class, bool with_status, bool with_quadrant) {
  Predicate p;
  if (with_class) p.cls = a.cls;
  if (with_status) p.status = a.status;
  if (with_quadrant) p.quadrant = scenesim::quadrant_of(a);
  return p;
}

// One attempt at a question for `t`; slots are grounded in a real actor with
// probability 1/2 (always for uniqueness-dependent templates).
Question draw_question(SplitMix64& rng, const Scene& scene, Template t) {
  Question q;
  q.tmpl = t;
  const bool have = !scene.actors.empty();
  auto actor = [&]() -> const Actor& { return scene.actors[rng.below(scene.actors.size())]; };
  auto maybe_grounded = [&](bool c, bool s, bool quad) {
    if (have && rng.bernoulli(0.5)) return grounded_predicate(actor(), c, s, quad);
    Predicate p = random_predicate(rng, s, quad);
    if (!c) p.cls.reset();
    return p;
  };
  switch (t) {
    case Template::kExistClassQuadrant:
    case Template::kCountClassQuadrant:
      q.first = maybe_grounded(true, false, true);
      break;
    case Template::kExistStatusClass:
    case Template::kCountStatusClass:
      q.first = maybe_grounded(true, true, false);
      break;
    case Template::kObjectQuadrant:
      if (have) q.first = grounded_predicate(actor(), false, false, true);
      else q.first.quadrant = scenesim::kAllQuadrants[rng.below(4)];
      break;
    case Template::kObjectStatusQuadrant:
      if (have) {
        q.first = grounded_predicate(actor(), false, true, true);
      } else {
        q.first.status = scenesim::kAllStatuses[rng.below(scenesim::kAllStatuses.size())];
        q.first.quadrant = scenesim::kAllQuadrants[rng.below(4)];
      }
      break;
    case Template::kStatusClassQuadrant:
      q.first = have ? grounded_predicate(actor(), true, false, true) : random_predicate(rng, false, true);
      break;
    case Template::kCompareCounts:
      q.first = maybe_grounded(true, false, true);
      q.second = maybe_grounded(true, false, true);
      break;
    case Template::kCompareStatus:
      q.first = have ? grounded_predicate(actor(), true, false, true) : random_predicate(rng, false, true);
      q.second = have ? grounded_predicate(actor(), true, false, true) : random_predicate(rng, false, true);
      break;
    case Template::kBehaviorDoing:
    case Template::kBehaviorMoving:
      break;
  }
  return q;
}

bool degenerate(const Scene& scene, const Question& q) {
  if (q.tmpl == Template::kCompareCounts) {
    if (q.first == q.second) return true;
    return scenesim::matching(scene, q.first).empty() && scenesim::matching(scene, q.second).empty();
  }
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

const SynonymTable& synonyms() {
  static const SynonymTable table = {
      {"car", {"car", "vehicle"}},
      {"truck", {"truck", "lorry"}},
      {"bus", {"bus", "coach"}},
      {"bicycle", {"bicycle", "bike"}},
      {"motorcycle", {"motorcycle", "motorbike"}},
      {"pedestrian", {"pedestrian", "person"}},
      {"moving", {"moving", "driving"}},
      {"stopped", {"stopped", "halted"}},
      {"parked", {"parked", "stationary"}},
      {"walking", {"walking", "strolling"}},
      {"standing", {"standing", "waiting"}},
      {"front", {"front", "fore"}},
      {"back", {"back", "rear"}},
      {"left", {"left", "left-hand"}},
      {"right", {"right", "right-hand"}},
  };
  return table;
}

Vocab Vocab::standard() {
  std::vector<std::string> tokens = kSpecials;
  auto add = [&](std::string_view phrase) {
    for (auto& w : split(phrase))
      if (std::find(tokens.begin(), tokens.end(), w) == tokens.end()) tokens.push_back(w);
  };
  add(". ?");
  add("the ego vehicle is stopped moving slowly fast");
  add("there is a to the are no objects nearby");
  for (auto c : scenesim::kAllClasses) add(std::string(scenesim::class_name(c)));
  for (auto s : scenesim::kAllStatuses) add(std::string(scenesim::status_name(s)));
  for (auto q : scenesim::kAllQuadrants) add(std::string(scenesim::quadrant_name(q)));
  for (const auto& [canon, syns] : synonyms())
    for (const auto& s : syns) add(s);
  for (auto c : scenesim::kAllClasses) add(std::string(scenesim::class_plural(c)));
  for (auto cat : scenesim::kAllCategories)
    for (auto t : scenesim::templates_of(cat)) {
      Question q;
      q.tmpl = t;
      q.first = {ActorClass::kCar, Status::kMoving, Quadrant::kFront};
      q.second = q.first;
      add(scenesim::render_question(q));
    }
  add("yes no");
  for (int i = 0; i <= scenesim::kMaxActorsPerScene; ++i) add(std::to_string(i));
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kSpecials.size() || !std::equal(kSpecials.begin(), kSpecials.end(), tokens.begin()))
    throw std::invalid_argument("vocab: must start with <pad> <bos> <eos> <bev>");
  if (tokens.size() > 256) throw std::invalid_argument("vocab: more than 256 tokens");
  Vocab v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i)
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("vocab: duplicate token '" + v.tokens_[i] + "'");
  return v;
}

bool Vocab::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

int Vocab::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) throw OutOfVocabulary(std::string(word));
  return it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<int> Vocab::encode(std::string_view s) const {
  std::vector<int> ids;
  for (const auto& w : text::words(s)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> ws;
  ws.reserve(ids.size());
  for (int i : ids) ws.push_back(token(i));
  return text::join(ws);
}

std::uint64_t Vocab::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    for (char c : t) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Descriptions

std::vector<const Actor*> description_order(const Scene& scene) {
  std::vector<const Actor*> order;
  for (const auto& a : scene.actors) order.push_back(&a);
  std::sort(order.begin(), order.end(), [](const Actor* a, const Actor* b) {
    const auto qa = static_cast<int>(scenesim::quadrant_of(*a));
    const auto qb = static_cast<int>(scenesim::quadrant_of(*b));
    if (qa != qb) return qa < qb;
    const double da = std::hypot(a->x, a->y), db = std::hypot(b->x, b->y);
    if (da != db) return da < db;
    return a->id < b->id;
  });
  return order;
}

std::string describe(const Scene& scene, std::uint64_t seed) {
  SplitMix64 rng(seed);
  const auto& syn = synonyms();
  std::string out = "the ego vehicle is " + scenesim::ego_motion_phrase(scene.ego_speed);
  if (scene.actors.empty()) return out + " . there are no objects nearby";
  for (const Actor* a : description_order(scene)) {
    const auto& cls = pick(rng, syn.at(std::string(scenesim::class_name(a->cls))));
    const auto& st = pick(rng, syn.at(std::string(scenesim::status_name(a->status))));
    const auto& quad = pick(rng, syn.at(std::string(scenesim::quadrant_name(scenesim::quadrant_of(*a)))));
    out += " . there is a " + cls + " " + st + " to the " + quad;
  }
  return out;
}

std::vector<Scene> subsample(const scenesim::Episode& episode) {
  if (episode.scenes.size() != static_cast<std::size_t>(scenesim::kEpisodeLength))
    throw std::invalid_argument("subsample: expected a 20-frame episode");
  std::vector<Scene> out;
  for (std::size_t t = 0; t < episode.scenes.size(); t += kSubsampleStride) out.push_back(episode.scenes[t]);
  return out;
}

// ---------------------------------------------------------------------------
// QA

std::vector<QAItem> make_qa(const Scene& scene, std::uint64_t seed, int per_category, int episode_id) {
  SplitMix64 rng(seed);
  std::vector<QAItem> items;
  std::set<std::string> seen;
  for (auto cat : scenesim::kAllCategories) {
    const auto templates = scenesim::templates_of(cat);
    int emitted = 0;
    for (int attempt = 0; attempt < 30 && emitted < per_category; ++attempt) {
      const auto q = draw_question(rng, scene, templates[rng.below(templates.size())]);
      const auto answer = scenesim::oracle_answer(scene, q);
      if (!answer || degenerate(scene, q)) continue;
      auto text = scenesim::render_question(q);
      if (!seen.insert(text).second) continue;
      items.push_back(QAItem{episode_id, scene.frame_index, cat, std::move(text), *answer});
      ++emitted;
    }
  }
  return items;
}

std::vector<std::string> all_template_expansions() {
  std::vector<std::string> out;
  const auto& syn = synonyms();
  for (double speed : {0.0, 3.0, 12.0}) {
    out.push_back(scenesim::ego_behavior_sentence(speed));
    out.push_back("the ego vehicle is " + scenesim::ego_motion_phrase(speed) + " . there are no objects nearby");
  }
  for (auto c : scenesim::kAllClasses)
    for (auto s : statuses_for(c))
      for (auto q : scenesim::kAllQuadrants)
        for (const auto& cw : syn.at(std::string(scenesim::class_name(c))))
          for (const auto& sw : syn.at(std::string(scenesim::status_name(s))))
            for (const auto& qw : syn.at(std::string(scenesim::quadrant_name(q))))
              out.push_back("there is a " + cw + " " + sw + " to the " + qw);
  std::vector<Predicate> preds;
  for (auto c : scenesim::kAllClasses)
    for (auto s : statuses_for(c))
      for (auto q : scenesim::kAllQuadrants) preds.push_back({c, s, q});
  for (auto cat : scenesim::kAllCategories)
    for (auto t : scenesim::templates_of(cat)) {
      std::set<std::string> texts;
      const bool two = t == Template::kCompareCounts || t == Template::kCompareStatus;
      for (const auto& a : preds) {
        if (!two) {
          texts.insert(scenesim::render_question({t, a, a}));
          continue;
        }
        for (const auto& b : preds) texts.insert(scenesim::render_question({t, a, b}));
      }
      out.insert(out.end(), texts.begin(), texts.end());
    }
  out.emplace_back("yes");
  out.emplace_back("no");
  for (auto c : scenesim::kAllClasses) out.emplace_back(scenesim::class_name(c));
  for (auto s : scenesim::kAllStatuses) out.emplace_back(scenesim::status_name(s));
  for (int i = 0; i <= scenesim::kMaxActorsPerScene; ++i) out.push_back(std::to_string(i));
  return out;
}

}  // namespace bella::langdata
