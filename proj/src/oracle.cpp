// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include "bella/scenesim/oracle.hpp"

#include <stdexcept>

#include "bella/text.hpp"

namespace bella::scenesim {
namespace {

constexpr std::array<std::string_view, 6> kCategoryNames = {"exist",  "count",      "object",
                                                            "status", "comparison", "behavior"};

// Slot markers inside patterns.
constexpr std::string_view kSlotClasses = "{classes}";
constexpr std::string_view kSlotClass = "{class}";
constexpr std::string_view kSlotStatus = "{status}";
constexpr std::string_view kSlotQuadrant = "{quadrant}";

struct Pattern {
  Template tmpl;
  std::string_view text;
};

constexpr std::array<Pattern, 11> kPatterns = {{
    {Template::kExistClassQuadrant, "are there any {classes} to the {quadrant} ?"},
    {Template::kExistStatusClass, "are there any {status} {classes} ?"},
    {Template::kCountClassQuadrant, "how many {classes} are to the {quadrant} ?"},
    {Template::kCountStatusClass, "how many {status} {classes} are there ?"},
    {Template::kObjectQuadrant, "what is the object to the {quadrant} ?"},
    {Template::kObjectStatusQuadrant, "what is the {status} object to the {quadrant} ?"},
    {Template::kStatusClassQuadrant, "what is the status of the {class} to the {quadrant} ?"},
    {Template::kCompareCounts, "are there more {classes} to the {quadrant} than {classes} to the {quadrant} ?"},
    {Template::kCompareStatus,
     "does the {class} to the {quadrant} have the same status as the {class} to the {quadrant} ?"},
    {Template::kBehaviorDoing, "what is the ego vehicle doing ?"},
    {Template::kBehaviorMoving, "how is the ego vehicle moving ?"},
}};

const Pattern& pattern_of(Template t) {
  for (const auto& p : kPatterns)
    if (p.tmpl == t) return p;
  throw std::logic_error("unknown template");
}

std::vector<std::string> split_pattern(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find(' ', pos);
    if (end == std::string_view::npos) end = text.size();
    out.emplace_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

// Slots fill predicates in order: first predicate until it has a quadrant or
// the pattern moves on to the second clause.
bool is_second_clause(const std::vector<std::string>& tokens, std::size_t index) {
  for (std::size_t i = 0; i < index; ++i)
    if (tokens[i] == "than" || tokens[i] == "as") return true;
  return false;
}

std::string yes_no(bool v) { return v ? "yes" : "no"; }

}  // namespace

std::string_view category_name(Category c) { return kCategoryNames[static_cast<int>(c)]; }

std::optional<Category> parse_category(std::string_view name) {
  for (std::size_t i = 0; i < kCategoryNames.size(); ++i)
    if (kCategoryNames[i] == name) return static_cast<Category>(i);
  return std::nullopt;
}

Category category_of(Template t) {
  switch (t) {
    case Template::kExistClassQuadrant:
    case Template::kExistStatusClass:
      return Category::kExist;
    case Template::kCountClassQuadrant:
    case Template::kCountStatusClass:
      return Category::kCount;
    case Template::kObjectQuadrant:
    case Template::kObjectStatusQuadrant:
      return Category::kObject;
    case Template::kStatusClassQuadrant:
      return Category::kStatus;
    case Template::kCompareCounts:
    case Template::kCompareStatus:
      return Category::kComparison;
    case Template::kBehaviorDoing:
    case Template::kBehaviorMoving:
      return Category::kBehavior;
  }
  throw std::logic_error("unknown template");
}

std::vector<Template> templates_of(Category c) {
  std::vector<Template> out;
  for (const auto& p : kPatterns)
    if (category_of(p.tmpl) == c) out.push_back(p.tmpl);
  return out;
}

bool Predicate::matches(const Actor& a) const {
  if (cls && a.cls != *cls) return false;
  if (status && a.status != *status) return false;
  if (quadrant && quadrant_of(a) != *quadrant) return false;
  return true;
}

std::string render_question(const Question& q) {
  const auto tokens = split_pattern(pattern_of(q.tmpl).text);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& tok = tokens[i];
    const Predicate& p = is_second_clause(tokens, i) ? q.second : q.first;
    auto need = [&](bool present) {
      if (!present) throw std::invalid_argument("render_question: missing slot value for " + tok);
    };
    if (tok == kSlotClasses) {
      need(p.cls.has_value());
      out.emplace_back(class_plural(*p.cls));
    } else if (tok == kSlotClass) {
      need(p.cls.has_value());
      out.emplace_back(class_name(*p.cls));
    } else if (tok == kSlotStatus) {
      need(p.status.has_value());
      out.emplace_back(status_name(*p.status));
    } else if (tok == kSlotQuadrant) {
      need(p.quadrant.has_value());
      out.emplace_back(quadrant_name(*p.quadrant));
    } else {
      out.push_back(tok);
    }
  }
  return text::join(out);
}

std::optional<Question> parse_question(std::string_view raw) {
  const auto words = text::words(raw);
  for (const auto& pat : kPatterns) {
    const auto tokens = split_pattern(pat.text);
    if (tokens.size() != words.size()) continue;
    Question q;
    q.tmpl = pat.tmpl;
    bool ok = true;
    for (std::size_t i = 0; i < tokens.size() && ok; ++i) {
      const auto& tok = tokens[i];
      Predicate& p = is_second_clause(tokens, i) ? q.second : q.first;
      if (tok == kSlotClasses) {
        p.cls = parse_class_plural(words[i]);
        ok = p.cls.has_value();
      } else if (tok == kSlotClass) {
        p.cls = parse_class(words[i]);
        ok = p.cls.has_value();
      } else if (tok == kSlotStatus) {
        p.status = parse_status(words[i]);
        ok = p.status.has_value();
      } else if (tok == kSlotQuadrant) {
        p.quadrant = parse_quadrant(words[i]);
        ok = p.quadrant.has_value();
      } else {
        ok = tok == words[i];
      }
    }
    if (ok) return q;
  }
  return std::nullopt;
}

std::vector<const Actor*> matching(const Scene& scene, const Predicate& p) {
  std::vector<const Actor*> out;
  for (const auto& a : scene.actors)
    if (p.matches(a)) out.push_back(&a);
  return out;
}

std::optional<std::string> oracle_answer(const Scene& scene, const Question& q) {
  switch (q.tmpl) {
    case Template::kExistClassQuadrant:
    case Template::kExistStatusClass:
      return yes_no(!matching(scene, q.first).empty());
    case Template::kCountClassQuadrant:
    case Template::kCountStatusClass:
      return std::to_string(matching(scene, q.first).size());
    case Template::kObjectQuadrant:
    case Template::kObjectStatusQuadrant: {
      const auto m = matching(scene, q.first);
      if (m.size() != 1) return std::nullopt;
      return std::string(class_name(m[0]->cls));
    }
    case Template::kStatusClassQuadrant: {
      const auto m = matching(scene, q.first);
      if (m.size() != 1) return std::nullopt;
      return std::string(status_name(m[0]->status));
    }
    case Template::kCompareCounts:
      return yes_no(matching(scene, q.first).size() > matching(scene, q.second).size());
    case Template::kCompareStatus: {
      const auto a = matching(scene, q.first);
      const auto b = matching(scene, q.second);
      if (a.size() != 1 || b.size() != 1 || a[0] == b[0]) return std::nullopt;
      return yes_no(a[0]->status == b[0]->status);
    }
    case Template::kBehaviorDoing:
    case Template::kBehaviorMoving:
      return ego_behavior_sentence(scene.ego_speed);
  }
  return std::nullopt;
}

std::string oracle_answer(const Scene& scene, const QAItem& item) {
  const auto q = parse_question(item.question);
  if (!q) throw std::invalid_argument("oracle: not a template question: '" + item.question + "'");
  auto answer = oracle_answer(scene, *q);
  if (!answer) throw std::invalid_argument("oracle: question has no unique answer here: '" + item.question + "'");
  return *answer;
}

}  // namespace bella::scenesim
