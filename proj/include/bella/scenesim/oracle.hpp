// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Question templates and the ground-truth answerer. Questions are plain text;
// the oracle parses them back into a structured form and evaluates the
// predicates directly against scene state.

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bella/scenesim/scene.hpp"

namespace bella::scenesim {

enum class Category { kExist, kCount, kObject, kStatus, kComparison, kBehavior };
inline constexpr std::array<Category, 6> kAllCategories = {Category::kExist,  Category::kCount,
                                                           Category::kObject, Category::kStatus,
                                                           Category::kComparison, Category::kBehavior};

std::string_view category_name(Category c);
std::optional<Category> parse_category(std::string_view name);

enum class Template {
  kExistClassQuadrant,    // are there any {classes} to the {quadrant} ?
  kExistStatusClass,      // are there any {status} {classes} ?
  kCountClassQuadrant,    // how many {classes} are to the {quadrant} ?
  kCountStatusClass,      // how many {status} {classes} are there ?
  kObjectQuadrant,        // what is the object to the {quadrant} ?
  kObjectStatusQuadrant,  // what is the {status} object to the {quadrant} ?
  kStatusClassQuadrant,   // what is the status of the {class} to the {quadrant} ?
  kCompareCounts,         // are there more {classes} to the {quadrant} than {classes} to the {quadrant} ?
  kCompareStatus,         // does the {class} to the {quadrant} have the same status as the {class} to the {quadrant} ?
  kBehaviorDoing,         // what is the ego vehicle doing ?
  kBehaviorMoving,        // how is the ego vehicle moving ?
};

Category category_of(Template t);
std::vector<Template> templates_of(Category c);

/// Conjunction of optional class / status / quadrant constraints.
struct Predicate {
  std::optional<ActorClass> cls;
  std::optional<Status> status;
  std::optional<Quadrant> quadrant;

  bool matches(const Actor& a) const;
  bool operator==(const Predicate&) const = default;
};

struct Question {
  Template tmpl = Template::kBehaviorDoing;
  Predicate first;
  Predicate second;

  bool operator==(const Question&) const = default;
};

struct QAItem {
  int episode_id = 0;
  int frame_index = 0;
  Category category = Category::kExist;
  std::string question;
  std::string gold_answer;

  bool operator==(const QAItem&) const = default;
};

/// Canonical surface text, space-separated with the question mark spaced.
std::string render_question(const Question& q);

/// Inverse of render_question over normalized text; nullopt for anything
/// that is not a template instance.
std::optional<Question> parse_question(std::string_view text);

std::vector<const Actor*> matching(const Scene& scene, const Predicate& p);

/// nullopt when the question has no well-defined answer for this scene
/// (object/status predicates that do not pick out exactly one actor).
std::optional<std::string> oracle_answer(const Scene& scene, const Question& q);

/// Parses the item's question text and answers it. Throws
/// std::invalid_argument for unparseable or unanswerable questions.
std::string oracle_answer(const Scene& scene, const QAItem& item);

}  // namespace bella::scenesim
