// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include "bella/scenesim/scene.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "bella/numcore/rng.hpp"

namespace bella::scenesim {
namespace {

constexpr std::array<std::string_view, 6> kClassNames = {"car", "truck", "bus", "bicycle", "motorcycle", "pedestrian"};
constexpr std::array<std::string_view, 6> kClassPlurals = {"cars",     "trucks",      "buses",
                                                           "bicycles", "motorcycles", "pedestrians"};
constexpr std::array<std::string_view, 5> kStatusNames = {"moving", "stopped", "parked", "walking", "standing"};
constexpr std::array<std::string_view, 4> kQuadrantNames = {"front", "back", "left", "right"};

// Relative class frequencies used by the generator.
const std::vector<double> kClassWeights = {0.30, 0.12, 0.10, 0.12, 0.11, 0.25};

// Ego keeps clear of this square; it is the ego's own footprint on the grid.
constexpr double kEgoClearance = 3.0;
// Parked vehicles sit at the roadside, stopped and moving ones in the road band.
constexpr double kRoadHalfWidth = 6.0;
constexpr double kCurbMin = 7.0;
constexpr double kSpawnLimit = 28.0;
constexpr double kTrajectoryLimit = 31.0;

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::string_view, N>& names, std::string_view word) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == word) return static_cast<E>(i);
  return std::nullopt;
}

bool trajectory_ok(double x, double y, double vx, double vy) {
  for (int t = 0; t < kEpisodeLength; ++t) {
    if (std::abs(x) > kTrajectoryLimit || std::abs(y) > kTrajectoryLimit) return false;
    if (std::abs(x) < kEgoClearance && std::abs(y) < kEgoClearance) return false;
    x = x + kTimeStep * vx;
    y = y + kTimeStep * vy;
  }
  return true;
}

double signed_range(SplitMix64& rng, double lo, double hi) {
  const double v = rng.uniform(lo, hi);
  return rng.bernoulli(0.5) ? v : -v;
}

Actor sample_actor(SplitMix64& rng, int id) {
  Actor a;
  a.id = id;
  a.cls = kAllClasses[rng.weighted(kClassWeights)];
  if (is_vehicle(a.cls)) {
    const std::size_t pick = rng.weighted({0.4, 0.3, 0.3});
    a.status = pick == 0 ? Status::kMoving : pick == 1 ? Status::kStopped : Status::kParked;
  } else {
    a.status = rng.bernoulli(0.5) ? Status::kWalking : Status::kStanding;
  }
  const double max_speed = a.cls == ActorClass::kBicycle ? 4.0 : a.cls == ActorClass::kPedestrian ? 1.8 : 5.5;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    a.vx = a.vy = 0;
    switch (a.status) {
      case Status::kParked:
        a.x = rng.uniform(-kSpawnLimit, kSpawnLimit);
        a.y = signed_range(rng, kCurbMin, kSpawnLimit);
        break;
      case Status::kStopped:
        a.x = signed_range(rng, kEgoClearance + 1.0, kSpawnLimit);
        a.y = rng.uniform(-kRoadHalfWidth, kRoadHalfWidth);
        break;
      case Status::kMoving: {
        a.x = rng.uniform(-kSpawnLimit, kSpawnLimit);
        a.y = rng.uniform(-kRoadHalfWidth, kRoadHalfWidth);
        const double speed = rng.uniform(kMovingSpeed, max_speed);
        const double dir = rng.bernoulli(0.5) ? 1.0 : -1.0;
        a.vx = dir * speed;
        a.vy = speed * rng.uniform(-0.1, 0.1);
        break;
      }
      case Status::kWalking: {
        a.x = rng.uniform(-kSpawnLimit, kSpawnLimit);
        a.y = rng.uniform(-kSpawnLimit, kSpawnLimit);
        const double speed = rng.uniform(0.6, max_speed);
        const double heading = rng.uniform(0.0, 6.283185307179586);
        a.vx = speed * std::cos(heading);
        a.vy = speed * std::sin(heading);
        // cos/sin rounding can pull the norm a hair under the threshold
        if (a.speed() < kMovingSpeed) continue;
        break;
      }
      case Status::kStanding:
        a.x = rng.uniform(-kSpawnLimit, kSpawnLimit);
        a.y = rng.uniform(-kSpawnLimit, kSpawnLimit);
        break;
    }
    if (trajectory_ok(a.x, a.y, a.vx, a.vy)) return a;
  }
  // Practically unreachable; a roadside parked car is always valid.
  a.cls = ActorClass::kCar;
  a.status = Status::kParked;
  a.x = 20.0;
  a.y = 20.0;
  a.vx = a.vy = 0;
  return a;
}

}  // namespace

std::string_view class_name(ActorClass c) { return kClassNames[static_cast<int>(c)]; }
std::string_view class_plural(ActorClass c) { return kClassPlurals[static_cast<int>(c)]; }
std::string_view status_name(Status s) { return kStatusNames[static_cast<int>(s)]; }
std::string_view quadrant_name(Quadrant q) { return kQuadrantNames[static_cast<int>(q)]; }
std::optional<ActorClass> parse_class(std::string_view w) { return lookup<ActorClass>(kClassNames, w); }
std::optional<ActorClass> parse_class_plural(std::string_view w) { return lookup<ActorClass>(kClassPlurals, w); }
std::optional<Status> parse_status(std::string_view w) { return lookup<Status>(kStatusNames, w); }
std::optional<Quadrant> parse_quadrant(std::string_view w) { return lookup<Quadrant>(kQuadrantNames, w); }

bool is_vehicle(ActorClass c) { return c != ActorClass::kPedestrian; }

bool status_compatible(ActorClass c, Status s) {
  if (is_vehicle(c)) return s == Status::kMoving || s == Status::kStopped || s == Status::kParked;
  return s == Status::kWalking || s == Status::kStanding;
}

bool is_stationary(Status s) { return s == Status::kStopped || s == Status::kParked || s == Status::kStanding; }

double Actor::speed() const { return std::sqrt(vx * vx + vy * vy); }

Quadrant quadrant_of(double x, double y) {
  if (x == 0.0 && y == 0.0) throw std::invalid_argument("quadrant_of: actor at the ego origin has no direction");
  if (x >= std::abs(y)) return Quadrant::kFront;
  if (-x >= std::abs(y)) return Quadrant::kBack;
  if (y > std::abs(x)) return Quadrant::kLeft;
  return Quadrant::kRight;
}

Quadrant quadrant_of(const Actor& actor) { return quadrant_of(actor.x, actor.y); }

void validate_actor(const Actor& a) {
  const std::string who = "actor " + std::to_string(a.id) + ": ";
  if (!std::isfinite(a.x) || !std::isfinite(a.y) || !std::isfinite(a.vx) || !std::isfinite(a.vy))
    throw std::invalid_argument(who + "non-finite state");
  if (std::abs(a.x) > kExtent || std::abs(a.y) > kExtent) throw std::invalid_argument(who + "outside the +-32 m extent");
  if (!status_compatible(a.cls, a.status))
    throw std::invalid_argument(who + std::string(status_name(a.status)) + " is not a status of a " +
                                std::string(class_name(a.cls)));
  const double speed = a.speed();
  if (is_stationary(a.status) && speed != 0.0)
    throw std::invalid_argument(who + std::string(status_name(a.status)) + " with non-zero speed");
  if (!is_stationary(a.status) && speed < kMovingSpeed)
    throw std::invalid_argument(who + std::string(status_name(a.status)) + " below 0.5 m/s");
}

void validate_scene(const Scene& s) {
  if (s.frame_index < 0) throw std::invalid_argument("scene: negative frame index");
  if (!(s.ego_speed >= 0.0) || !std::isfinite(s.ego_speed)) throw std::invalid_argument("scene: invalid ego speed");
  if (s.actors.size() > static_cast<std::size_t>(kMaxActorsPerScene))
    throw std::invalid_argument("scene: more than 12 actors");
  std::set<int> ids;
  for (const auto& a : s.actors) {
    validate_actor(a);
    if (!ids.insert(a.id).second) throw std::invalid_argument("scene: duplicate actor id " + std::to_string(a.id));
  }
}

void validate_episode(const Episode& e) {
  if (e.scenes.size() != static_cast<std::size_t>(kEpisodeLength))
    throw std::invalid_argument("episode: expected 20 frames, got " + std::to_string(e.scenes.size()));
  for (std::size_t t = 0; t < e.scenes.size(); ++t) {
    validate_scene(e.scenes[t]);
    if (e.scenes[t].frame_index != static_cast<int>(t)) throw std::invalid_argument("episode: frame index gap");
  }
  for (std::size_t t = 0; t + 1 < e.scenes.size(); ++t) {
    const auto& cur = e.scenes[t].actors;
    const auto& nxt = e.scenes[t + 1].actors;
    if (cur.size() != nxt.size()) throw std::invalid_argument("episode: actor set changes mid-episode");
    for (std::size_t i = 0; i < cur.size(); ++i) {
      if (cur[i].id != nxt[i].id) throw std::invalid_argument("episode: actor order changes mid-episode");
      if (nxt[i].x != cur[i].x + kTimeStep * cur[i].vx || nxt[i].y != cur[i].y + kTimeStep * cur[i].vy)
        throw std::invalid_argument("episode: actor " + std::to_string(cur[i].id) + " violates p' = p + 0.5 v");
    }
  }
}

Episode gen_episode(std::uint64_t seed, const GeneratorConfig& config, int episode_id) {
  if (config.min_actors < 0 || config.max_actors > kMaxActorsPerScene || config.min_actors > config.max_actors)
    throw std::invalid_argument("generator: actor count range must satisfy 0 <= min <= max <= 12");
  if (config.forced_actor_count &&
      (*config.forced_actor_count < 0 || *config.forced_actor_count > kMaxActorsPerScene))
    throw std::invalid_argument("generator: forced actor count must lie in [0, 12]");

  SplitMix64 rng(seed);
  Episode ep;
  ep.episode_id = episode_id;
  ep.seed = seed;

  const int count = config.forced_actor_count ? *config.forced_actor_count
                                              : rng.between(config.min_actors, config.max_actors);
  const std::size_t regime = rng.below(3);
  const double ego_speed = regime == 0 ? 0.0 : regime == 1 ? rng.uniform(1.0, 7.0) : rng.uniform(9.0, 15.0);

  std::vector<Actor> actors;
  for (int i = 0; i < count; ++i) actors.push_back(sample_actor(rng, i));

  for (int t = 0; t < kEpisodeLength; ++t) {
    Scene s;
    s.frame_index = t;
    s.ego_speed = ego_speed;
    s.actors = actors;
    ep.scenes.push_back(std::move(s));
    for (auto& a : actors) {
      a.x = a.x + kTimeStep * a.vx;
      a.y = a.y + kTimeStep * a.vy;
    }
  }
  return ep;
}

std::string ego_motion_phrase(double ego_speed) {
  if (ego_speed < 0.5) return "stopped";
  if (ego_speed < 8.0) return "moving slowly";
  return "moving fast";
}

std::string ego_behavior_sentence(double ego_speed) { return "the ego vehicle is " + ego_motion_phrase(ego_speed); }

}  // namespace bella::scenesim
