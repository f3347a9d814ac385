// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic driving scenes: actors around an ego vehicle over a short
// episode, integrated at a fixed 0.5 s step.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bella::scenesim {

enum class ActorClass { kCar, kTruck, kBus, kBicycle, kMotorcycle, kPedestrian };
enum class Status { kMoving, kStopped, kParked, kWalking, kStanding };
enum class Quadrant { kFront, kBack, kLeft, kRight };

inline constexpr std::array<ActorClass, 6> kAllClasses = {ActorClass::kCar,     ActorClass::kTruck,
                                                          ActorClass::kBus,     ActorClass::kBicycle,
                                                          ActorClass::kMotorcycle, ActorClass::kPedestrian};
inline constexpr std::array<Status, 5> kAllStatuses = {Status::kMoving, Status::kStopped, Status::kParked,
                                                       Status::kWalking, Status::kStanding};
inline constexpr std::array<Quadrant, 4> kAllQuadrants = {Quadrant::kFront, Quadrant::kBack, Quadrant::kLeft,
                                                          Quadrant::kRight};

inline constexpr double kExtent = 32.0;        // metres, half-width of the square around ego
inline constexpr double kTimeStep = 0.5;       // seconds between frames
inline constexpr int kEpisodeLength = 20;      // frames
inline constexpr double kMovingSpeed = 0.5;    // m/s, minimum speed of a moving/walking actor
inline constexpr int kMaxActorsPerScene = 12;

std::string_view class_name(ActorClass c);
std::string_view class_plural(ActorClass c);
std::string_view status_name(Status s);
std::string_view quadrant_name(Quadrant q);
std::optional<ActorClass> parse_class(std::string_view word);
std::optional<ActorClass> parse_class_plural(std::string_view word);
std::optional<Status> parse_status(std::string_view word);
std::optional<Quadrant> parse_quadrant(std::string_view word);

bool is_vehicle(ActorClass c);
/// Statuses a class may carry: vehicles {moving, stopped, parked},
/// pedestrians {walking, standing}.
bool status_compatible(ActorClass c, Status s);
/// Statuses that imply a speed of exactly zero.
bool is_stationary(Status s);

struct Actor {
  int id = 0;
  ActorClass cls = ActorClass::kCar;
  double x = 0;   // metres forward of ego
  double y = 0;   // metres left of ego
  double vx = 0;  // m/s
  double vy = 0;
  Status status = Status::kParked;

  double speed() const;
  bool operator==(const Actor&) const = default;
};

struct Scene {
  int frame_index = 0;
  double ego_speed = 0;
  std::vector<Actor> actors;

  bool operator==(const Scene&) const = default;
};

struct Episode {
  int episode_id = 0;
  std::uint64_t seed = 0;
  std::vector<Scene> scenes;

  bool operator==(const Episode&) const = default;
};

struct GeneratorConfig {
  int min_actors = 0;
  int max_actors = 6;
  /// When set, every scene carries exactly this many actors.
  std::optional<int> forced_actor_count;
};

/// Deterministic in (seed, config). Velocities are constant per actor and
/// chosen so that every actor stays inside the extent and away from the ego
/// square for the whole episode.
Episode gen_episode(std::uint64_t seed, const GeneratorConfig& config = {}, int episode_id = 0);

/// front if x >= |y|; back if -x >= |y|; left if y > |x|; right if -y > |x|.
/// Throws std::invalid_argument at the origin.
Quadrant quadrant_of(const Actor& actor);
Quadrant quadrant_of(double x, double y);

/// Throws std::invalid_argument describing the first violated invariant.
void validate_actor(const Actor& a);
void validate_scene(const Scene& s);
void validate_episode(const Episode& e);

/// "stopped" below 0.5 m/s, "moving slowly" below 8 m/s, else "moving fast".
std::string ego_motion_phrase(double ego_speed);
/// Full behaviour sentence, e.g. "the ego vehicle is moving slowly".
std::string ego_behavior_sentence(double ego_speed);

}  // namespace bella::scenesim
