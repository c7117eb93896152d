#pragma once

// Synthetic driving episodes with one parameterized semantic-failure event.
//
// Feature layout (d >= 16):
//   [0, 4)   emergency-vehicle block
//   [4, 8)   construction-zone block
//   [8, 12)  school-bus block
//   [12, d)  nominal driving dynamics
// Each hazard block holds {proximity ramp, active indicator, two
// appearance cues}. Only the block of the episode's category is non-zero.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lsre/error.hpp"
#include "lsre/random.hpp"
#include "lsre/tensor_core.hpp"

namespace lsre {

inline constexpr double kFrameDt = 0.1;        // 10 Hz
inline constexpr double kMsPerFrame = 100.0;
inline constexpr std::size_t kHazardBlockWidth = 4;
inline constexpr std::size_t kNominalOffset = 12;
inline constexpr std::size_t kMinFeatureDim = 16;

enum class Category { EmergencyVehicle, ConstructionZone, SchoolBus };
enum class Variant { InDistribution, FewShot };

inline constexpr std::array<Category, 3> kAllCategories = {Category::EmergencyVehicle, Category::ConstructionZone,
                                                           Category::SchoolBus};

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::EmergencyVehicle: return "emergency_vehicle";
    case Category::ConstructionZone: return "construction_zone";
    case Category::SchoolBus: return "school_bus";
  }
  return "unknown";
}

inline std::string_view to_string(Variant v) {
  return v == Variant::InDistribution ? "in_distribution" : "few_shot";
}

inline Category category_from_string(std::string_view s) {
  for (Category c : kAllCategories)
    if (to_string(c) == s) return c;
  throw ValidationError("unknown scenario category '" + std::string(s) + "'");
}

inline Variant variant_from_string(std::string_view s) {
  if (s == "in_distribution") return Variant::InDistribution;
  if (s == "few_shot") return Variant::FewShot;
  throw ValidationError("unknown scenario variant '" + std::string(s) + "'");
}

inline std::size_t hazard_block_start(Category c) { return static_cast<std::size_t>(c) * kHazardBlockWidth; }

// Wraps an angle into [-pi, pi).
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(a + std::numbers::pi, two_pi);
  if (w < 0.0) w += two_pi;
  w -= std::numbers::pi;
  if (w >= std::numbers::pi) w -= two_pi;
  return w;
}

struct EgoState {
  double x = 0.0;        // m
  double y = 0.0;        // m
  double speed = 0.0;    // m/s
  double heading = 0.0;  // rad, [-pi, pi)

  bool operator==(const EgoState&) const = default;
};

struct Action {
  double accel = 0.0;  // m/s^2
  double steer = 0.0;  // rad/s

  bool operator==(const Action&) const = default;
};

// One tick of the ego integrator: position advances by speed * dt along heading.
inline EgoState integrate_ego(const EgoState& s, const Action& a, double dt = kFrameDt) {
  EgoState n;
  n.x = s.x + s.speed * std::cos(s.heading) * dt;
  n.y = s.y + s.speed * std::sin(s.heading) * dt;
  n.speed = std::max(0.0, s.speed + a.accel * dt);
  n.heading = wrap_angle(s.heading + a.steer * dt);
  return n;
}

struct Frame {
  int t = 0;
  Vec features;
  EgoState ego;
  Action action;
  bool gt_unsafe = false;

  bool operator==(const Frame&) const = default;
};

struct SemanticEvent {
  Category category = Category::EmergencyVehicle;
  int onset = 0;
  int end = 0;  // inclusive last unsafe frame, clamped to the clip

  bool operator==(const SemanticEvent&) const = default;
};

struct ScenarioSpec {
  Category category = Category::EmergencyVehicle;
  Variant variant = Variant::InDistribution;
  int length = 100;
  int feature_dim = 16;
  int ramp_start = 30;          // frames before onset where the precursor starts
  double ramp_slope = 1.0 / 30.0;
  double noise_sigma = 0.05;
  int event_duration = 30;      // end = onset + event_duration (clamped)
  double accel_bound = 3.0;
  double steer_bound = 0.5;

  bool operator==(const ScenarioSpec&) const = default;

  void validate() const {
    require(length >= 1, "ScenarioSpec.length must be >= 1");
    require(feature_dim >= static_cast<int>(kMinFeatureDim), "ScenarioSpec.feature_dim must be >= 16");
    require(ramp_start >= 0, "ScenarioSpec.ramp_start must be >= 0");
    require(std::isfinite(ramp_slope) && ramp_slope > 0.0, "ScenarioSpec.ramp_slope must be positive");
    require(std::isfinite(noise_sigma) && noise_sigma >= 0.0, "ScenarioSpec.noise_sigma must be >= 0");
    require(event_duration >= 1, "ScenarioSpec.event_duration must be >= 1");
    require(std::isfinite(accel_bound) && accel_bound > 0.0, "ScenarioSpec.accel_bound must be positive");
    require(std::isfinite(steer_bound) && steer_bound > 0.0, "ScenarioSpec.steer_bound must be positive");
  }
};

struct Episode {
  std::string id;
  std::uint64_t seed = 0;
  ScenarioSpec spec;
  std::vector<Frame> frames;
  std::vector<SemanticEvent> events;

  bool operator==(const Episode&) const = default;
};

// Precursor level at frame t: zero before onset - ramp_start, linear up to the
// plateau ramp_slope * ramp_start at onset, held through the event, zero after.
inline double hazard_ramp(const ScenarioSpec& spec, const SemanticEvent& ev, int t) {
  const int begin = ev.onset - spec.ramp_start;
  if (t < begin || t > ev.end) return 0.0;
  if (t >= ev.onset) return spec.ramp_slope * spec.ramp_start;
  return spec.ramp_slope * (t - begin);
}

namespace detail {

struct DrivingProfile {
  EgoState start;
  double accel_amp = 0.0;
  double accel_omega = 0.0;
  double accel_phase = 0.0;
  double steer_amp = 0.0;
  double steer_omega = 0.0;
  double steer_phase = 0.0;
};

inline DrivingProfile draw_profile(Rng& rng) {
  auto u = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
  DrivingProfile p;
  p.start.speed = u(8.0, 14.0);
  p.start.heading = u(-0.2, 0.2);
  p.accel_amp = u(0.3, 1.0);
  p.accel_omega = 2.0 * std::numbers::pi / u(40.0, 80.0);
  p.accel_phase = u(0.0, 2.0 * std::numbers::pi);
  p.steer_amp = u(0.01, 0.05);
  p.steer_omega = 2.0 * std::numbers::pi / u(30.0, 90.0);
  p.steer_phase = u(0.0, 2.0 * std::numbers::pi);
  return p;
}

inline double nominal_offset(Variant v) { return v == Variant::FewShot ? 0.5 : 0.0; }

inline void write_nominal(const ScenarioSpec& spec, const EgoState& ego, const Action& a, Vec& f) {
  const double off = nominal_offset(spec.variant);
  f[kNominalOffset + 0] = (ego.speed - 11.0) / 3.0 + off;
  f[kNominalOffset + 1] = a.accel + off;
  f[kNominalOffset + 2] = 20.0 * a.steer + off;
  f[kNominalOffset + 3] = 2.0 * ego.heading + off;
  for (std::size_t i = kNominalOffset + 4; i < f.size(); ++i) f[i] = off;
}

inline void write_hazard(const ScenarioSpec& spec, const SemanticEvent& ev, int t, Vec& f) {
  const std::size_t b = hazard_block_start(ev.category);
  const bool active = t >= ev.onset && t <= ev.end;
  const bool few_shot = spec.variant == Variant::FewShot;
  f[b + 0] = hazard_ramp(spec, ev, t);
  f[b + 1] = active ? (few_shot ? 0.8 : 1.0) : 0.0;
  f[b + 2] = active ? (few_shot ? 0.3 : 0.6) : 0.0;
  f[b + 3] = active ? (few_shot ? -0.5 : 0.5) : 0.0;
}

inline std::vector<Frame> drive(const ScenarioSpec& spec, Rng& rng, const std::optional<SemanticEvent>& ev) {
  const DrivingProfile prof = draw_profile(rng);
  std::vector<Frame> frames;
  frames.reserve(static_cast<std::size_t>(spec.length));
  EgoState ego = prof.start;
  for (int t = 0; t < spec.length; ++t) {
    Frame fr;
    fr.t = t;
    fr.ego = ego;
    fr.action.accel = std::clamp(prof.accel_amp * std::sin(prof.accel_omega * t + prof.accel_phase), -spec.accel_bound,
                                 spec.accel_bound);
    fr.action.steer = std::clamp(prof.steer_amp * std::sin(prof.steer_omega * t + prof.steer_phase), -spec.steer_bound,
                                 spec.steer_bound);
    fr.features.assign(static_cast<std::size_t>(spec.feature_dim), 0.0);
    write_nominal(spec, fr.ego, fr.action, fr.features);
    if (ev) {
      write_hazard(spec, *ev, t, fr.features);
      fr.gt_unsafe = t >= ev->onset && t <= ev->end;
    }
    if (spec.noise_sigma > 0.0)
      for (double& x : fr.features) x += spec.noise_sigma * standard_normal(rng);
    ego = integrate_ego(ego, fr.action);
    frames.push_back(std::move(fr));
  }
  return frames;
}

}  // namespace detail

inline std::string episode_id(const ScenarioSpec& spec, std::uint64_t seed) {
  return std::string(to_string(spec.category)) + "-" + std::string(to_string(spec.variant)) + "-" +
         std::to_string(seed);
}

inline Episode generate_episode(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, "episode"));
  const int lo = spec.length / 5;
  const int hi = std::min((4 * spec.length) / 5, spec.length - 1);
  std::uniform_int_distribution<int> onset_dist(lo, hi);
  SemanticEvent ev;
  ev.category = spec.category;
  ev.onset = onset_dist(rng);
  ev.end = std::min(ev.onset + spec.event_duration, spec.length);

  Episode ep;
  ep.id = episode_id(spec, seed);
  ep.seed = seed;
  ep.spec = spec;
  ep.frames = detail::drive(spec, rng, ev);
  ep.events.push_back(ev);
  return ep;
}

inline std::vector<Episode> generate_dataset(const ScenarioSpec& spec, int n, std::uint64_t base_seed) {
  require(n >= 1, "generate_dataset: n must be >= 1");
  spec.validate();
  std::vector<Episode> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(generate_episode(spec, base_seed + static_cast<std::uint64_t>(i)));
  return out;
}

// Failure-free driving; `spec` supplies dimensions, noise and variant, its category is ignored.
inline Episode generate_normal_episode(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, "normal"));
  Episode ep;
  ep.id = "normal-" + std::to_string(seed);
  ep.seed = seed;
  ep.spec = spec;
  ep.frames = detail::drive(spec, rng, std::nullopt);
  return ep;
}

inline Episode generate_normal_episode(int length, std::uint64_t seed) {
  ScenarioSpec spec;
  spec.length = length;
  return generate_normal_episode(spec, seed);
}

}  // namespace lsre
