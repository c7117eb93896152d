#pragma once

// Simulated semantic supervisor. The oracle sees ground truth through a
// symmetric bit-flip channel; agreeing previous-key-frame context lowers the
// flip probability. Labels are queried every `key_stride` frames and copied
// forward to the skipped frames.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lsre/error.hpp"
#include "lsre/random.hpp"
#include "lsre/scenario.hpp"

namespace lsre {

struct OracleConfig {
  int key_stride = 10;
  double flip_prob = 0.0;      // epsilon
  double context_bonus = 0.0;  // subtracted from epsilon when prev context agrees with truth
  double soft_conf = 0.9;
  std::string prompt_token = "semantic-risk-v1";

  void validate() const {
    require(key_stride >= 1, "OracleConfig.key_stride must be >= 1");
    require(flip_prob >= 0.0 && flip_prob < 1.0, "OracleConfig.flip_prob must lie in [0, 1)");
    require(context_bonus >= 0.0 && context_bonus <= flip_prob, "OracleConfig.context_bonus must lie in [0, flip_prob]");
    require(soft_conf > 0.5 && soft_conf <= 1.0, "OracleConfig.soft_conf must lie in (0.5, 1]");
  }
};

struct KeyFrameLabel {
  int t = 0;
  double soft = 0.0;
  bool hard = false;
  EgoState delta_motion;
  std::optional<bool> prev_hard;

  bool operator==(const KeyFrameLabel&) const = default;
};

struct LabeledDataset {
  std::string episode_id;
  std::string prompt_token;
  Vec dense;  // propagated soft label per frame
  std::vector<KeyFrameLabel> key_frames;

  bool operator==(const LabeledDataset&) const = default;
};

// Componentwise cur - prev, heading difference wrapped to [-pi, pi).
inline EgoState accumulate_motion(const EgoState& prev, const EgoState& cur) {
  return {cur.x - prev.x, cur.y - prev.y, cur.speed - prev.speed, wrap_angle(cur.heading - prev.heading)};
}

inline double effective_flip_prob(bool gt_unsafe, std::optional<bool> prev_hard, const OracleConfig& cfg) {
  if (prev_hard.has_value() && *prev_hard == gt_unsafe) return cfg.flip_prob - cfg.context_bonus;
  return cfg.flip_prob;
}

inline KeyFrameLabel query_oracle(const Frame& frame, const EgoState& delta_motion, std::optional<bool> prev_hard,
                                  const OracleConfig& cfg, std::uint64_t rng_seed) {
  cfg.validate();
  if (frame.t % cfg.key_stride != 0) {
    throw ValidationError("query_oracle: frame " + std::to_string(frame.t) + " is not a key frame (stride " +
                          std::to_string(cfg.key_stride) + ")");
  }
  Rng rng(rng_seed);
  const double p_flip = effective_flip_prob(frame.gt_unsafe, prev_hard, cfg);
  const bool flip = uniform01(rng) < p_flip;
  KeyFrameLabel out;
  out.t = frame.t;
  out.hard = frame.gt_unsafe != flip;
  out.soft = out.hard ? cfg.soft_conf : 1.0 - cfg.soft_conf;
  out.delta_motion = delta_motion;
  out.prev_hard = prev_hard;
  return out;
}

inline LabeledDataset label_episode(const Episode& ep, const OracleConfig& cfg, std::uint64_t rng_seed) {
  cfg.validate();
  require(!ep.frames.empty(), "label_episode: episode '" + ep.id + "' has no frames");
  LabeledDataset out;
  out.episode_id = ep.id;
  out.prompt_token = cfg.prompt_token;
  out.dense.resize(ep.frames.size());

  const std::uint64_t base = derive_seed(rng_seed, ep.seed);
  std::optional<bool> prev_hard;
  const EgoState* prev_ego = nullptr;
  for (std::size_t t = 0; t < ep.frames.size(); t += static_cast<std::size_t>(cfg.key_stride)) {
    const Frame& fr = ep.frames[t];
    const EgoState delta = prev_ego ? accumulate_motion(*prev_ego, fr.ego) : EgoState{};
    KeyFrameLabel lab = query_oracle(fr, delta, prev_hard, cfg, derive_seed(base, static_cast<std::uint64_t>(t)));
    const std::size_t stop = std::min(ep.frames.size(), t + static_cast<std::size_t>(cfg.key_stride));
    for (std::size_t k = t; k < stop; ++k) out.dense[k] = lab.soft;
    prev_hard = lab.hard;
    prev_ego = &fr.ego;
    out.key_frames.push_back(lab);
  }
  return out;
}

}  // namespace lsre
