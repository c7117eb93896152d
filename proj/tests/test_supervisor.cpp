#include <cmath>

#include <gtest/gtest.h>

#include "lsre/supervisor.hpp"

using namespace lsre;

namespace {

Frame key_frame(int t, bool unsafe) {
  Frame f;
  f.t = t;
  f.gt_unsafe = unsafe;
  f.features.assign(16, 0.0);
  return f;
}

}  // namespace

TEST(Motion, ComponentwiseDifference) {
  const EgoState d = accumulate_motion({0, 0, 5, 0}, {5, 0, 5, 0});
  EXPECT_EQ(d, (EgoState{5, 0, 0, 0}));
  const EgoState s{1.5, -2.0, 7.0, 0.3};
  EXPECT_EQ(accumulate_motion(s, s), (EgoState{0, 0, 0, 0}));
}

TEST(Motion, HeadingDifferenceWraps) {
  const EgoState d = accumulate_motion({0, 0, 0, 3.0}, {0, 0, 0, -3.0});
  EXPECT_NEAR(d.heading, 2.0 * M_PI - 6.0, 1e-12);
  EXPECT_NEAR(d.heading, 0.283, 1e-3);
}

TEST(Oracle, NoiselessLabels) {
  OracleConfig cfg;
  const auto u = query_oracle(key_frame(0, true), {}, std::nullopt, cfg, 1);
  EXPECT_EQ(u.soft, 0.9);
  EXPECT_TRUE(u.hard);
  const auto s = query_oracle(key_frame(10, false), {}, std::nullopt, cfg, 1);
  EXPECT_NEAR(s.soft, 0.1, 1e-15);
  EXPECT_FALSE(s.hard);
}

TEST(Oracle, FlipRateMatchesEpsilon) {
  OracleConfig cfg;
  cfg.flip_prob = 0.2;
  int flips = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const bool gt = i % 2 == 0;
    const auto lab = query_oracle(key_frame(0, gt), {}, std::nullopt, cfg, derive_seed(99, std::uint64_t(i)));
    flips += lab.hard != gt;
  }
  EXPECT_NEAR(flips / double(n), 0.2, 0.02);
}

TEST(Oracle, AgreeingContextLowersFlipRate) {
  OracleConfig cfg;
  cfg.flip_prob = 0.3;
  cfg.context_bonus = 0.2;
  int with_ctx = 0, without = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto seed = derive_seed(5, std::uint64_t(i));
    with_ctx += query_oracle(key_frame(0, true), {}, true, cfg, seed).hard != true;
    without += query_oracle(key_frame(0, true), {}, std::nullopt, cfg, seed).hard != true;
  }
  EXPECT_LT(with_ctx, without);
  EXPECT_NEAR(with_ctx / double(n), 0.1, 0.02);
}

TEST(Oracle, MisalignedFrameRejected) {
  EXPECT_THROW(query_oracle(key_frame(7, false), {}, std::nullopt, OracleConfig{}, 1), ValidationError);
}

TEST(Oracle, ConfigValidation) {
  OracleConfig cfg;
  cfg.flip_prob = 1.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.key_stride = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.context_bonus = 0.1;  // larger than flip_prob 0
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(LabelEpisode, TenQueriesForHundredFrames) {
  const Episode ep = generate_episode(ScenarioSpec{}, 4);
  const auto lab = label_episode(ep, OracleConfig{}, 1);
  ASSERT_EQ(lab.key_frames.size(), 10u);
  EXPECT_EQ(lab.dense.size(), 100u);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(lab.key_frames[k].t, int(10 * k));
}

TEST(LabelEpisode, QueryCountIsCeilLengthOverStride) {
  for (int len : {1, 9, 10, 11, 37}) {
    ScenarioSpec spec;
    spec.length = len;
    const auto lab = label_episode(generate_normal_episode(spec, 2), OracleConfig{}, 1);
    EXPECT_EQ(lab.key_frames.size(), std::size_t((len + 9) / 10));
    EXPECT_EQ(lab.dense.size(), std::size_t(len));
  }
}

TEST(LabelEpisode, NoiselessKeyFramesMatchTruthAndPropagate) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Episode ep = generate_episode(ScenarioSpec{}, seed);
    const auto lab = label_episode(ep, OracleConfig{}, 3);
    const auto& ev = ep.events[0];
    for (const auto& k : lab.key_frames) EXPECT_EQ(k.hard, ep.frames[std::size_t(k.t)].gt_unsafe);
    for (std::size_t t = 0; t < lab.dense.size(); ++t) {
      const std::size_t key = t - t % 10;
      EXPECT_EQ(lab.dense[t], lab.dense[key]);  // exact copy of the last key frame
      const bool unsafe = lab.dense[t] >= 0.5;
      if (unsafe != ep.frames[t].gt_unsafe) {
        // Only windows straddling onset or end may disagree.
        const bool straddles_onset = int(key) < ev.onset && ev.onset <= int(key) + 9;
        const bool straddles_end = int(key) <= ev.end && ev.end < int(key) + 9;
        EXPECT_TRUE(straddles_onset || straddles_end) << "t=" << t;
      }
    }
  }
}

TEST(LabelEpisode, ContextAndMotionChain) {
  const Episode ep = generate_episode(ScenarioSpec{}, 8);
  const auto lab = label_episode(ep, OracleConfig{}, 1);
  EXPECT_FALSE(lab.key_frames[0].prev_hard.has_value());
  EXPECT_EQ(lab.key_frames[0].delta_motion, EgoState{});
  for (std::size_t k = 1; k < lab.key_frames.size(); ++k) {
    EXPECT_EQ(lab.key_frames[k].prev_hard, lab.key_frames[k - 1].hard);
    const EgoState want = accumulate_motion(ep.frames[10 * (k - 1)].ego, ep.frames[10 * k].ego);
    EXPECT_EQ(lab.key_frames[k].delta_motion, want);
  }
}

TEST(LabelEpisode, DeterministicBySeed) {
  OracleConfig cfg;
  cfg.flip_prob = 0.3;
  const Episode ep = generate_episode(ScenarioSpec{}, 8);
  EXPECT_EQ(label_episode(ep, cfg, 5), label_episode(ep, cfg, 5));
  EXPECT_NE(label_episode(ep, cfg, 5), label_episode(ep, cfg, 6));
}

TEST(LabelEpisode, SingleFrame) {
  ScenarioSpec spec;
  spec.length = 1;
  const auto lab = label_episode(generate_normal_episode(spec, 1), OracleConfig{}, 1);
  EXPECT_EQ(lab.key_frames.size(), 1u);
  EXPECT_EQ(lab.dense.size(), 1u);
}
