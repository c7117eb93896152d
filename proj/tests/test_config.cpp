#include <gtest/gtest.h>

#include "lsre/config.hpp"

using namespace lsre;

namespace {

std::string error_of(const std::string& text) {
  try {
    config_from_text(text);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsAreValid) {
  EXPECT_NO_THROW(validate(RunConfig{}));
  const RunConfig c = config_from_text("{}");
  EXPECT_EQ(to_json(c), to_json(RunConfig{}));
}

TEST(Config, RoundTrip) {
  RunConfig c;
  c.seed = 99;
  c.monitor.gamma = 0.9;
  c.monitor.horizon = 12;
  c.classifier.train.label_mode = LabelMode::Dense;
  c.world_model_train.optimizer = Optimizer::Sgd;
  c.oracle.flip_prob = 0.1;
  const RunConfig back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.monitor.horizon, 12);
  EXPECT_EQ(back.classifier.train.label_mode, LabelMode::Dense);
}

TEST(Config, PartialOverride) {
  const RunConfig c = config_from_text(R"({"seed": 3, "monitor": {"horizon": 0}})");
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.monitor.horizon, 0);
  EXPECT_EQ(c.monitor.gamma, MonitorConfig{}.gamma);
}

TEST(Config, UnknownKeyRejected) {
  const std::string msg = error_of(R"({"monitor": {"horizn": 10}})");
  EXPECT_NE(msg.find("monitor.horizn"), std::string::npos) << msg;
  EXPECT_NE(error_of(R"({"extra": 1})").find("extra"), std::string::npos);
}

TEST(Config, AllErrorsReportedTogether) {
  const std::string msg = error_of(R"({"monitor": {"gamma": 2.0, "bogus": 1}, "oracle": {"key_stride": "ten"}})");
  EXPECT_NE(msg.find("gamma"), std::string::npos) << msg;
  EXPECT_NE(msg.find("bogus"), std::string::npos) << msg;
  EXPECT_NE(msg.find("key_stride"), std::string::npos) << msg;
}

TEST(Config, InvalidJsonAndEnums) {
  EXPECT_NE(error_of("{").find("not valid JSON"), std::string::npos);
  EXPECT_NE(error_of(R"({"world_model": {"optimizer": "rmsprop"}})").find("optimizer"), std::string::npos);
  EXPECT_NE(error_of(R"({"classifier": {"label_mode": "sparse"}})").find("label_mode"), std::string::npos);
}

TEST(Config, ObservationWidthMustMatchFeatures) {
  RunConfig c;
  c.world_model.obs_dim = 12;
  EXPECT_THROW(validate(c), ValidationError);
}

TEST(Config, HashIsStableAndSensitive) {
  const RunConfig a;
  RunConfig b;
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.monitor.theta_low = -0.3;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}
