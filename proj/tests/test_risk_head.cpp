#include <cmath>

#include <gtest/gtest.h>

#include "lsre/risk_head.hpp"
#include "lsre/scenario.hpp"

using namespace lsre;

namespace {

WorldModelDims small_dims() {
  WorldModelDims d;
  d.dh = 6;
  d.dz = 3;
  d.hidden = 8;
  d.embed = 5;
  return d;
}

LatentState latent(double h0) { return {Vec{h0, 0.0}, Vec{0.0}, Vec{0.0}, Vec{1.0}}; }

// g(s) = h0: a single linear unit through a frozen tanh-free path.
MarginClassifier identity_head() {
  MarginClassifier clf("id", 3, 1, 1.0);
  // hidden = tanh(w*h0); pick weights so the output is w2 * tanh(h0).
  clf.net.weight(0).values = {1.0, 0.0, 0.0};
  clf.net.weight(1).values = {1.0};
  return clf;
}

std::vector<int> run_hysteresis(const std::vector<double>& g, const MonitorConfig& cfg) {
  std::vector<int> out;
  int flag = cfg.initial_flag ? 1 : 0;
  for (double v : g) out.push_back(flag = hysteresis_step(v, flag, cfg));
  return out;
}

}  // namespace

TEST(Hinge, WorkedExamples) {
  MarginClassifier clf = identity_head();
  const double g = std::tanh(2.0);
  // Confidently safe and labeled safe: no loss.
  const std::vector<LabeledLatent> a = {{latent(2.0), 1}};
  EXPECT_DOUBLE_EQ(hinge_loss(clf, a, false), std::max(0.0, 1.0 - g));
  // Zero margin, unsafe label: loss delta.
  const std::vector<LabeledLatent> b = {{latent(0.0), -1}};
  EXPECT_DOUBLE_EQ(hinge_loss(clf, b, false), 1.0);
  // Average over the batch.
  clf.delta = 0.5;
  const std::vector<LabeledLatent> c = {{latent(0.0), 1}, {latent(0.0), -1}, {latent(100.0), 1}};
  EXPECT_DOUBLE_EQ(hinge_loss(clf, c, false), (0.5 + 0.5 + 0.0) / 3.0);
}

TEST(Hinge, ZeroClassifierLossIsDelta) {
  MarginClassifier clf("z", 3, 4, 1.5);
  const std::vector<LabeledLatent> batch = {{latent(0.3), 1}, {latent(-2.0), -1}};
  EXPECT_EQ(margin(clf, batch[0].state), 0.0);
  EXPECT_DOUBLE_EQ(hinge_loss(clf, batch, false), 1.5);
}

TEST(Hinge, RejectsEmptyBatchAndBadLabels) {
  MarginClassifier clf = identity_head();
  EXPECT_THROW(hinge_loss(clf, std::vector<LabeledLatent>{}), ValidationError);
  const std::vector<LabeledLatent> bad = {{latent(0.0), 0}};
  EXPECT_THROW(hinge_loss(clf, bad), ValidationError);
}

TEST(Hinge, GradientMatchesFiniteDifferences) {
  MarginClassifier clf("h", 3, 5, 1.0, 4);
  std::vector<LabeledLatent> batch;
  Rng rng(2);
  for (int i = 0; i < 8; ++i) {
    LatentState s = latent(standard_normal(rng));
    s.h[1] = standard_normal(rng);
    s.z[0] = standard_normal(rng);
    batch.push_back({s, i % 2 ? 1 : -1});
  }
  const auto r = grad_check([&] { return hinge_loss(clf, batch); }, clf.net.params());
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Margin, ContractsAndDimensions) {
  EXPECT_THROW(margin(MarginClassifier{}, latent(0.0)), ContractError);
  const MarginClassifier clf("m", 4, 2, 1.0);
  EXPECT_THROW(margin(clf, latent(0.0)), ValidationError);
  EXPECT_THROW(MarginClassifier("m", 3, 2, 0.0), ValidationError);
}

TEST(Value, DiscountedSum) {
  EXPECT_DOUBLE_EQ(discounted_sum(Vec{1.0, 1.0, 1.0}, 0.5), 1.75);
  EXPECT_DOUBLE_EQ(discounted_sum(Vec{-2.0}, 0.9), -2.0);
  EXPECT_EQ(discounted_sum(Vec{}, 0.9), 0.0);
}

TEST(Value, HorizonZeroIsCurrentMargin) {
  const WorldModel wm(small_dims(), 1);
  const MarginClassifier clf("v", 9, 4, 1.0, 3);
  MonitorConfig cfg;
  cfg.horizon = 0;
  LatentState s = wm.initial_state();
  s.h[0] = 0.4;
  EXPECT_EQ(latent_value(clf, wm, s, Action{}, cfg), margin(clf, s));
}

TEST(Value, RecursionAgainstRollout) {
  const WorldModel wm(small_dims(), 1);
  const MarginClassifier clf("v", 9, 4, 1.0, 3);
  const LatentState s = wm.imagine_step(wm.initial_state(), Action{0.5, 0.01});
  MonitorConfig cfg;
  cfg.horizon = 7;
  cfg.gamma = 0.8;
  // V_K(s) = g(s) + gamma * V_{K-1}(s') along the mean-mode rollout.
  const LatentState next = wm.imagine_step(s, Action{0.5, 0.01});
  MonitorConfig shorter = cfg;
  shorter.horizon = 6;
  const double want = margin(clf, s) + 0.8 * latent_value(clf, wm, next, Action{0.5, 0.01}, shorter);
  EXPECT_NEAR(latent_value(clf, wm, s, Action{0.5, 0.01}, cfg), want, 1e-12);
}

TEST(Value, ConstantMarginUndiscounted) {
  const WorldModel wm(small_dims(), 1);
  MarginClassifier clf("c", 9, 2, 1.0);
  clf.net.bias(1).values = {0.3};
  MonitorConfig cfg;
  cfg.gamma = 1.0;
  cfg.horizon = 50;
  EXPECT_NEAR(latent_value(clf, wm, wm.initial_state(), Action{}, cfg), 51 * 0.3, 1e-12);
}

TEST(Hysteresis, HandTrace) {
  MonitorConfig cfg;
  cfg.theta_low = -0.5;
  cfg.theta_high = 0.5;
  EXPECT_EQ(run_hysteresis({1.0, 0.2, -0.2, -0.8, -0.1, 0.6}, cfg), (std::vector<int>{0, 0, 0, 1, 1, 0}));
}

TEST(Hysteresis, BoundariesAreInclusive) {
  MonitorConfig cfg;
  cfg.theta_low = -0.5;
  cfg.theta_high = 0.5;
  EXPECT_EQ(hysteresis_step(0.5, 1, cfg), 0);
  EXPECT_EQ(hysteresis_step(-0.5, 0, cfg), 1);
  EXPECT_EQ(hysteresis_step(0.4999, 1, cfg), 1);
  EXPECT_EQ(hysteresis_step(-0.4999, 0, cfg), 0);
}

TEST(Hysteresis, InsideBandKeepsInitialFlag) {
  MonitorConfig cfg;
  const std::vector<double> quiet(100, 0.0);
  for (int f : run_hysteresis(quiet, cfg)) EXPECT_EQ(f, 0);
  cfg.initial_flag = true;
  for (int f : run_hysteresis(quiet, cfg)) EXPECT_EQ(f, 1);
}

TEST(Hysteresis, ScaleInvariance) {
  MonitorConfig cfg, scaled;
  scaled.theta_low = cfg.theta_low * 3.0;
  scaled.theta_high = cfg.theta_high * 3.0;
  Rng rng(8);
  std::vector<double> g, g3;
  for (int i = 0; i < 500; ++i) {
    g.push_back(0.5 * standard_normal(rng));
    g3.push_back(3.0 * g.back());
  }
  EXPECT_EQ(run_hysteresis(g, cfg), run_hysteresis(g3, scaled));
}

TEST(Hysteresis, LowerMarginsNeverClearFlags) {
  MonitorConfig cfg;
  Rng rng(9);
  std::vector<double> g, lower;
  for (int i = 0; i < 500; ++i) {
    g.push_back(0.5 * standard_normal(rng));
    lower.push_back(g.back() - 0.1);
  }
  const auto a = run_hysteresis(g, cfg), b = run_hysteresis(lower, cfg);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_GE(b[i], a[i]);
}

TEST(MonitorConfig, Validation) {
  MonitorConfig cfg;
  cfg.gamma = 0.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.theta_low = cfg.theta_high;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.horizon = -1;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(MonitorSession, UninitializedIsContractViolation) {
  MonitorSession s;
  EXPECT_THROW(s.step(Frame{}), ContractError);
  EXPECT_THROW(MonitorSession(WorldModel{}, MarginClassifier{}, MonitorConfig{}), ContractError);
}

TEST(MonitorSession, DeterministicAndConsistent) {
  WorldModelDims d = small_dims();
  const WorldModel wm(d, 1);
  const MarginClassifier clf("m", d.dh + d.dz, 4, 1.0, 2);
  MonitorConfig cfg;
  cfg.horizon = 10;
  const Episode ep = generate_episode(ScenarioSpec{}, 3);
  const RiskTrace a = run_monitor(wm, clf, cfg, ep);
  const RiskTrace b = run_monitor(wm, clf, cfg, ep);
  ASSERT_EQ(a.size(), ep.frames.size());
  EXPECT_EQ(a, b);
  const auto path = posterior_path(wm, ep);
  int flag = 0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a[t].t, int(t));
    EXPECT_EQ(a[t].margin, margin(clf, path[t]));
    EXPECT_DOUBLE_EQ(a[t].risk, 1.0 / (1.0 + std::exp(a[t].margin)));
    flag = hysteresis_step(a[t].margin, flag, cfg);
    if (a[t].value < 0.0) flag = 1;
    EXPECT_EQ(a[t].flag, flag);
  }
  Frame wrong = ep.frames[0];
  wrong.features.pop_back();
  MonitorSession s(wm, clf, cfg);
  EXPECT_THROW(s.step(wrong), ValidationError);
}

TEST(TrainingMask, ConsistentDropsStraddlingWindows) {
  LabeledDataset lab;
  lab.dense.assign(30, 0.0);
  lab.key_frames = {{0, 0.1, false, {}, {}}, {10, 0.9, true, {}, false}, {20, 0.9, true, {}, true}};
  const auto keep = training_mask(lab, 30, LabelMode::Consistent);
  for (std::size_t t = 0; t < 30; ++t) {
    const bool want = t == 0 || t >= 10;
    EXPECT_EQ(keep[t], want) << "t=" << t;
  }
  for (bool k : training_mask(lab, 30, LabelMode::Dense)) EXPECT_TRUE(k);
}

TEST(ClassifierTraining, ZeroEpochsAndSingleClassWarning) {
  MarginClassifier clf("c", 3, 4, 1.0, 5);
  const auto before = clf.net.weight(0).values;
  ClassifierTrainOptions opt;
  opt.epochs = 0;
  const std::vector<LabeledLatent> data = {{latent(0.1), 1}, {latent(0.2), 1}};
  const auto log = train_classifier(clf, data, opt);
  EXPECT_EQ(clf.net.weight(0).values, before);
  ASSERT_EQ(log.warnings.size(), 1u);
  EXPECT_NE(log.warnings[0].find("single class"), std::string::npos);
}

TEST(ClassifierTraining, SeparatesLinearlySeparableData) {
  MarginClassifier a("c", 3, 6, 1.0, 5), b("c", 3, 6, 1.0, 5);
  std::vector<LabeledLatent> data;
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double x = standard_normal(rng);
    data.push_back({latent(x + (x > 0 ? 0.5 : -0.5)), x > 0 ? 1 : -1});
  }
  ClassifierTrainOptions opt;
  opt.epochs = 40;
  const auto la = train_classifier(a, data, opt);
  train_classifier(b, data, opt);
  EXPECT_EQ(a.net.weight(0).values, b.net.weight(0).values);
  EXPECT_LT(la.epoch_loss.back(), la.epoch_loss.front());
  int correct = 0;
  for (const auto& s : data) correct += (margin(a, s.state) > 0) == (s.label > 0);
  EXPECT_GE(correct, 195);
}
