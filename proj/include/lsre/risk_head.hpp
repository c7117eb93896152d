#pragma once

// Semantic scoring on top of the world model: a hinge-trained margin
// classifier, the discounted margin value over a mean-mode imagined rollout,
// the two-threshold hysteresis filter, and the fused per-frame monitor.
//
// Sign convention: positive margin = safe, negative = violation. Flags use
// 1 = unsafe, 0 = safe.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lsre/error.hpp"
#include "lsre/random.hpp"
#include "lsre/scenario.hpp"
#include "lsre/supervisor.hpp"
#include "lsre/tensor_core.hpp"
#include "lsre/world_model.hpp"

namespace lsre {

struct MarginClassifier {
  Mlp net;
  double delta = 1.0;

  MarginClassifier() = default;

  // Zero-initialized unless a seed is given.
  MarginClassifier(const std::string& name, std::size_t latent_dim, std::size_t hidden, double margin_delta,
                   std::optional<std::uint64_t> init_seed = std::nullopt)
      : net(name, {latent_dim, hidden, 1}), delta(margin_delta) {
    require(std::isfinite(delta) && delta > 0.0, "classifier delta must be positive");
    if (init_seed) {
      Rng rng(derive_seed(*init_seed, name + ".init"));
      net.init_xavier(rng);
    }
  }

  bool initialized() const { return net.num_layers() > 0; }
};

inline Vec latent_input(const LatentState& s) { return concat(s.h, s.z); }

inline double margin(const MarginClassifier& clf, const LatentState& s) {
  if (!clf.initialized()) throw ContractError("margin: classifier is not initialized");
  const std::size_t n = s.h.size() + s.z.size();
  if (n != clf.net.in_size()) {
    throw ValidationError("margin: latent has " + std::to_string(n) + " entries, classifier expects " +
                          std::to_string(clf.net.in_size()));
  }
  return clf.net.forward(latent_input(s))[0];
}

struct LabeledLatent {
  LatentState state;
  int label = 1;  // +1 safe, -1 unsafe
};

// (1/N) sum ReLU(delta - y * g(z)); the subgradient at the kink is 0.
inline double hinge_loss(MarginClassifier& clf, std::span<const LabeledLatent> batch, bool accumulate = true) {
  require(!batch.empty(), "hinge_loss: batch is empty");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  Mlp::Tape tape;
  for (const LabeledLatent& s : batch) {
    require(s.label == 1 || s.label == -1, "hinge_loss: labels must be +1 (safe) or -1 (unsafe)");
    const double g = clf.net.forward(latent_input(s.state), accumulate ? &tape : nullptr)[0];
    const double slack = clf.delta - s.label * g;
    if (slack > 0.0) {
      total += slack;
      if (accumulate) {
        const double dg = -s.label * inv_n;
        clf.net.backward(tape, std::span<const double>(&dg, 1));
      }
    }
  }
  return total * inv_n;
}

struct MonitorConfig {
  double gamma = 0.97;
  int horizon = 50;
  double theta_low = -0.25;
  double theta_high = 0.25;
  bool value_gate = true;
  bool initial_flag = false;

  void validate() const {
    require(std::isfinite(gamma) && gamma > 0.0 && gamma <= 1.0, "monitor.gamma must lie in (0, 1]");
    require(horizon >= 0, "monitor.horizon must be >= 0");
    require(std::isfinite(theta_low) && std::isfinite(theta_high) && theta_low < theta_high,
            "monitor.theta_low must be below monitor.theta_high");
  }
};

// Action applied at rollout step k (0-based) given the last observed action.
using ActionPlan = std::function<Action(int k, const Action& last)>;

inline double discounted_sum(std::span<const double> margins, double gamma) {
  double v = 0.0;
  double w = 1.0;
  for (double m : margins) {
    v += w * m;
    w *= gamma;
  }
  return v;
}

// Margins along a mean-mode rollout of `horizon` steps, starting with the current state.
inline Vec rollout_margins(const MarginClassifier& clf, const WorldModel& wm, const LatentState& s,
                           const Action& last_action, int horizon, const ActionPlan& plan = {}) {
  Vec out;
  out.reserve(static_cast<std::size_t>(horizon) + 1);
  out.push_back(margin(clf, s));
  LatentState cur = s;
  for (int k = 0; k < horizon; ++k) {
    const Action a = plan ? plan(k, last_action) : last_action;
    cur = wm.imagine_step(cur, a);
    out.push_back(margin(clf, cur));
  }
  return out;
}

inline double latent_value(const MarginClassifier& clf, const WorldModel& wm, const LatentState& s,
                           const Action& last_action, const MonitorConfig& cfg, const ActionPlan& plan = {}) {
  cfg.validate();
  return discounted_sum(rollout_margins(clf, wm, s, last_action, cfg.horizon, plan), cfg.gamma);
}

inline int hysteresis_step(double g, int prev_flag, const MonitorConfig& cfg) {
  if (g >= cfg.theta_high) return 0;
  if (g <= cfg.theta_low) return 1;
  return prev_flag;
}

struct RiskRecord {
  int t = 0;
  double margin = 0.0;
  double value = 0.0;
  int flag = 0;
  double risk = 0.5;

  bool operator==(const RiskRecord&) const = default;
};

using RiskTrace = std::vector<RiskRecord>;

inline double risk_from_margin(double g) { return sigmoid(-g); }

// One monitor stream. Owns the running latent and flag; the models are borrowed
// and must outlive the session.
class MonitorSession {
 public:
  MonitorSession() = default;

  MonitorSession(const WorldModel& wm, const MarginClassifier& clf, const MonitorConfig& cfg)
      : wm_(&wm), clf_(&clf), cfg_(cfg) {
    cfg_.validate();
    if (!wm.initialized() || !clf.initialized()) throw ContractError("MonitorSession: models not initialized");
    reset();
  }

  bool initialized() const { return wm_ != nullptr; }

  void reset() {
    if (!initialized()) throw ContractError("MonitorSession: not initialized");
    state_ = wm_->initial_state();
    last_action_ = Action{};
    flag_ = cfg_.initial_flag ? 1 : 0;
  }

  RiskRecord step(const Frame& frame) {
    if (!initialized()) throw ContractError("monitor_step: session not initialized");
    if (frame.features.size() != wm_->dims().obs_dim) {
      throw ValidationError("monitor_step: frame has " + std::to_string(frame.features.size()) +
                            " features, model expects " + std::to_string(wm_->dims().obs_dim));
    }
    state_ = wm_->observe_step(state_, last_action_, frame.features, std::nullopt).posterior;
    last_action_ = frame.action;

    RiskRecord rec;
    rec.t = frame.t;
    rec.margin = margin(*clf_, state_);
    rec.value = discounted_sum(rollout_margins(*clf_, *wm_, state_, last_action_, cfg_.horizon, plan_), cfg_.gamma);
    int flag = hysteresis_step(rec.margin, flag_, cfg_);
    if (cfg_.value_gate && rec.value < 0.0) flag = 1;
    flag_ = flag;
    rec.flag = flag;
    rec.risk = risk_from_margin(rec.margin);
    return rec;
  }

  void set_action_plan(ActionPlan plan) { plan_ = std::move(plan); }
  const LatentState& state() const { return state_; }
  const MonitorConfig& config() const { return cfg_; }

 private:
  const WorldModel* wm_ = nullptr;
  const MarginClassifier* clf_ = nullptr;
  MonitorConfig cfg_;
  ActionPlan plan_;
  LatentState state_;
  Action last_action_;
  int flag_ = 0;
};

inline RiskTrace run_monitor(const WorldModel& wm, const MarginClassifier& clf, const MonitorConfig& cfg,
                             const Episode& ep) {
  MonitorSession session(wm, clf, cfg);
  RiskTrace trace;
  trace.reserve(ep.frames.size());
  for (const Frame& fr : ep.frames) trace.push_back(session.step(fr));
  return trace;
}

// Posterior mean latents along an episode, as seen by the monitor.
inline std::vector<LatentState> posterior_path(const WorldModel& wm, const Episode& ep) {
  std::vector<LatentState> out;
  out.reserve(ep.frames.size());
  LatentState s = wm.initial_state();
  Action last{};
  for (const Frame& fr : ep.frames) {
    s = wm.observe_step(s, last, fr.features, std::nullopt).posterior;
    last = fr.action;
    out.push_back(s);
  }
  return out;
}

// Which propagated labels feed classifier training.
//   Dense:      every frame with its propagated label.
//   Consistent: key frames, plus propagated frames whose window is closed by a
//               key frame with the same hard label. Windows that straddle a
//               label change are dropped because their copied label lags the
//               true transition.
enum class LabelMode { Dense, Consistent };

struct ClassifierTrainOptions {
  int epochs = 30;
  double lr = 0.05;
  int batch = 32;
  double clip = 5.0;
  LabelMode label_mode = LabelMode::Consistent;
  std::uint64_t seed = 0;

  void validate() const {
    require(epochs >= 0, "classifier.epochs must be >= 0");
    require(std::isfinite(lr) && lr > 0.0, "classifier.lr must be positive");
    require(batch >= 1, "classifier.batch must be >= 1");
  }
};

struct ClassifierLog {
  std::vector<double> epoch_loss;
  std::size_t safe_samples = 0;
  std::size_t unsafe_samples = 0;
  std::vector<std::string> warnings;
};

// Frames kept under `mode`; true where the propagated label is used for training.
inline std::vector<bool> training_mask(const LabeledDataset& lab, std::size_t length, LabelMode mode) {
  std::vector<bool> keep(length, mode == LabelMode::Dense);
  if (mode == LabelMode::Dense) return keep;
  const auto& keys = lab.key_frames;
  for (std::size_t k = 0; k < keys.size(); ++k) {
    const std::size_t start = static_cast<std::size_t>(keys[k].t);
    const std::size_t stop = k + 1 < keys.size() ? static_cast<std::size_t>(keys[k + 1].t) : length;
    const bool closed_consistently = k + 1 >= keys.size() || keys[k + 1].hard == keys[k].hard;
    for (std::size_t t = start; t < std::min(stop, length); ++t) keep[t] = t == start || closed_consistently;
  }
  return keep;
}

// Builds (latent, +-1) pairs from oracle labels: soft >= 0.5 means unsafe.
inline std::vector<LabeledLatent> labeled_latents(const WorldModel& wm, std::span<const Episode> episodes,
                                                  std::span<const LabeledDataset> labels,
                                                  LabelMode mode = LabelMode::Consistent) {
  require(episodes.size() == labels.size(), "labeled_latents: every episode needs a label set");
  std::vector<LabeledLatent> out;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = episodes[e];
    const LabeledDataset& lab = labels[e];
    require(lab.episode_id == ep.id, "labeled_latents: label set '" + lab.episode_id + "' does not match episode '" +
                                         ep.id + "'");
    require(lab.dense.size() == ep.frames.size(), "labeled_latents: label length mismatch for '" + ep.id + "'");
    const auto path = posterior_path(wm, ep);
    const auto keep = training_mask(lab, path.size(), mode);
    for (std::size_t t = 0; t < path.size(); ++t)
      if (keep[t]) out.push_back({path[t], lab.dense[t] >= 0.5 ? -1 : 1});
  }
  return out;
}

inline ClassifierLog train_classifier(MarginClassifier& clf, std::span<const LabeledLatent> data,
                                      const ClassifierTrainOptions& opt) {
  opt.validate();
  require(!data.empty(), "train_classifier: no labeled latents");
  ClassifierLog log;
  for (const auto& s : data) (s.label > 0 ? log.safe_samples : log.unsafe_samples)++;
  if (log.safe_samples == 0 || log.unsafe_samples == 0) {
    log.warnings.push_back("training set contains a single class (" + std::to_string(log.safe_samples) + " safe, " +
                           std::to_string(log.unsafe_samples) + " unsafe)");
  }
  const ParamRefs params = clf.net.params();
  Rng rng(derive_seed(opt.seed, "classifier.train"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<LabeledLatent> batch;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(opt.batch)) {
      batch.clear();
      for (std::size_t j = i; j < std::min(order.size(), i + static_cast<std::size_t>(opt.batch)); ++j)
        batch.push_back(data[order[j]]);
      loss_sum += hinge_loss(clf, batch) * static_cast<double>(batch.size());
      sgd_step(params, opt.lr, opt.clip);
    }
    const double mean = loss_sum / static_cast<double>(data.size());
    if (!std::isfinite(mean)) throw TrainingError("train_classifier: loss diverged in epoch " + std::to_string(epoch));
    log.epoch_loss.push_back(mean);
  }
  return log;
}

inline ClassifierLog train_classifier(MarginClassifier& clf, const WorldModel& wm, std::span<const Episode> episodes,
                                      std::span<const LabeledDataset> labels, const ClassifierTrainOptions& opt) {
  const auto data = labeled_latents(wm, episodes, labels, opt.label_mode);
  return train_classifier(clf, data, opt);
}

}  // namespace lsre
