#pragma once

// Run configuration: one JSON document with every hyperparameter. Unknown
// keys and invalid values are rejected before any work starts; all problems
// are reported together.

#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lsre/io.hpp"

#include "lsre/error.hpp"
#include "lsre/random.hpp"
#include "lsre/risk_head.hpp"
#include "lsre/scenario.hpp"
#include "lsre/supervisor.hpp"
#include "lsre/world_model.hpp"

namespace lsre {

struct DatasetConfig {
  int in_dist_clips = 100;
  int held_out_clips = 20;  // tail of each in-distribution set reserved for testing
  int few_shot_train_clips = 10;
  int few_shot_test_clips = 100;
  int normal_frames = 18000;  // 30 min at 10 Hz
};

struct ClassifierConfig {
  std::size_t hidden = 32;
  double delta = 1.0;
  ClassifierTrainOptions train;
};

struct EvalConfig {
  int lookback = 50;
};

struct RunConfig {
  std::uint64_t seed = 7;
  ScenarioSpec scenario;  // category/variant are set per generated set
  DatasetConfig dataset;
  OracleConfig oracle;
  WorldModelDims world_model;
  WorldModelTrainOptions world_model_train;
  ClassifierConfig classifier;
  MonitorConfig monitor;
  EvalConfig eval;
};

namespace detail {

// Reads fields from one JSON object, remembering which keys were consumed.
class ObjectReader {
 public:
  ObjectReader(const Json& obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {
    if (!obj_.is_object()) errors_.push_back(path_ + ": expected an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const Json::exception&) {
      errors_.push_back(path_ + "." + key + ": wrong type");
    }
  }

  template <class Fn>
  void read_with(const char* key, Fn&& fn) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    try {
      fn(obj_.at(key));
    } catch (const Json::exception&) {
      errors_.push_back(path_ + "." + key + ": wrong type");
    } catch (const ValidationError& e) {
      errors_.push_back(path_ + "." + key + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return nullptr;
    return &obj_.at(key);
  }

  void finish() {
    if (!obj_.is_object()) return;
    for (const auto& item : obj_.items()) {
      if (seen_.count(item.key()) == 0) errors_.push_back(path_ + "." + item.key() + ": unknown key");
    }
  }

 private:
  const Json& obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

template <class Fn>
void check(std::vector<std::string>& errors, Fn&& validate) {
  try {
    validate();
  } catch (const ValidationError& e) {
    errors.push_back(e.what());
  }
}

inline std::string label_mode_name(LabelMode m) { return m == LabelMode::Dense ? "dense" : "consistent"; }
inline std::string optimizer_name(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd"; }

}  // namespace detail

inline void validate(const RunConfig& c) {
  std::vector<std::string> errors;
  detail::check(errors, [&] { c.scenario.validate(); });
  detail::check(errors, [&] { c.oracle.validate(); });
  detail::check(errors, [&] { c.world_model.validate(); });
  detail::check(errors, [&] { c.world_model_train.validate(); });
  detail::check(errors, [&] { c.classifier.train.validate(); });
  detail::check(errors, [&] { c.monitor.validate(); });
  const auto& d = c.dataset;
  if (d.in_dist_clips < 2) errors.push_back("dataset.in_dist_clips must be >= 2");
  if (d.held_out_clips < 1 || d.held_out_clips >= d.in_dist_clips)
    errors.push_back("dataset.held_out_clips must lie in [1, in_dist_clips)");
  if (d.few_shot_train_clips < 1) errors.push_back("dataset.few_shot_train_clips must be >= 1");
  if (d.few_shot_test_clips < 1) errors.push_back("dataset.few_shot_test_clips must be >= 1");
  if (d.normal_frames < 1) errors.push_back("dataset.normal_frames must be >= 1");
  if (c.classifier.hidden < 1) errors.push_back("classifier.hidden must be >= 1");
  if (!(c.classifier.delta > 0.0)) errors.push_back("classifier.delta must be positive");
  if (c.eval.lookback < 0) errors.push_back("eval.lookback must be >= 0");
  if (c.world_model.obs_dim != static_cast<std::size_t>(c.scenario.feature_dim))
    errors.push_back("world_model.obs_dim is derived from scenario.feature_dim and must match it");
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ValidationError(msg);
  }
}

inline Json to_json(const RunConfig& c) {
  const auto& s = c.scenario;
  const auto& o = c.oracle;
  const auto& w = c.world_model;
  const auto& wt = c.world_model_train;
  const auto& k = c.classifier;
  const auto& m = c.monitor;
  return Json{
      {"seed", c.seed},
      {"scenario",
       {{"length", s.length},
        {"feature_dim", s.feature_dim},
        {"ramp_start", s.ramp_start},
        {"ramp_slope", s.ramp_slope},
        {"noise_sigma", s.noise_sigma},
        {"event_duration", s.event_duration},
        {"accel_bound", s.accel_bound},
        {"steer_bound", s.steer_bound}}},
      {"dataset",
       {{"in_dist_clips", c.dataset.in_dist_clips},
        {"held_out_clips", c.dataset.held_out_clips},
        {"few_shot_train_clips", c.dataset.few_shot_train_clips},
        {"few_shot_test_clips", c.dataset.few_shot_test_clips},
        {"normal_frames", c.dataset.normal_frames}}},
      {"oracle",
       {{"key_stride", o.key_stride},
        {"flip_prob", o.flip_prob},
        {"context_bonus", o.context_bonus},
        {"soft_conf", o.soft_conf},
        {"prompt_token", o.prompt_token}}},
      {"world_model",
       {{"dh", w.dh},
        {"dz", w.dz},
        {"hidden", w.hidden},
        {"embed", w.embed},
        {"beta", w.beta},
        {"epochs", wt.epochs},
        {"lr", wt.lr},
        {"segment_len", wt.segment_len},
        {"batch", wt.batch},
        {"clip", wt.clip},
        {"optimizer", detail::optimizer_name(wt.optimizer)}}},
      {"classifier",
       {{"hidden", k.hidden},
        {"delta", k.delta},
        {"epochs", k.train.epochs},
        {"lr", k.train.lr},
        {"batch", k.train.batch},
        {"clip", k.train.clip},
        {"label_mode", detail::label_mode_name(k.train.label_mode)}}},
      {"monitor",
       {{"gamma", m.gamma},
        {"horizon", m.horizon},
        {"theta_low", m.theta_low},
        {"theta_high", m.theta_high},
        {"value_gate", m.value_gate},
        {"initial_flag", m.initial_flag}}},
      {"eval", {{"lookback", c.eval.lookback}}},
  };
}

inline RunConfig config_from_json(const Json& j) {
  RunConfig c;
  std::vector<std::string> errors;
  detail::ObjectReader top(j, "config", errors);
  top.read("seed", c.seed);
  if (const Json* s = top.child("scenario")) {
    detail::ObjectReader r(*s, "scenario", errors);
    r.read("length", c.scenario.length);
    r.read("feature_dim", c.scenario.feature_dim);
    r.read("ramp_start", c.scenario.ramp_start);
    r.read("ramp_slope", c.scenario.ramp_slope);
    r.read("noise_sigma", c.scenario.noise_sigma);
    r.read("event_duration", c.scenario.event_duration);
    r.read("accel_bound", c.scenario.accel_bound);
    r.read("steer_bound", c.scenario.steer_bound);
    r.finish();
  }
  if (const Json* s = top.child("dataset")) {
    detail::ObjectReader r(*s, "dataset", errors);
    r.read("in_dist_clips", c.dataset.in_dist_clips);
    r.read("held_out_clips", c.dataset.held_out_clips);
    r.read("few_shot_train_clips", c.dataset.few_shot_train_clips);
    r.read("few_shot_test_clips", c.dataset.few_shot_test_clips);
    r.read("normal_frames", c.dataset.normal_frames);
    r.finish();
  }
  if (const Json* s = top.child("oracle")) {
    detail::ObjectReader r(*s, "oracle", errors);
    r.read("key_stride", c.oracle.key_stride);
    r.read("flip_prob", c.oracle.flip_prob);
    r.read("context_bonus", c.oracle.context_bonus);
    r.read("soft_conf", c.oracle.soft_conf);
    r.read("prompt_token", c.oracle.prompt_token);
    r.finish();
  }
  if (const Json* s = top.child("world_model")) {
    detail::ObjectReader r(*s, "world_model", errors);
    r.read("dh", c.world_model.dh);
    r.read("dz", c.world_model.dz);
    r.read("hidden", c.world_model.hidden);
    r.read("embed", c.world_model.embed);
    r.read("beta", c.world_model.beta);
    r.read("epochs", c.world_model_train.epochs);
    r.read("lr", c.world_model_train.lr);
    r.read("segment_len", c.world_model_train.segment_len);
    r.read("batch", c.world_model_train.batch);
    r.read("clip", c.world_model_train.clip);
    r.read_with("optimizer", [&](const Json& v) {
      const auto name = v.get<std::string>();
      if (name == "adam") c.world_model_train.optimizer = Optimizer::Adam;
      else if (name == "sgd") c.world_model_train.optimizer = Optimizer::Sgd;
      else throw ValidationError("must be \"adam\" or \"sgd\"");
    });
    r.finish();
  }
  if (const Json* s = top.child("classifier")) {
    detail::ObjectReader r(*s, "classifier", errors);
    r.read("hidden", c.classifier.hidden);
    r.read("delta", c.classifier.delta);
    r.read("epochs", c.classifier.train.epochs);
    r.read("lr", c.classifier.train.lr);
    r.read("batch", c.classifier.train.batch);
    r.read("clip", c.classifier.train.clip);
    r.read_with("label_mode", [&](const Json& v) {
      const auto name = v.get<std::string>();
      if (name == "dense") c.classifier.train.label_mode = LabelMode::Dense;
      else if (name == "consistent") c.classifier.train.label_mode = LabelMode::Consistent;
      else throw ValidationError("must be \"dense\" or \"consistent\"");
    });
    r.finish();
  }
  if (const Json* s = top.child("monitor")) {
    detail::ObjectReader r(*s, "monitor", errors);
    r.read("gamma", c.monitor.gamma);
    r.read("horizon", c.monitor.horizon);
    r.read("theta_low", c.monitor.theta_low);
    r.read("theta_high", c.monitor.theta_high);
    r.read("value_gate", c.monitor.value_gate);
    r.read("initial_flag", c.monitor.initial_flag);
    r.finish();
  }
  if (const Json* s = top.child("eval")) {
    detail::ObjectReader r(*s, "eval", errors);
    r.read("lookback", c.eval.lookback);
    r.finish();
  }
  top.finish();
  c.world_model.obs_dim = static_cast<std::size_t>(c.scenario.feature_dim);
  try {
    validate(c);
  } catch (const ValidationError& e) {
    if (errors.empty()) throw;
    // Fold range errors into the key/type errors so everything is reported at once.
    std::string rest = e.what();
    rest.erase(0, rest.find('\n') + 1);
    errors.push_back(rest.substr(2));
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ValidationError(msg);
  }
  return c;
}

inline RunConfig config_from_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

}  // namespace lsre
