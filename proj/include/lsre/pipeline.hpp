#pragma once

// Pipeline stages behind the command-line tool. Stages talk through flat files:
//
//   <data>/in_distribution/<category>.jsonl     episodes; the last held_out_clips are test clips
//   <data>/few_shot_train/<category>.jsonl
//   <data>/few_shot_test/<category>.jsonl
//   <data>/normal/normal.jsonl                  failure-free clips, normal_frames frames in total
//   <data>/labels/<set>/<category>.jsonl        oracle labels for every episode file
//   <data>/manifest.json
//
//   <model>/world_model.ckpt (+ .json)          stage-1 checkpoint, reused when it matches
//   <model>/lsre.ckpt (+ .json)                 world model + both margin heads
//   <model>/train_log.json, manifest.json
//
// Every output directory carries a manifest with the config hash, digests of
// the inputs and of the written artifacts.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <unistd.h>

#include "lsre/checkpoint.hpp"
#include "lsre/config.hpp"
#include "lsre/io.hpp"
#include "lsre/metrics.hpp"
#include "lsre/risk_head.hpp"
#include "lsre/scenario.hpp"
#include "lsre/supervisor.hpp"
#include "lsre/world_model.hpp"

namespace lsre {

inline constexpr const char* kToolVersion = "lsre 0.1.0";

inline const std::vector<std::string>& episode_sets() {
  static const std::vector<std::string> sets = {"in_distribution", "few_shot_train", "few_shot_test"};
  return sets;
}

// ---------------------------------------------------------------------------
// Manifests

struct Manifest {
  std::string stage;
  std::string config_hash;
  std::string tool_version = kToolVersion;
  std::map<std::string, std::string> inputs;     // path -> digest
  std::map<std::string, std::string> artifacts;  // path relative to the manifest -> digest
};

inline std::string file_digest(const fs::path& path) { return hex64(fnv1a64(read_text(path))); }

inline Json to_json(const Manifest& m) {
  return Json{{"stage", m.stage},
              {"config_hash", m.config_hash},
              {"tool_version", m.tool_version},
              {"inputs", m.inputs},
              {"artifacts", m.artifacts}};
}

inline Manifest read_manifest(const fs::path& dir) {
  const fs::path p = dir / "manifest.json";
  if (!fs::exists(p)) throw IoError("missing manifest: " + p.string());
  try {
    const Json j = Json::parse(read_text(p));
    Manifest m;
    m.stage = j.at("stage").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    return m;
  } catch (const Json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

inline void write_manifest(const fs::path& dir, const Manifest& m) {
  write_text(dir / "manifest.json", to_json(m).dump(2) + "\n");
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  // create_directories succeeds on an existing read-only directory; probe it.
  const fs::path probe = dir / ".lsre-write-probe";
  {
    std::ofstream f(probe);
    if (!f) throw IoError("directory is not writable (permission denied?): " + dir.string());
  }
  fs::remove(probe, ec);
}

// Refuses mismatched hashes unless forced; returns a warning when forced.
inline std::optional<std::string> check_hash(const std::string& what, const std::string& found,
                                             const std::string& expected, bool force) {
  if (found == expected) return std::nullopt;
  const std::string msg = what + " was produced with config hash " + found + ", current config hashes to " + expected;
  if (!force) throw ValidationError(msg + " (pass --force to override)");
  return msg;
}

// ---------------------------------------------------------------------------
// Data layout

inline fs::path episode_file(const fs::path& data, const std::string& set, Category c) {
  return data / set / (std::string(to_string(c)) + ".jsonl");
}

inline fs::path label_file(const fs::path& data, const std::string& set, Category c) {
  return data / "labels" / set / (std::string(to_string(c)) + ".jsonl");
}

inline fs::path normal_file(const fs::path& data) { return data / "normal" / "normal.jsonl"; }

inline std::vector<fs::path> expected_episode_files(const fs::path& data) {
  std::vector<fs::path> out;
  for (const auto& set : episode_sets())
    for (Category c : kAllCategories) out.push_back(episode_file(data, set, c));
  out.push_back(normal_file(data));
  return out;
}

inline void require_files(const std::vector<fs::path>& files, const std::string& hint) {
  std::vector<std::string> missing;
  for (const auto& f : files)
    if (!fs::exists(f)) missing.push_back(f.string());
  if (missing.empty()) return;
  std::string msg = "missing input files (" + hint + "):";
  for (const auto& m : missing) msg += "\n  " + m;
  throw IoError(msg);
}

inline int set_size(const RunConfig& cfg, const std::string& set) {
  if (set == "in_distribution") return cfg.dataset.in_dist_clips;
  if (set == "few_shot_train") return cfg.dataset.few_shot_train_clips;
  return cfg.dataset.few_shot_test_clips;
}

inline ScenarioSpec set_spec(const RunConfig& cfg, const std::string& set, Category c) {
  ScenarioSpec s = cfg.scenario;
  s.category = c;
  s.variant = set == "in_distribution" ? Variant::InDistribution : Variant::FewShot;
  return s;
}

// ---------------------------------------------------------------------------
// gen

inline Manifest cmd_gen(const RunConfig& cfg, const fs::path& out) {
  validate(cfg);
  Manifest m;
  m.stage = "gen";
  m.config_hash = config_hash(cfg);
  for (const auto& set : episode_sets()) {
    ensure_dir(out / set);
    for (Category c : kAllCategories) {
      const auto base = derive_seed(cfg.seed, "gen/" + set + "/" + std::string(to_string(c)));
      const auto eps = generate_dataset(set_spec(cfg, set, c), set_size(cfg, set), base);
      const fs::path p = episode_file(out, set, c);
      write_episodes(p, eps);
      m.artifacts[fs::relative(p, out).generic_string()] = file_digest(p);
    }
  }
  // Failure-free driving, cut into clips of the scenario length like every other set;
  // the final clip is shortened so the total is exactly normal_frames.
  ensure_dir(out / "normal");
  std::vector<Episode> normal;
  const auto base = derive_seed(cfg.seed, "gen/normal");
  for (int done = 0, i = 0; done < cfg.dataset.normal_frames; ++i) {
    ScenarioSpec ns = cfg.scenario;
    ns.length = std::min(cfg.scenario.length, cfg.dataset.normal_frames - done);
    normal.push_back(generate_normal_episode(ns, base + static_cast<std::uint64_t>(i)));
    done += ns.length;
  }
  const fs::path np = normal_file(out);
  write_episodes(np, normal);
  m.artifacts[fs::relative(np, out).generic_string()] = file_digest(np);
  write_manifest(out, m);
  return m;
}

// ---------------------------------------------------------------------------
// label

inline std::uint64_t oracle_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, "oracle"); }

inline Manifest cmd_label(const RunConfig& cfg, const fs::path& data) {
  validate(cfg);
  require_files(expected_episode_files(data), "run 'gen' first");
  Manifest m;
  m.stage = "label";
  m.config_hash = config_hash(cfg);
  for (const auto& set : episode_sets()) {
    ensure_dir(data / "labels" / set);
    for (Category c : kAllCategories) {
      const fs::path src = episode_file(data, set, c);
      std::vector<LabeledDataset> labs;
      for (const Episode& ep : read_episodes(src)) labs.push_back(label_episode(ep, cfg.oracle, oracle_seed(cfg)));
      const fs::path dst = label_file(data, set, c);
      write_text(dst, labels_to_jsonl(labs, cfg.oracle.key_stride));
      m.inputs[src.generic_string()] = file_digest(src);
      m.artifacts[fs::relative(dst, data / "labels").generic_string()] = file_digest(dst);
    }
  }
  write_manifest(data / "labels", m);
  return m;
}

// ---------------------------------------------------------------------------
// Model bundle

struct ModelBundle {
  WorldModel wm;
  MarginClassifier clf;          // in-distribution head
  MarginClassifier clf_fewshot;  // head trained on the few-shot clips
  MonitorConfig monitor;
  std::string config_hash;
};

inline MarginClassifier make_head(const RunConfig& cfg, const std::string& name) {
  const std::size_t latent = cfg.world_model.dh + cfg.world_model.dz;
  return MarginClassifier(name, latent, cfg.classifier.hidden, cfg.classifier.delta, derive_seed(cfg.seed, name));
}

inline Json dims_json(const WorldModelDims& d) {
  return Json{{"obs_dim", d.obs_dim}, {"dh", d.dh}, {"dz", d.dz}, {"hidden", d.hidden}, {"embed", d.embed},
              {"beta", d.beta}};
}

inline WorldModelDims dims_from_json(const Json& j) {
  WorldModelDims d;
  d.obs_dim = j.at("obs_dim").get<std::size_t>();
  d.dh = j.at("dh").get<std::size_t>();
  d.dz = j.at("dz").get<std::size_t>();
  d.hidden = j.at("hidden").get<std::size_t>();
  d.embed = j.at("embed").get<std::size_t>();
  d.beta = j.at("beta").get<double>();
  return d;
}

inline Json monitor_json(const MonitorConfig& m) {
  return Json{{"gamma", m.gamma},           {"horizon", m.horizon},       {"theta_low", m.theta_low},
              {"theta_high", m.theta_high}, {"value_gate", m.value_gate}, {"initial_flag", m.initial_flag}};
}

inline std::vector<const ParamBlock*> bundle_blocks(const ModelBundle& b) {
  auto out = b.wm.params();
  for (const auto* head : {&b.clf, &b.clf_fewshot}) {
    auto p = head->net.params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

inline void save_bundle(const ModelBundle& b, const RunConfig& cfg, const fs::path& path) {
  write_checkpoint(path.string(), bundle_blocks(b));
  const Json side{{"config_hash", b.config_hash},
                  {"world_model", dims_json(b.wm.dims())},
                  {"classifier",
                   {{"hidden", cfg.classifier.hidden},
                    {"delta", cfg.classifier.delta},
                    {"heads", {b.clf.net.name(), b.clf_fewshot.net.name()}}}},
                  {"monitor", monitor_json(b.monitor)}};
  write_text(path.string() + ".json", side.dump(2) + "\n");
}

inline ModelBundle load_bundle(const fs::path& path) {
  const fs::path side_path = path.string() + ".json";
  if (!fs::exists(path)) throw IoError("missing checkpoint: " + path.string());
  if (!fs::exists(side_path)) throw IoError("missing checkpoint sidecar: " + side_path.string());
  ModelBundle b;
  try {
    const Json side = Json::parse(read_text(side_path));
    b.config_hash = side.at("config_hash").get<std::string>();
    b.wm = WorldModel(dims_from_json(side.at("world_model")), 0);
    const auto& c = side.at("classifier");
    const auto heads = c.at("heads").get<std::vector<std::string>>();
    if (heads.size() != 2) throw FormatError(side_path.string() + ": expected two classifier heads");
    const std::size_t latent = b.wm.dims().dh + b.wm.dims().dz;
    const auto hidden = c.at("hidden").get<std::size_t>();
    const auto delta = c.at("delta").get<double>();
    b.clf = MarginClassifier(heads[0], latent, hidden, delta);
    b.clf_fewshot = MarginClassifier(heads[1], latent, hidden, delta);
    const auto& m = side.at("monitor");
    b.monitor.gamma = m.at("gamma").get<double>();
    b.monitor.horizon = m.at("horizon").get<int>();
    b.monitor.theta_low = m.at("theta_low").get<double>();
    b.monitor.theta_high = m.at("theta_high").get<double>();
    b.monitor.value_gate = m.at("value_gate").get<bool>();
    b.monitor.initial_flag = m.at("initial_flag").get<bool>();
  } catch (const Json::exception& e) {
    throw FormatError(side_path.string() + ": " + e.what());
  }
  const auto blocks = read_checkpoint(path.string());
  load_blocks(blocks, b.wm.params());
  load_blocks(blocks, b.clf.net.params());
  load_blocks(blocks, b.clf_fewshot.net.params());
  return b;
}

// ---------------------------------------------------------------------------
// train

struct TrainResult {
  Manifest manifest;
  bool world_model_reused = false;
  Json log;
};

// Hash of everything stage 1 depends on; a stored world model is reused only if it matches.
inline std::string world_model_hash(const RunConfig& cfg) {
  const Json j = to_json(cfg);
  const Json sub{{"seed", j.at("seed")}, {"scenario", j.at("scenario")}, {"dataset", j.at("dataset")},
                 {"world_model", j.at("world_model")}};
  return hex64(fnv1a64(sub.dump()));
}

inline void split_in_distribution(const RunConfig& cfg, const std::vector<Episode>& all, std::vector<Episode>* train,
                                  std::vector<Episode>* test) {
  const auto n_train = static_cast<std::size_t>(cfg.dataset.in_dist_clips - cfg.dataset.held_out_clips);
  require(all.size() == static_cast<std::size_t>(cfg.dataset.in_dist_clips),
          "in-distribution set has " + std::to_string(all.size()) + " clips, config expects " +
              std::to_string(cfg.dataset.in_dist_clips));
  if (train) train->insert(train->end(), all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  if (test) test->insert(test->end(), all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
}

inline Json classifier_log_json(const ClassifierLog& l) {
  return Json{{"epoch_loss", l.epoch_loss},
              {"safe_samples", l.safe_samples},
              {"unsafe_samples", l.unsafe_samples},
              {"warnings", l.warnings}};
}

inline TrainResult cmd_train(const RunConfig& cfg, const fs::path& data, const fs::path& out) {
  validate(cfg);
  require_files(expected_episode_files(data), "run 'gen' first");
  std::vector<fs::path> label_files;
  for (const auto& set : {std::string("in_distribution"), std::string("few_shot_train")})
    for (Category c : kAllCategories) label_files.push_back(label_file(data, set, c));
  bool labels_present = true;
  for (const auto& f : label_files) labels_present = labels_present && fs::exists(f);
  if (!labels_present) cmd_label(cfg, data);
  ensure_dir(out);

  TrainResult res;
  res.manifest.stage = "train";
  res.manifest.config_hash = config_hash(cfg);

  std::vector<Episode> id_train, fs_train;
  std::vector<LabeledDataset> id_labels, fs_labels;
  for (Category c : kAllCategories) {
    const auto id_eps = read_episodes(episode_file(data, "in_distribution", c));
    const auto id_labs = read_labels(label_file(data, "in_distribution", c));
    require(id_labs.size() == id_eps.size(), "label file does not match " + episode_file(data, "in_distribution", c).string());
    split_in_distribution(cfg, id_eps, &id_train, nullptr);
    const auto n_train = static_cast<std::ptrdiff_t>(cfg.dataset.in_dist_clips - cfg.dataset.held_out_clips);
    id_labels.insert(id_labels.end(), id_labs.begin(), id_labs.begin() + n_train);
    const auto f_eps = read_episodes(episode_file(data, "few_shot_train", c));
    const auto f_labs = read_labels(label_file(data, "few_shot_train", c));
    require(f_labs.size() == f_eps.size(), "label file does not match " + episode_file(data, "few_shot_train", c).string());
    fs_train.insert(fs_train.end(), f_eps.begin(), f_eps.end());
    fs_labels.insert(fs_labels.end(), f_labs.begin(), f_labs.end());
  }
  for (const auto& f : expected_episode_files(data)) res.manifest.inputs[f.generic_string()] = file_digest(f);
  for (const auto& f : label_files) res.manifest.inputs[f.generic_string()] = file_digest(f);

  // Stage 1: world model on every training clip (in-distribution train + few-shot train).
  ModelBundle b;
  b.config_hash = res.manifest.config_hash;
  b.monitor = cfg.monitor;
  b.wm = WorldModel(cfg.world_model, derive_seed(cfg.seed, "world_model"));
  const fs::path wm_path = out / "world_model.ckpt";
  const fs::path wm_side = out / "world_model.ckpt.json";
  const std::string wm_hash = world_model_hash(cfg);
  Json wm_log;
  if (fs::exists(wm_path) && fs::exists(wm_side) &&
      Json::parse(read_text(wm_side)).value("stage_hash", std::string()) == wm_hash) {
    load_blocks(read_checkpoint(wm_path.string()), b.wm.params());
    res.world_model_reused = true;
    wm_log = Json{{"reused", true}};
  } else {
    std::vector<Episode> wm_data = id_train;
    wm_data.insert(wm_data.end(), fs_train.begin(), fs_train.end());
    WorldModelTrainOptions opt = cfg.world_model_train;
    opt.seed = derive_seed(cfg.seed, "world_model.train");
    const WorldModelLog log = train_world_model(b.wm, wm_data, opt);
    write_checkpoint(wm_path.string(), std::as_const(b.wm).params());
    write_text(wm_side, Json{{"stage_hash", wm_hash}, {"world_model", dims_json(b.wm.dims())}}.dump(2) + "\n");
    wm_log = Json{{"reused", false}, {"epoch_loss", log.epoch_loss}};
  }

  // Stage 2: margin heads under the frozen world model.
  ClassifierTrainOptions copt = cfg.classifier.train;
  b.clf = make_head(cfg, "clf");
  copt.seed = derive_seed(cfg.seed, "clf.train");
  const ClassifierLog id_log = train_classifier(b.clf, b.wm, id_train, id_labels, copt);
  b.clf_fewshot = make_head(cfg, "clf_fewshot");
  copt.seed = derive_seed(cfg.seed, "clf_fewshot.train");
  const ClassifierLog fs_log = train_classifier(b.clf_fewshot, b.wm, fs_train, fs_labels, copt);

  const fs::path ckpt = out / "lsre.ckpt";
  save_bundle(b, cfg, ckpt);
  res.log = Json{{"config_hash", res.manifest.config_hash},
                 {"world_model", wm_log},
                 {"classifier", classifier_log_json(id_log)},
                 {"classifier_fewshot", classifier_log_json(fs_log)}};
  write_text(out / "train_log.json", res.log.dump(2) + "\n");
  for (const fs::path& p : {wm_path, wm_side, ckpt, fs::path(ckpt.string() + ".json"), out / "train_log.json"})
    res.manifest.artifacts[p.filename().string()] = file_digest(p);
  write_manifest(out, res.manifest);
  return res;
}


// ---------------------------------------------------------------------------
// monitor

inline const MarginClassifier& select_head(const ModelBundle& b, const std::string& head) {
  if (head == "in_distribution" || head == b.clf.net.name()) return b.clf;
  if (head == "few_shot" || head == b.clf_fewshot.net.name()) return b.clf_fewshot;
  throw ValidationError("unknown classifier head '" + head + "' (expected in_distribution or few_shot)");
}

inline std::string safe_file_stem(const std::string& id) {
  std::string s = id;
  for (char& ch : s)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) ch = '_';
  return s;
}

// Streams every episode of `episodes_path` through the monitor and writes one CSV
// (and with `plot` one SVG) per episode. Returns the number of episodes.
inline std::size_t cmd_monitor(const ModelBundle& b, const MonitorConfig& cfg, const fs::path& ckpt,
                               const fs::path& episodes_path, const fs::path& out, bool plot,
                               const std::string& head = "in_distribution") {
  cfg.validate();
  const MarginClassifier& clf = select_head(b, head);
  const auto episodes = read_episodes(episodes_path);
  require(!episodes.empty(), "no episodes in " + episodes_path.string());
  for (const Episode& ep : episodes) {
    require(ep.spec.feature_dim == static_cast<int>(b.wm.dims().obs_dim),
            "episode '" + ep.id + "' has " + std::to_string(ep.spec.feature_dim) +
                " features per frame but the checkpoint expects " + std::to_string(b.wm.dims().obs_dim));
  }
  ensure_dir(out);
  Manifest m;
  m.stage = "monitor";
  m.config_hash = b.config_hash;
  m.inputs[ckpt.generic_string()] = file_digest(ckpt);
  m.inputs[episodes_path.generic_string()] = file_digest(episodes_path);
  for (const Episode& ep : episodes) {
    const RiskTrace trace = run_monitor(b.wm, clf, cfg, ep);
    const std::string stem = safe_file_stem(ep.id);
    write_text(out / (stem + ".csv"), trace_to_csv(trace));
    m.artifacts[stem + ".csv"] = file_digest(out / (stem + ".csv"));
    if (plot) {
      write_text(out / (stem + ".svg"), trace_to_svg(trace, ep.events, ep.id));
      m.artifacts[stem + ".svg"] = file_digest(out / (stem + ".svg"));
    }
  }
  write_manifest(out, m);
  return episodes.size();
}

// ---------------------------------------------------------------------------
// eval

// Re-filters stored margins: hysteresis, optionally forced to 1 where the value is negative.
inline std::vector<int> filter_flags(std::span<const double> margins, std::span<const double> values,
                                     const MonitorConfig& cfg) {
  std::vector<int> out;
  out.reserve(margins.size());
  int prev = cfg.initial_flag ? 1 : 0;
  for (std::size_t t = 0; t < margins.size(); ++t) {
    int f = hysteresis_step(margins[t], prev, cfg);
    if (!values.empty() && values[t] < 0.0) f = 1;
    prev = f;
    out.push_back(f);
  }
  return out;
}

inline const std::vector<std::string>& eval_methods() {
  static const std::vector<std::string> m = {"always_safe", "oracle_replay", "lsre", "lsre_gated", "lsre_k0"};
  return m;
}

// Flags of every method for one episode.
inline std::map<std::string, std::vector<int>> score_episode(const WorldModel& wm, const MarginClassifier& clf,
                                                             const MonitorConfig& cfg, const Episode& ep,
                                                             const LabeledDataset* oracle) {
  MonitorConfig gated = cfg;
  gated.value_gate = true;
  const RiskTrace trace = run_monitor(wm, clf, gated, ep);
  std::vector<double> margins;
  margins.reserve(trace.size());
  std::map<std::string, std::vector<int>> flags;
  for (const auto& r : trace) {
    margins.push_back(r.margin);
    flags["lsre_gated"].push_back(r.flag);
  }
  flags["always_safe"].assign(trace.size(), 0);
  flags["lsre"] = filter_flags(margins, {}, cfg);
  flags["lsre_k0"] = filter_flags(margins, margins, cfg);  // K = 0: V reduces to the margin itself
  if (oracle) {
    auto& o = flags["oracle_replay"];
    for (double soft : oracle->dense) o.push_back(soft >= 0.5 ? 1 : 0);
  }
  return flags;
}

inline Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json to_json(const MetricsReport& r) {
  return Json{{"name", r.name},
              {"acc", r.acc},
              {"rec", opt_json(r.rec)},
              {"far", opt_json(r.far)},
              {"event_recall", opt_json(r.event_recall)},
              {"mean_lead_ms", opt_json(r.mean_lead_ms)},
              {"latency_median_ms", opt_json(r.latency_median_ms)},
              {"latency_p95_ms", opt_json(r.latency_p95_ms)},
              {"counts", {{"tp", r.counts.tp}, {"tn", r.counts.tn}, {"fp", r.counts.fp}, {"fn", r.counts.fn}}}};
}

inline std::optional<double> far_of(const ConfusionCounts& c) {
  if (c.fp + c.tn == 0) return std::nullopt;
  return static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
}

inline MetricsReport frame_row(const std::string& name, const ConfusionCounts& c, const EventSummary& ev) {
  const FrameMetrics fm = metrics_from_counts(c);
  MetricsReport r;
  r.name = name;
  r.acc = fm.acc;
  r.rec = fm.rec;
  r.far = far_of(c);
  r.counts = c;
  if (ev.events > 0) {
    r.event_recall = ev.recall;
    r.mean_lead_ms = ev.mean_lead_ms;
  }
  return r;
}

inline std::string format_table(const std::vector<MetricsReport>& rows) {
  std::size_t w = 4;
  for (const auto& r : rows) w = std::max(w, r.name.size());
  auto cell = [](const std::optional<double>& v, const char* fmt) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, fmt, *v);
    return std::string(buf);
  };
  auto line = [&](const std::string& name, const std::string& a, const std::string& b, const std::string& c,
                  const std::string& d, const std::string& e) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-*s  %7s  %7s  %7s  %7s  %9s\n", static_cast<int>(w), name.c_str(), a.c_str(),
                  b.c_str(), c.c_str(), d.c_str(), e.c_str());
    return std::string(buf);
  };
  std::string out = line("name", "acc", "rec", "far", "ev_rec", "lead_ms");
  out += std::string(w + 48, '-') + "\n";
  for (const auto& r : rows) {
    out += line(r.name, cell(r.acc, "%.4f"), cell(r.rec, "%.4f"), cell(r.far, "%.4f"), cell(r.event_recall, "%.4f"),
                cell(r.mean_lead_ms, "%.1f"));
  }
  return out;
}

struct EvalResult {
  std::vector<MetricsReport> rows;
  Json report;
  std::string table;
  std::vector<std::string> warnings;
};

inline EvalResult evaluate(const ModelBundle& b, const RunConfig& cfg, const fs::path& data) {
  EvalResult res;
  const int lookback = cfg.eval.lookback;
  struct Setting {
    std::string name, episode_set;
    const MarginClassifier* clf;
    bool held_out_only;
  };
  const std::vector<Setting> settings = {{"in_distribution", "in_distribution", &b.clf, true},
                                         {"few_shot", "few_shot_test", &b.clf_fewshot, false}};
  for (const Setting& s : settings) {
    std::map<std::string, std::vector<std::pair<std::string, ConfusionCounts>>> per_method;
    std::map<std::string, std::vector<EventResult>> pooled_events;
    std::map<std::string, std::vector<EventSummary>> cat_events;
    std::size_t n_eps = 0;
    for (Category c : kAllCategories) {
      std::vector<Episode> eps = read_episodes(episode_file(data, s.episode_set, c));
      std::vector<LabeledDataset> labs = read_labels(label_file(data, s.episode_set, c));
      require(labs.size() == eps.size(), "label file does not match " + episode_file(data, s.episode_set, c).string());
      if (s.held_out_only) {
        std::vector<Episode> test;
        split_in_distribution(cfg, eps, nullptr, &test);
        labs.erase(labs.begin(), labs.end() - static_cast<std::ptrdiff_t>(test.size()));
        eps = std::move(test);
      }
      n_eps += eps.size();
      std::map<std::string, ConfusionCounts> counts;
      std::map<std::string, std::vector<EventResult>> events;
      for (std::size_t i = 0; i < eps.size(); ++i) {
        const Episode& ep = eps[i];
        require(labs[i].episode_id == ep.id, "label set '" + labs[i].episode_id + "' does not match '" + ep.id + "'");
        std::vector<int> gt;
        for (const Frame& f : ep.frames) gt.push_back(f.gt_unsafe ? 1 : 0);
        for (const auto& [method, flags] : score_episode(b.wm, *s.clf, cfg.monitor, ep, &labs[i])) {
          counts[method] += confusion(flags, gt);
          const auto ev = event_metrics(flags, ep.events, lookback);
          events[method].insert(events[method].end(), ev.begin(), ev.end());
        }
      }
      const std::string cat(to_string(c));
      for (const auto& method : eval_methods()) {
        const EventSummary es = summarize_events(events[method]);
        res.rows.push_back(frame_row(s.name + "/" + cat + "/" + method, counts[method], es));
        per_method[method].emplace_back(cat, counts[method]);
        pooled_events[method].insert(pooled_events[method].end(), events[method].begin(), events[method].end());
        cat_events[method].push_back(es);
      }
    }
    require(n_eps > 0, "empty test set for " + s.name);
    for (const auto& method : eval_methods()) {
      const GroupedMetrics g = group_metrics(per_method[method]);
      ConfusionCounts pooled;
      for (const auto& [cat, c] : per_method[method]) pooled += c;
      res.rows.push_back(frame_row(s.name + "/micro/" + method, pooled, summarize_events(pooled_events[method])));

      MetricsReport macro;
      macro.name = s.name + "/macro/" + method;
      macro.acc = g.macro_acc;
      macro.rec = g.macro_rec;
      macro.counts = pooled;
      double far_sum = 0.0, rec_sum = 0.0, lead_sum = 0.0;
      std::size_t far_n = 0, ev_n = 0, lead_n = 0;
      for (std::size_t k = 0; k < per_method[method].size(); ++k) {
        if (const auto f = far_of(per_method[method][k].second)) {
          far_sum += *f;
          ++far_n;
        }
        const EventSummary& es = cat_events[method][k];
        if (es.events > 0) {
          rec_sum += es.recall;
          ++ev_n;
        }
        if (es.mean_lead_ms) {
          lead_sum += *es.mean_lead_ms;
          ++lead_n;
        }
      }
      if (far_n > 0) macro.far = far_sum / static_cast<double>(far_n);
      if (ev_n > 0) macro.event_recall = rec_sum / static_cast<double>(ev_n);
      if (lead_n > 0) macro.mean_lead_ms = lead_sum / static_cast<double>(lead_n);
      res.rows.push_back(macro);
    }
  }

  // False alarms on failure-free driving, in-distribution head, pooled over clips.
  std::map<std::string, ConfusionCounts> normal_counts;
  const auto normal = read_episodes(normal_file(data));
  require(!normal.empty(), "empty normal-driving set");
  for (const Episode& ep : normal) {
    MonitorConfig gated = cfg.monitor;
    gated.value_gate = true;
    const RiskTrace trace = run_monitor(b.wm, b.clf, gated, ep);
    std::vector<double> margins;
    std::vector<int> gated_flags, threshold;
    for (const auto& r : trace) {
      margins.push_back(r.margin);
      gated_flags.push_back(r.flag);
      threshold.push_back(r.margin < 0.0 ? 1 : 0);
    }
    const std::vector<int> gt(trace.size(), 0);
    normal_counts["threshold"] += confusion(threshold, gt);
    normal_counts["lsre"] += confusion(filter_flags(margins, {}, cfg.monitor), gt);
    normal_counts["lsre_gated"] += confusion(gated_flags, gt);
  }
  for (const char* name : {"threshold", "lsre", "lsre_gated"})
    res.rows.push_back(frame_row(std::string("normal/") + name, normal_counts[name], {}));

  Json rows = Json::array();
  for (const auto& r : res.rows) rows.push_back(to_json(r));
  res.report = Json{{"tool_version", kToolVersion},
                    {"config_hash", config_hash(cfg)},
                    {"checkpoint_config_hash", b.config_hash},
                    {"event_lookback_frames", lookback},
                    {"reports", rows}};
  res.table = format_table(res.rows);
  return res;
}

inline EvalResult cmd_eval(const RunConfig& cfg, const fs::path& ckpt, const fs::path& data, const fs::path& out,
                           bool force) {
  validate(cfg);
  std::vector<fs::path> needed = expected_episode_files(data);
  for (const std::string set : {"in_distribution", "few_shot_test"})
    for (Category c : kAllCategories) needed.push_back(label_file(data, set, c));
  require_files(needed, "run 'gen' and 'label' first");
  const ModelBundle b = load_bundle(ckpt);
  const std::string hash = config_hash(cfg);
  std::vector<std::string> warnings;
  for (const auto& [what, found] : {std::pair<std::string, std::string>{"checkpoint " + ckpt.string(), b.config_hash},
                                    {"dataset " + data.string(), read_manifest(data).config_hash},
                                    {"labels " + (data / "labels").string(), read_manifest(data / "labels").config_hash}}) {
    if (auto w = check_hash(what, found, hash, force)) warnings.push_back(*w);
  }
  EvalResult res = evaluate(b, cfg, data);
  res.warnings = warnings;
  ensure_dir(out);
  write_text(out / "metrics.json", res.report.dump(2) + "\n");
  write_text(out / "metrics.txt", res.table);
  Manifest m;
  m.stage = "eval";
  m.config_hash = hash;
  m.inputs[ckpt.generic_string()] = file_digest(ckpt);
  for (const auto& f : needed) m.inputs[f.generic_string()] = file_digest(f);
  for (const char* f : {"metrics.json", "metrics.txt"}) m.artifacts[f] = file_digest(out / f);
  write_manifest(out, m);
  return res;
}

// ---------------------------------------------------------------------------
// bench

inline Json host_description() {
  char name[256] = {0};
  if (gethostname(name, sizeof name - 1) != 0) name[0] = '\0';
  std::string compiler = "unknown";
#if defined(__clang__)
  compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  compiler = "gcc " __VERSION__;
#endif
#ifdef NDEBUG
  const char* build = "release";
#else
  const char* build = "debug";
#endif
  return Json{{"hostname", name},
              {"hardware_threads", std::thread::hardware_concurrency()},
              {"compiler", compiler},
              {"build", build}};
}

struct BenchResult {
  LatencyStats stats;
  Json report;
};

// Times MonitorSession::step on a generated in-distribution stream.
inline BenchResult run_bench(const WorldModel& wm, const MarginClassifier& clf, const MonitorConfig& cfg,
                             const ScenarioSpec& spec, std::uint64_t seed, int n, int warmup) {
  const Episode ep = generate_episode(spec, derive_seed(seed, "bench"));
  MonitorSession session(wm, clf, cfg);
  const auto& frames = ep.frames;
  double sink = 0.0;
  BenchResult res;
  res.stats = latency_bench(
      [&](std::size_t i) {
        const std::size_t k = i % frames.size();
        if (k == 0) session.reset();
        sink += session.step(frames[k]).value;
      },
      warmup, n);
  const auto& d = wm.dims();
  res.report = Json{{"n", n},
                    {"warmup", warmup},
                    {"median_ms", res.stats.median_ms},
                    {"p95_ms", res.stats.p95_ms},
                    {"dims",
                     {{"obs_dim", d.obs_dim},
                      {"dh", d.dh},
                      {"dz", d.dz},
                      {"hidden", d.hidden},
                      {"embed", d.embed},
                      {"horizon", cfg.horizon}}},
                    {"host", host_description()},
                    {"outputs_finite", std::isfinite(sink)}};
  return res;
}

inline BenchResult cmd_bench(const RunConfig& cfg, const fs::path& ckpt, const fs::path& out, int n, int warmup) {
  validate(cfg);
  require(n >= 20, "bench: n must be >= 20");
  require(warmup >= 0, "bench: warmup must be >= 0");
  const ModelBundle b = load_bundle(ckpt);
  ScenarioSpec spec = cfg.scenario;
  spec.feature_dim = static_cast<int>(b.wm.dims().obs_dim);
  BenchResult res = run_bench(b.wm, b.clf, cfg.monitor, spec, cfg.seed, n, warmup);
  ensure_dir(out);
  write_text(out / "bench.json", res.report.dump(2) + "\n");
  return res;
}

}  // namespace lsre
