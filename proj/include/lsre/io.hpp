#pragma once

// File formats.
//
// Episodes (JSON Lines), one or more episodes per file, each as
//   {"id", "seed", "spec"}                                   header
//   {"t", "features", "ego", "action", "gt_unsafe"}          one per frame
//   {"category", "onset", "end"}                             one per event
//
// Labels (JSON Lines), per episode
//   {"episode_id", "prompt_token", "length", "key_stride"}   header
//   {"t", "soft", "hard", "delta_motion", "prev_hard"}       one per key frame
//
// Risk traces are CSV with columns t,margin,value,flag,risk.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsre/error.hpp"
#include "lsre/risk_head.hpp"
#include "lsre/scenario.hpp"
#include "lsre/supervisor.hpp"

namespace lsre {

using Json = nlohmann::json;
namespace fs = std::filesystem;

inline Json to_json(const ScenarioSpec& s) {
  return Json{{"category", to_string(s.category)},  {"variant", to_string(s.variant)},
              {"length", s.length},                 {"feature_dim", s.feature_dim},
              {"ramp_start", s.ramp_start},         {"ramp_slope", s.ramp_slope},
              {"noise_sigma", s.noise_sigma},       {"event_duration", s.event_duration},
              {"accel_bound", s.accel_bound},       {"steer_bound", s.steer_bound}};
}

inline ScenarioSpec spec_from_json(const Json& j) {
  ScenarioSpec s;
  s.category = category_from_string(j.at("category").get<std::string>());
  s.variant = variant_from_string(j.at("variant").get<std::string>());
  s.length = j.at("length").get<int>();
  s.feature_dim = j.at("feature_dim").get<int>();
  s.ramp_start = j.at("ramp_start").get<int>();
  s.ramp_slope = j.at("ramp_slope").get<double>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.event_duration = j.at("event_duration").get<int>();
  s.accel_bound = j.at("accel_bound").get<double>();
  s.steer_bound = j.at("steer_bound").get<double>();
  return s;
}

inline Json to_json(const EgoState& e) {
  return Json{{"x", e.x}, {"y", e.y}, {"speed", e.speed}, {"heading", e.heading}};
}

inline EgoState ego_from_json(const Json& j) {
  return {j.at("x").get<double>(), j.at("y").get<double>(), j.at("speed").get<double>(),
          j.at("heading").get<double>()};
}

inline void write_episode(std::ostream& out, const Episode& ep) {
  out << Json{{"id", ep.id}, {"seed", ep.seed}, {"spec", to_json(ep.spec)}}.dump() << '\n';
  for (const Frame& f : ep.frames) {
    out << Json{{"t", f.t},
                {"features", f.features},
                {"ego", to_json(f.ego)},
                {"action", {{"accel", f.action.accel}, {"steer", f.action.steer}}},
                {"gt_unsafe", f.gt_unsafe}}
               .dump()
        << '\n';
  }
  for (const SemanticEvent& ev : ep.events) {
    out << Json{{"category", to_string(ev.category)}, {"onset", ev.onset}, {"end", ev.end}}.dump() << '\n';
  }
}

inline std::string episodes_to_jsonl(const std::vector<Episode>& eps) {
  std::ostringstream out;
  for (const auto& ep : eps) write_episode(out, ep);
  return out.str();
}

inline std::vector<Episode> parse_episodes(std::istream& in, const std::string& source) {
  std::vector<Episode> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    try {
      if (j.contains("id")) {
        Episode ep;
        ep.id = j.at("id").get<std::string>();
        ep.seed = j.at("seed").get<std::uint64_t>();
        ep.spec = spec_from_json(j.at("spec"));
        out.push_back(std::move(ep));
        continue;
      }
      if (out.empty()) throw FormatError(where + ": record before any episode header");
      Episode& ep = out.back();
      if (j.contains("t")) {
        Frame f;
        f.t = j.at("t").get<int>();
        f.features = j.at("features").get<Vec>();
        f.ego = ego_from_json(j.at("ego"));
        f.action = {j.at("action").at("accel").get<double>(), j.at("action").at("steer").get<double>()};
        f.gt_unsafe = j.at("gt_unsafe").get<bool>();
        if (f.t != static_cast<int>(ep.frames.size())) throw FormatError(where + ": frame index out of sequence");
        ep.frames.push_back(std::move(f));
      } else if (j.contains("onset")) {
        ep.events.push_back({category_from_string(j.at("category").get<std::string>()), j.at("onset").get<int>(),
                             j.at("end").get<int>()});
      } else {
        throw FormatError(where + ": unrecognized record");
      }
    } catch (const Json::exception& e) {
      throw FormatError(where + ": " + e.what());
    } catch (const ValidationError& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  for (const Episode& ep : out) {
    if (static_cast<int>(ep.frames.size()) != ep.spec.length) {
      throw FormatError(source + ": episode '" + ep.id + "' has " + std::to_string(ep.frames.size()) +
                        " frames, header says " + std::to_string(ep.spec.length));
    }
  }
  return out;
}

inline std::vector<Episode> read_episodes(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open episode file: " + path.string());
  return parse_episodes(in, path.string());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_episodes(const fs::path& path, const std::vector<Episode>& eps) {
  write_text(path, episodes_to_jsonl(eps));
}

inline void write_labels(std::ostream& out, const LabeledDataset& lab, int key_stride) {
  out << Json{{"episode_id", lab.episode_id},
              {"prompt_token", lab.prompt_token},
              {"length", lab.dense.size()},
              {"key_stride", key_stride}}
             .dump()
      << '\n';
  for (const KeyFrameLabel& k : lab.key_frames) {
    Json rec{{"t", k.t}, {"soft", k.soft}, {"hard", k.hard}, {"delta_motion", to_json(k.delta_motion)}};
    rec["prev_hard"] = k.prev_hard ? Json(*k.prev_hard) : Json(nullptr);
    out << rec.dump() << '\n';
  }
}

inline std::string labels_to_jsonl(const std::vector<LabeledDataset>& labs, int key_stride) {
  std::ostringstream out;
  for (const auto& lab : labs) write_labels(out, lab, key_stride);
  return out.str();
}

inline std::vector<LabeledDataset> parse_labels(std::istream& in, const std::string& source) {
  struct Pending {
    LabeledDataset lab;
    std::size_t length = 0;
    int stride = 1;
  };
  std::vector<Pending> acc;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    try {
      const Json j = Json::parse(line);
      if (j.contains("episode_id")) {
        Pending p;
        p.lab.episode_id = j.at("episode_id").get<std::string>();
        p.lab.prompt_token = j.at("prompt_token").get<std::string>();
        p.length = j.at("length").get<std::size_t>();
        p.stride = j.at("key_stride").get<int>();
        if (p.stride < 1) throw FormatError(where + ": key_stride must be >= 1");
        acc.push_back(std::move(p));
        continue;
      }
      if (acc.empty()) throw FormatError(where + ": label record before any header");
      KeyFrameLabel k;
      k.t = j.at("t").get<int>();
      k.soft = j.at("soft").get<double>();
      k.hard = j.at("hard").get<bool>();
      k.delta_motion = ego_from_json(j.at("delta_motion"));
      if (!j.at("prev_hard").is_null()) k.prev_hard = j.at("prev_hard").get<bool>();
      acc.back().lab.key_frames.push_back(k);
    } catch (const Json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  std::vector<LabeledDataset> out;
  for (auto& p : acc) {
    p.lab.dense.assign(p.length, 0.0);
    for (std::size_t i = 0; i < p.lab.key_frames.size(); ++i) {
      const auto& k = p.lab.key_frames[i];
      const std::size_t start = static_cast<std::size_t>(k.t);
      const std::size_t stop = std::min(p.length, start + static_cast<std::size_t>(p.stride));
      for (std::size_t t = start; t < stop; ++t) p.lab.dense[t] = k.soft;
    }
    out.push_back(std::move(p.lab));
  }
  return out;
}

inline std::vector<LabeledDataset> read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label file: " + path.string());
  return parse_labels(in, path.string());
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trace_to_csv(const RiskTrace& trace) {
  std::string out = "t,margin,value,flag,risk\n";
  for (const auto& r : trace) {
    out += std::to_string(r.t) + "," + format_double(r.margin) + "," + format_double(r.value) + "," +
           std::to_string(r.flag) + "," + format_double(r.risk) + "\n";
  }
  return out;
}

// V_latent over time with the zero line, the annotated onset and the first flagged frame.
inline std::string trace_to_svg(const RiskTrace& trace, const std::vector<SemanticEvent>& events,
                                const std::string& title) {
  const double width = 800, height = 300, pad = 40;
  double vmin = 0.0, vmax = 0.0;
  for (const auto& r : trace) {
    vmin = std::min(vmin, r.value);
    vmax = std::max(vmax, r.value);
  }
  if (vmax - vmin < 1e-9) vmax = vmin + 1.0;
  const double n = std::max<double>(1.0, static_cast<double>(trace.size()) - 1.0);
  auto px = [&](double t) { return pad + (width - 2 * pad) * t / n; };
  auto py = [&](double v) { return height - pad - (height - 2 * pad) * (v - vmin) / (vmax - vmin); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
                    "\">\n";
  svg += "<text x=\"" + num(pad) + "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" + title + "</text>\n";
  svg += "<line x1=\"" + num(pad) + "\" y1=\"" + num(py(0)) + "\" x2=\"" + num(width - pad) + "\" y2=\"" + num(py(0)) +
         "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  svg += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < trace.size(); ++i) svg += num(px(static_cast<double>(i))) + "," + num(py(trace[i].value)) + " ";
  svg += "\"/>\n";
  for (const auto& ev : events) {
    svg += "<line x1=\"" + num(px(ev.onset)) + "\" y1=\"" + num(pad) + "\" x2=\"" + num(px(ev.onset)) + "\" y2=\"" +
           num(height - pad) + "\" stroke=\"red\"/>\n";
    svg += "<text x=\"" + num(px(ev.onset) + 4) + "\" y=\"" + num(pad + 12) +
           "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"red\">onset</text>\n";
  }
  for (const auto& r : trace) {
    if (r.flag == 0) continue;
    svg += "<line x1=\"" + num(px(r.t)) + "\" y1=\"" + num(pad) + "\" x2=\"" + num(px(r.t)) + "\" y2=\"" +
           num(height - pad) + "\" stroke=\"orange\" stroke-dasharray=\"2 2\"/>\n";
    svg += "<text x=\"" + num(px(r.t) + 4) + "\" y=\"" + num(pad + 26) +
           "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"orange\">detection</text>\n";
    break;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace lsre
