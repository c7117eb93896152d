#pragma once

// Frame-level, event-level, false-alarm and latency statistics.
// Positive class = unsafe (flag 1).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lsre/error.hpp"
#include "lsre/risk_head.hpp"
#include "lsre/scenario.hpp"

namespace lsre {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }

  bool operator==(const ConfusionCounts&) const = default;
};

struct FrameMetrics {
  double acc = 0.0;
  std::optional<double> rec;  // absent when there are no positives
  ConfusionCounts counts;
};

inline FrameMetrics metrics_from_counts(const ConfusionCounts& c) {
  require(c.total() > 0, "metrics: no scored frames");
  FrameMetrics m;
  m.counts = c;
  m.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (c.tp + c.fn > 0) m.rec = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return m;
}

inline ConfusionCounts confusion(std::span<const int> flags, std::span<const int> gt) {
  require(flags.size() == gt.size(), "frame_metrics: flags and ground truth differ in length (" +
                                         std::to_string(flags.size()) + " vs " + std::to_string(gt.size()) + ")");
  ConfusionCounts c;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    const bool f = flags[i] != 0;
    const bool g = gt[i] != 0;
    if (f && g) ++c.tp;
    else if (!f && !g) ++c.tn;
    else if (f) ++c.fp;
    else ++c.fn;
  }
  return c;
}

inline FrameMetrics frame_metrics(std::span<const int> flags, std::span<const int> gt) {
  require(!flags.empty(), "frame_metrics: empty sequence");
  return metrics_from_counts(confusion(flags, gt));
}

// Fraction of failure-free frames flagged unsafe: FP / (FP + TN) with all ground truth safe.
inline double far(std::span<const int> flags) {
  require(!flags.empty(), "far: empty input");
  const auto raised = std::count_if(flags.begin(), flags.end(), [](int f) { return f != 0; });
  return static_cast<double>(raised) / static_cast<double>(flags.size());
}

struct EventResult {
  SemanticEvent event;
  bool detected = false;
  std::optional<int> first_flag;
  std::optional<double> lead_ms;  // positive = warned before onset
};

// An event counts as detected if any flag is raised in [onset - lookback, end].
inline std::vector<EventResult> event_metrics(std::span<const int> flags, std::span<const SemanticEvent> events,
                                              int lookback) {
  require(lookback >= 0, "event_metrics: lookback must be >= 0");
  std::vector<SemanticEvent> sorted(events.begin(), events.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.onset < b.onset; });
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    require(sorted[i].onset <= sorted[i].end, "event_metrics: event ends before its onset");
    if (i > 0) require(sorted[i].onset > sorted[i - 1].end, "event_metrics: events overlap");
  }
  std::vector<EventResult> out;
  for (const SemanticEvent& ev : events) {
    EventResult r;
    r.event = ev;
    const int lo = std::max(0, ev.onset - lookback);
    const int hi = std::min(ev.end, static_cast<int>(flags.size()) - 1);
    for (int t = lo; t <= hi; ++t) {
      if (flags[static_cast<std::size_t>(t)] != 0) {
        r.detected = true;
        r.first_flag = t;
        r.lead_ms = (ev.onset - t) * kMsPerFrame;
        break;
      }
    }
    out.push_back(r);
  }
  return out;
}

inline std::vector<EventResult> event_metrics(const RiskTrace& trace, std::span<const SemanticEvent> events,
                                              int lookback) {
  std::vector<int> flags;
  flags.reserve(trace.size());
  for (const auto& r : trace) flags.push_back(r.flag);
  return event_metrics(flags, events, lookback);
}

struct EventSummary {
  std::size_t events = 0;
  std::size_t detected = 0;
  double recall = 0.0;
  std::optional<double> mean_lead_ms;
};

inline EventSummary summarize_events(std::span<const EventResult> results) {
  EventSummary s;
  s.events = results.size();
  double lead = 0.0;
  for (const auto& r : results) {
    if (!r.detected) continue;
    ++s.detected;
    lead += *r.lead_ms;
  }
  if (s.events > 0) s.recall = static_cast<double>(s.detected) / static_cast<double>(s.events);
  if (s.detected > 0) s.mean_lead_ms = lead / static_cast<double>(s.detected);
  return s;
}

// Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample (1-based), p in (0, 100].
inline double nearest_rank_percentile(std::vector<double> samples, double p) {
  require(!samples.empty(), "percentile: no samples");
  require(p > 0.0 && p <= 100.0, "percentile: p must lie in (0, 100]");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  // p * n first: p / 100 is inexact (0.07 * 100 > 7) and would bump the rank.
  auto rank = static_cast<std::size_t>(std::ceil(p * n / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, samples.size());
  return samples[rank - 1];
}

struct LatencyStats {
  double median_ms = 0.0;
  double p95_ms = 0.0;
  std::vector<double> samples_ms;
};

// Runs `warmup` untimed calls, then `n` timed calls on the calling thread.
inline LatencyStats latency_bench(const std::function<void(std::size_t)>& step, int warmup, int n) {
  require(n >= 20, "latency_bench: need at least 20 timed iterations");
  require(warmup >= 0, "latency_bench: warmup must be >= 0");
  for (int i = 0; i < warmup; ++i) step(static_cast<std::size_t>(i));
  LatencyStats out;
  out.samples_ms.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    step(static_cast<std::size_t>(warmup + i));
    const auto t1 = std::chrono::steady_clock::now();
    out.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  out.median_ms = nearest_rank_percentile(out.samples_ms, 50.0);
  out.p95_ms = nearest_rank_percentile(out.samples_ms, 95.0);
  return out;
}

struct MetricsReport {
  std::string name;
  double acc = 0.0;
  std::optional<double> rec;
  std::optional<double> far;
  std::optional<double> event_recall;
  std::optional<double> mean_lead_ms;
  std::optional<double> latency_median_ms;
  std::optional<double> latency_p95_ms;
  ConfusionCounts counts;
};

// Per-group reports plus pooled (micro) and averaged (macro) rows.
struct GroupedMetrics {
  std::vector<std::pair<std::string, FrameMetrics>> groups;
  FrameMetrics micro;
  double macro_acc = 0.0;
  std::optional<double> macro_rec;
};

inline GroupedMetrics group_metrics(const std::vector<std::pair<std::string, ConfusionCounts>>& groups) {
  require(!groups.empty(), "group_metrics: no groups");
  GroupedMetrics out;
  ConfusionCounts pooled;
  double acc_sum = 0.0, rec_sum = 0.0;
  std::size_t rec_n = 0;
  for (const auto& [name, c] : groups) {
    const FrameMetrics m = metrics_from_counts(c);
    out.groups.emplace_back(name, m);
    pooled += c;
    acc_sum += m.acc;
    if (m.rec) {
      rec_sum += *m.rec;
      ++rec_n;
    }
  }
  out.micro = metrics_from_counts(pooled);
  out.macro_acc = acc_sum / static_cast<double>(groups.size());
  if (rec_n > 0) out.macro_rec = rec_sum / static_cast<double>(rec_n);
  return out;
}

}  // namespace lsre
