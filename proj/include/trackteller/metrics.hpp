#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "trackteller/box.hpp"
#include "trackteller/errors.hpp"

namespace trackteller::metrics {

struct TrackRecord {
  int t = 0;
  int track_id = 0;
  Box3D box;
  double score = 0;
  int prompt_id = 0;
  bool selected = false;
};

struct GtRecord {
  int t = 0;
  int object_id = 0;
  Box3D box;
  int prompt_id = 0;
  bool is_target = true;
};

struct EvalConfig {
  std::vector<double> recall_thresholds;  // strictly increasing, in (0, 1]
  double match_radius = 2.0;              // BEV center distance, meters
  std::vector<double> tau_list = {0.0, 0.1, 0.2, 0.3};

  static EvalConfig defaults(int n_thresholds = 40) {
    EvalConfig cfg;
    for (int i = 1; i <= n_thresholds; ++i)
      cfg.recall_thresholds.push_back(double(i) / n_thresholds);
    return cfg;
  }

  void validate() const {
    if (match_radius <= 0) throw DomainError("match radius must be positive");
    for (std::size_t i = 1; i < recall_thresholds.size(); ++i)
      if (recall_thresholds[i] <= recall_thresholds[i - 1])
        throw DomainError("recall thresholds must be strictly increasing");
  }
};

struct EventCounts {
  long tp = 0, fp = 0, fn = 0, ids = 0, gt = 0;
  double sum_dist = 0;  // 3D center distance over matched pairs
  bool reachable = true;
};

// Deterministic ordering of the prediction stream: score descending, then
// track id, then frame.
inline bool record_before(const TrackRecord& a, const TrackRecord& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.track_id != b.track_id) return a.track_id < b.track_id;
  return a.t < b.t;
}

// Greedy per-frame matching in descending score order: every prediction
// claims the nearest unclaimed ground-truth box within the radius; ties
// fall to the lower object id. Returns (pred index, gt index) pairs over
// the inputs as given.
inline std::vector<std::pair<std::size_t, std::size_t>> match_frame(
    const std::vector<TrackRecord>& preds, const std::vector<GtRecord>& gts,
    double radius) {
  std::vector<std::size_t> order(preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return record_before(preds[a], preds[b]);
  });
  std::vector<char> claimed(gts.size(), 0);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t pi : order) {
    double best = radius;
    int best_j = -1;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (claimed[j]) continue;
      double d = bev_distance(preds[pi].box, gts[j].box);
      if (d < best || (d == best && best_j >= 0 &&
                       gts[j].object_id < gts[best_j].object_id)) {
        best = d;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0) {
      claimed[best_j] = 1;
      out.emplace_back(pi, static_cast<std::size_t>(best_j));
    }
  }
  return out;
}

namespace detail {

// Frame-indexed views plus per-object timelines for one prompt.
struct PromptData {
  std::vector<TrackRecord> preds;  // globally sorted
  std::map<int, std::vector<GtRecord>> gts_by_frame;  // targets only
  long gt_total = 0;
  std::set<int> frames;  // frames covered by the ground truth

  // per-object: frame -> matched track id (only matched frames present)
  using Timelines = std::map<int, std::map<int, int>>;
};

struct PrefixCounts {
  EventCounts counts;
  PromptData::Timelines timelines;
  std::map<int, long> fp_by_frame;
};

inline PrefixCounts count_prefix(const PromptData& data, std::size_t k,
                                 double radius) {
  PrefixCounts out;
  out.counts.gt = data.gt_total;
  std::map<int, std::vector<TrackRecord>> preds_by_frame;
  for (std::size_t i = 0; i < k && i < data.preds.size(); ++i)
    preds_by_frame[data.preds[i].t].push_back(data.preds[i]);

  long matched = 0;
  for (const auto& [t, gts] : data.gts_by_frame) {
    auto pit = preds_by_frame.find(t);
    std::vector<TrackRecord> empty;
    const auto& preds = pit == preds_by_frame.end() ? empty : pit->second;
    auto pairs = match_frame(preds, gts, radius);
    matched += static_cast<long>(pairs.size());
    out.fp_by_frame[t] += static_cast<long>(preds.size() - pairs.size());
    for (const auto& [pi, gi] : pairs) {
      out.counts.sum_dist += center_distance_3d(preds[pi].box, gts[gi].box);
      out.timelines[gts[gi].object_id][t] = preds[pi].track_id;
    }
  }
  // predictions on frames without any ground truth are false positives
  for (const auto& [t, preds] : preds_by_frame)
    if (!data.gts_by_frame.count(t))
      out.fp_by_frame[t] += static_cast<long>(preds.size());

  out.counts.tp = matched;
  out.counts.fn = data.gt_total - matched;
  long fp = 0;
  for (const auto& [t, n] : out.fp_by_frame) fp += n;
  out.counts.fp = fp;

  // identity switches: a ground-truth object matched by a different track
  // id than at its previous matched frame
  for (const auto& [obj, timeline] : out.timelines) {
    int prev_id = -1;
    bool first = true;
    for (const auto& [t, id] : timeline) {
      if (!first && id != prev_id) out.counts.ids++;
      prev_id = id;
      first = false;
    }
  }
  return out;
}

inline PromptData build_prompt_data(std::vector<TrackRecord> preds,
                                    const std::vector<GtRecord>& gts) {
  PromptData data;
  std::sort(preds.begin(), preds.end(), record_before);
  data.preds = std::move(preds);
  for (const auto& g : gts) {
    if (!g.is_target) continue;
    data.gts_by_frame[g.t].push_back(g);
    data.gt_total++;
    data.frames.insert(g.t);
  }
  for (const auto& g : gts) data.frames.insert(g.t);
  return data;
}

}  // namespace detail

// Recall-threshold sweep for a single prompt: for each r, the smallest
// score-cutoff set {p : score >= c} reaching recall >= r is kept (a
// cutoff keeps whole score-tie groups, so a uniformly confident perfect
// tracker keeps its full set at every threshold); an unreachable
// threshold falls back to the full set and is flagged.
inline std::vector<EventCounts> count_events(const std::vector<TrackRecord>& preds,
                                             const std::vector<GtRecord>& gts,
                                             const EvalConfig& cfg) {
  cfg.validate();
  auto data = detail::build_prompt_data(preds, gts);
  const std::size_t n = data.preds.size();

  // prefix lengths at the score-group boundaries (candidate cutoffs)
  std::vector<std::size_t> cuts;
  for (std::size_t i = 0; i < n; ++i)
    if (i + 1 == n || data.preds[i + 1].score != data.preds[i].score)
      cuts.push_back(i + 1);
  const std::size_t groups = cuts.size();

  // recall as a function of included groups is non-decreasing, so each
  // threshold resolves by binary search over the group boundaries
  std::vector<long> tp_at(groups + 1, 0);
  std::vector<bool> computed(groups + 1, false);
  auto prefix_of = [&](std::size_t g) { return g == 0 ? 0 : cuts[g - 1]; };
  auto tp_of = [&](std::size_t g) {
    if (!computed[g]) {
      tp_at[g] = detail::count_prefix(data, prefix_of(g), cfg.match_radius).counts.tp;
      computed[g] = true;
    }
    return tp_at[g];
  };

  std::vector<EventCounts> out;
  for (double r : cfg.recall_thresholds) {
    long needed = static_cast<long>(std::ceil(r * data.gt_total - 1e-12));
    EventCounts counts;
    if (data.gt_total == 0 || tp_of(groups) < needed) {
      counts = detail::count_prefix(data, n, cfg.match_radius).counts;
      counts.reachable = false;
    } else {
      std::size_t lo = 0, hi = groups;
      while (lo < hi) {
        std::size_t mid = (lo + hi) / 2;
        if (tp_of(mid) >= needed)
          hi = mid;
        else
          lo = mid + 1;
      }
      counts = detail::count_prefix(data, prefix_of(lo), cfg.match_radius).counts;
    }
    out.push_back(counts);
  }
  return out;
}

// (1/|R'|) * sum over thresholds with GT_r > 0 of
// max(0, 1 - (FN + FP + IDS)/GT); unreachable thresholds contribute the
// clamped term computed from the full prediction set.
inline double amota(const std::vector<EventCounts>& counts) {
  double sum = 0;
  long n = 0;
  for (const auto& c : counts) {
    if (c.gt == 0) continue;
    sum += std::max(0.0, 1.0 - double(c.fn + c.fp + c.ids) / double(c.gt));
    ++n;
  }
  if (n == 0) throw DomainError("amota undefined: no thresholds with ground truth");
  return sum / double(n);
}

// Mean matched 3D center distance, averaged over thresholds with TP > 0.
inline double amotp(const std::vector<EventCounts>& counts) {
  double sum = 0;
  long n = 0;
  for (const auto& c : counts) {
    if (c.tp == 0) continue;
    sum += c.sum_dist / double(c.tp);
    ++n;
  }
  if (n == 0) throw DomainError("amotp undefined: no true positives");
  return sum / double(n);
}

inline double recall_avg(const std::vector<EventCounts>& counts) {
  double sum = 0;
  long n = 0;
  for (const auto& c : counts) {
    if (c.gt == 0) continue;
    sum += double(c.tp) / double(c.gt);
    ++n;
  }
  if (n == 0) throw DomainError("recall undefined: no ground truth");
  return sum / double(n);
}

struct OperatingPointStats {
  double gap_total = 0;
  long matched_objects = 0;
  long fp_total = 0;
  long frame_count = 0;
};

// TID numerator/denominator and per-frame FP at the full tau-filtered
// prediction set (the single reference operating point).
inline OperatingPointStats operating_point(const std::vector<TrackRecord>& preds,
                                           const std::vector<GtRecord>& gts,
                                           const EvalConfig& cfg) {
  auto data = detail::build_prompt_data(preds, gts);
  auto full = detail::count_prefix(data, data.preds.size(), cfg.match_radius);
  OperatingPointStats out;
  out.frame_count = static_cast<long>(data.frames.size());
  for (const auto& [t, n] : full.fp_by_frame) out.fp_total += n;

  for (const auto& [obj, timeline] : full.timelines) {
    if (timeline.empty()) continue;
    out.matched_objects++;
    // sum unmatched ground-truth frames strictly between matched frames
    auto it = timeline.begin();
    int prev = it->first;
    for (++it; it != timeline.end(); ++it) {
      for (const auto& [t, gts_at] : data.gts_by_frame) {
        if (t <= prev || t >= it->first) continue;
        for (const auto& g : gts_at)
          if (g.object_id == obj) out.gap_total += 1.0;
      }
      prev = it->first;
    }
  }
  return out;
}

inline double tid(const OperatingPointStats& s) {
  return s.matched_objects == 0 ? 0.0 : s.gap_total / double(s.matched_objects);
}

inline double faf(const OperatingPointStats& s) {
  if (s.frame_count == 0) throw DomainError("faf undefined: no frames");
  return double(s.fp_total) / double(s.frame_count);
}

// ---------------------------------------------------------------------------
// report assembly

struct MetricRow {
  double tau = 0;
  std::optional<double> amota, amotp, recall, tid, faf;
  std::string reason;  // set when cells are null
  std::vector<EventCounts> counts;
};

struct EvalReport {
  std::vector<MetricRow> rows;
};

// Evaluates the prediction stream per filtering threshold tau. Prompts
// are evaluated independently (their own recall sweeps) and merged by
// summing event counts at each threshold.
inline EvalReport evaluate(const std::vector<TrackRecord>& preds,
                           const std::vector<GtRecord>& gts, const EvalConfig& cfg) {
  cfg.validate();
  std::set<int> prompt_ids;
  for (const auto& g : gts) prompt_ids.insert(g.prompt_id);

  EvalReport report;
  for (double tau : cfg.tau_list) {
    MetricRow row;
    row.tau = tau;
    std::vector<TrackRecord> kept;
    for (const auto& p : preds)
      if (p.score > tau) kept.push_back(p);
    if (kept.empty()) {
      row.reason = "no predictions";
      report.rows.push_back(std::move(row));
      continue;
    }

    std::vector<EventCounts> merged(cfg.recall_thresholds.size());
    OperatingPointStats op_merged;
    for (int pid : prompt_ids) {
      std::vector<TrackRecord> p_preds;
      std::vector<GtRecord> p_gts;
      for (const auto& p : kept)
        if (p.prompt_id == pid) p_preds.push_back(p);
      for (const auto& g : gts)
        if (g.prompt_id == pid) p_gts.push_back(g);
      auto counts = count_events(p_preds, p_gts, cfg);
      for (std::size_t i = 0; i < merged.size(); ++i) {
        merged[i].tp += counts[i].tp;
        merged[i].fp += counts[i].fp;
        merged[i].fn += counts[i].fn;
        merged[i].ids += counts[i].ids;
        merged[i].gt += counts[i].gt;
        merged[i].sum_dist += counts[i].sum_dist;
        merged[i].reachable = merged[i].reachable && counts[i].reachable;
      }
      auto op = operating_point(p_preds, p_gts, cfg);
      op_merged.gap_total += op.gap_total;
      op_merged.matched_objects += op.matched_objects;
      op_merged.fp_total += op.fp_total;
      op_merged.frame_count += op.frame_count;
    }

    row.counts = merged;
    try {
      row.amota = amota(merged);
    } catch (const DomainError& e) {
      row.reason = e.what();
    }
    try {
      row.amotp = amotp(merged);
    } catch (const DomainError& e) {
      if (row.reason.empty()) row.reason = e.what();
    }
    try {
      row.recall = recall_avg(merged);
    } catch (const DomainError&) {
    }
    row.tid = tid(op_merged);
    try {
      row.faf = faf(op_merged);
    } catch (const DomainError& e) {
      if (row.reason.empty()) row.reason = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace trackteller::metrics
