#pragma once

// Straight-line reference implementation of the tracking metrics, written
// directly from the definitions with no shared code or structure with the
// library version. Linear scans everywhere; no caching, no binary search.

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "trackteller/metrics.hpp"

namespace metrics_oracle {

using trackteller::metrics::EvalConfig;
using trackteller::metrics::GtRecord;
using trackteller::metrics::TrackRecord;

struct Counts {
  long tp = 0, fp = 0, fn = 0, ids = 0, gt = 0;
  double sum_dist = 0;
  bool reachable = true;
};

inline std::vector<TrackRecord> sorted_preds(std::vector<TrackRecord> preds) {
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = i + 1; j < preds.size(); ++j) {
      const auto& a = preds[i];
      const auto& b = preds[j];
      bool swap = false;
      if (b.score > a.score) swap = true;
      else if (b.score == a.score && b.track_id < a.track_id) swap = true;
      else if (b.score == a.score && b.track_id == a.track_id && b.t < a.t)
        swap = true;
      if (swap) std::swap(preds[i], preds[j]);
    }
  return preds;
}

// greedy nearest-unclaimed matching for the predictions of one frame,
// processed in the order given (already globally score-sorted)
inline std::vector<std::pair<int, int>> match_one_frame(
    const std::vector<TrackRecord>& frame_preds,
    const std::vector<GtRecord>& frame_gts, double radius) {
  std::vector<bool> taken(frame_gts.size(), false);
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t p = 0; p < frame_preds.size(); ++p) {
    int choice = -1;
    double choice_dist = radius;
    for (std::size_t g = 0; g < frame_gts.size(); ++g) {
      if (taken[g]) continue;
      double dx = frame_preds[p].box.x - frame_gts[g].box.x;
      double dy = frame_preds[p].box.y - frame_gts[g].box.y;
      double d = std::sqrt(dx * dx + dy * dy);
      bool better = d < choice_dist;
      if (d == choice_dist && choice >= 0 &&
          frame_gts[g].object_id < frame_gts[choice].object_id)
        better = true;
      if (better) {
        choice = static_cast<int>(g);
        choice_dist = d;
      }
    }
    if (choice >= 0) {
      taken[choice] = true;
      pairs.emplace_back(static_cast<int>(p), choice);
    }
  }
  return pairs;
}

// event counts for one prompt using the first k predictions of the sorted
// stream; targets only
inline Counts counts_for_prefix(const std::vector<TrackRecord>& sorted,
                                std::size_t k, const std::vector<GtRecord>& gts,
                                double radius) {
  Counts out;
  std::set<int> frames;
  for (const auto& g : gts)
    if (g.is_target) frames.insert(g.t);
  for (std::size_t i = 0; i < k; ++i) frames.insert(sorted[i].t);

  std::map<int, std::map<int, int>> match_history;  // object -> frame -> track
  for (const auto& g : gts)
    if (g.is_target) out.gt++;

  for (int t : frames) {
    std::vector<TrackRecord> fp;
    for (std::size_t i = 0; i < k; ++i)
      if (sorted[i].t == t) fp.push_back(sorted[i]);
    std::vector<GtRecord> fg;
    for (const auto& g : gts)
      if (g.is_target && g.t == t) fg.push_back(g);
    auto pairs = match_one_frame(fp, fg, radius);
    out.tp += static_cast<long>(pairs.size());
    out.fp += static_cast<long>(fp.size() - pairs.size());
    for (auto [p, g] : pairs) {
      double dx = fp[p].box.x - fg[g].box.x;
      double dy = fp[p].box.y - fg[g].box.y;
      double dz = fp[p].box.z - fg[g].box.z;
      out.sum_dist += std::sqrt(dx * dx + dy * dy + dz * dz);
      match_history[fg[g].object_id][t] = fp[p].track_id;
    }
  }
  out.fn = out.gt - out.tp;
  for (const auto& [obj, history] : match_history) {
    int last = -999;
    bool first = true;
    for (const auto& [t, id] : history) {
      if (!first && id != last) out.ids++;
      last = id;
      first = false;
    }
  }
  return out;
}

inline std::vector<Counts> count_events(const std::vector<TrackRecord>& preds,
                                        const std::vector<GtRecord>& gts,
                                        const EvalConfig& cfg) {
  auto sorted = sorted_preds(preds);
  long gt_total = 0;
  for (const auto& g : gts)
    if (g.is_target) gt_total++;
  std::vector<Counts> out;
  for (double r : cfg.recall_thresholds) {
    // smallest score-cutoff set whose recall reaches r, by linear scan;
    // a cutoff never splits a group of equal scores
    bool found = false;
    Counts chosen;
    for (std::size_t k = 0; k <= sorted.size(); ++k) {
      if (k < sorted.size() && k > 0 && sorted[k].score == sorted[k - 1].score)
        continue;  // inside a tie group, not a valid cutoff
      Counts c = counts_for_prefix(sorted, k, gts, cfg.match_radius);
      double recall = gt_total == 0 ? 0.0 : double(c.tp) / double(gt_total);
      if (gt_total > 0 && recall >= r - 1e-12) {
        chosen = c;
        found = true;
        break;
      }
    }
    if (!found) {
      chosen = counts_for_prefix(sorted, sorted.size(), gts, cfg.match_radius);
      chosen.reachable = false;
    }
    out.push_back(chosen);
  }
  return out;
}

inline double amota(const std::vector<Counts>& counts) {
  double sum = 0;
  int n = 0;
  for (const auto& c : counts) {
    if (c.gt == 0) continue;
    double term = 1.0 - double(c.fn + c.fp + c.ids) / double(c.gt);
    if (term < 0) term = 0;
    sum += term;
    n++;
  }
  return sum / n;
}

inline double amotp(const std::vector<Counts>& counts) {
  double sum = 0;
  int n = 0;
  for (const auto& c : counts) {
    if (c.tp == 0) continue;
    sum += c.sum_dist / double(c.tp);
    n++;
  }
  return sum / n;
}

inline double recall_avg(const std::vector<Counts>& counts) {
  double sum = 0;
  int n = 0;
  for (const auto& c : counts) {
    if (c.gt == 0) continue;
    sum += double(c.tp) / double(c.gt);
    n++;
  }
  return sum / n;
}

struct TidFaf {
  double tid = 0;
  double faf = 0;
};

inline TidFaf tid_faf(const std::vector<TrackRecord>& preds,
                      const std::vector<GtRecord>& gts, const EvalConfig& cfg) {
  auto sorted = sorted_preds(preds);
  std::set<int> frames;
  for (const auto& g : gts) frames.insert(g.t);

  std::map<int, std::map<int, int>> history;
  long fp_total = 0;
  for (int t : frames) {
    std::vector<TrackRecord> fp;
    for (const auto& p : sorted)
      if (p.t == t) fp.push_back(p);
    std::vector<GtRecord> fg;
    for (const auto& g : gts)
      if (g.is_target && g.t == t) fg.push_back(g);
    auto pairs = match_one_frame(fp, fg, cfg.match_radius);
    fp_total += static_cast<long>(fp.size() - pairs.size());
    for (auto [p, g] : pairs) history[fg[g].object_id][t] = fp[p].track_id;
  }
  // predictions on frames with no gt at all
  for (const auto& p : sorted)
    if (!frames.count(p.t)) fp_total++;

  double gaps = 0;
  long matched_objects = 0;
  for (const auto& [obj, h] : history) {
    if (h.empty()) continue;
    matched_objects++;
    int prev = -1;
    bool first = true;
    for (const auto& [t, id] : h) {
      if (!first) {
        // unmatched gt frames for this object strictly between prev and t
        for (const auto& g : gts)
          if (g.is_target && g.object_id == obj && g.t > prev && g.t < t &&
              !h.count(g.t))
            gaps += 1.0;
      }
      prev = t;
      first = false;
    }
  }
  TidFaf out;
  out.tid = matched_objects == 0 ? 0.0 : gaps / double(matched_objects);
  long frame_count = static_cast<long>(frames.size());
  out.faf = frame_count == 0 ? 0.0 : double(fp_total) / double(frame_count);
  return out;
}

}  // namespace metrics_oracle
