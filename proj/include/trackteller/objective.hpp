#pragma once

#include <limits>
#include <map>
#include <set>
#include <vector>

#include "trackteller/box.hpp"
#include "trackteller/langground.hpp"
#include "trackteller/scene.hpp"
#include "trackteller/temporal.hpp"
#include "trackteller/tensor.hpp"

namespace trackteller::objective {

using numcore::Tensor;

// Exact min-cost assignment on a square matrix (shortest augmenting path,
// O(n^3)). Returns row -> column.
inline std::vector<int> solve_assignment(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j)
        if (!used[j]) {
          double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

struct MatchAssignment {
  std::vector<std::pair<int, int>> pairs;  // (proposal slot, gt index)
  std::vector<int> unmatched_slots;
  std::vector<int> unmatched_gts;

  int gt_of(int slot) const {
    for (const auto& [s, g] : pairs)
      if (s == slot) return g;
    return -1;
  }
  bool matched(int slot) const { return gt_of(slot) >= 0; }
};

constexpr double kMatchGateMeters = 4.0;

// Minimum-cost bipartite matching on BEV center distance, solved exactly;
// pairs farther than the gate are discarded afterwards.
inline MatchAssignment match(const std::vector<Box3D>& proposals,
                             const std::vector<scenekit::ObjectState>& gts,
                             double gate = kMatchGateMeters) {
  MatchAssignment out;
  const int n = static_cast<int>(proposals.size());
  const int g = static_cast<int>(gts.size());
  if (g == 0 || n == 0) {
    for (int i = 0; i < n; ++i) out.unmatched_slots.push_back(i);
    for (int j = 0; j < g; ++j) out.unmatched_gts.push_back(j);
    return out;
  }
  const int s = std::max(n, g);
  const double pad = 1e6;  // uniform dummy cost, does not bias real pairs
  std::vector<std::vector<double>> cost(s, std::vector<double>(s, pad));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < g; ++j)
      cost[i][j] = std::hypot(proposals[i].x - gts[j].x, proposals[i].y - gts[j].y);
  auto row_to_col = solve_assignment(cost);
  std::vector<char> gt_taken(g, 0);
  for (int i = 0; i < n; ++i) {
    int j = row_to_col[i];
    if (j >= 0 && j < g && cost[i][j] <= gate) {
      out.pairs.emplace_back(i, j);
      gt_taken[j] = 1;
    } else {
      out.unmatched_slots.push_back(i);
    }
  }
  for (int j = 0; j < g; ++j)
    if (!gt_taken[j]) out.unmatched_gts.push_back(j);
  return out;
}

constexpr double kFocalAlpha = 0.25;
constexpr double kFocalGamma = 2.0;

// Mean of -alpha_t * (1 - p_t)^gamma * log(p_t), with p_t the probability
// of the true label. alpha in (0,1) weights positives by alpha and
// negatives by 1-alpha; alpha = 1 disables class balancing (weight 1 for
// both classes).
inline Tensor focal_loss(const Tensor& scores, const std::vector<int>& labels,
                         double alpha = kFocalAlpha, double gamma = kFocalGamma) {
  if (scores.size() != labels.size())
    throw ShapeError("focal_loss: " + std::to_string(labels.size()) +
                     " labels for " + numcore::shape_str(scores.shape()));
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!(scores.at(i) > 0.0 && scores.at(i) < 1.0))
      throw DomainError("focal_loss: score " + std::to_string(scores.at(i)) +
                        " outside (0,1)");
  std::vector<double> mask(labels.size()), weight(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    mask[i] = labels[i] ? 1.0 : 0.0;
    weight[i] = alpha >= 1.0 ? 1.0 : (labels[i] ? alpha : 1.0 - alpha);
  }
  Tensor m = Tensor::from(scores.shape(), std::move(mask));
  Tensor w = Tensor::from(scores.shape(), std::move(weight));
  Tensor one_minus_m = numcore::affine(m, -1.0, 1.0);
  // p_t = m*s + (1-m)*(1-s)
  Tensor p_t = numcore::add(numcore::mul(m, scores),
                            numcore::mul(one_minus_m, numcore::affine(scores, -1.0, 1.0)));
  Tensor focal_term = numcore::pow_const(numcore::affine(p_t, -1.0, 1.0), gamma);
  Tensor nll = numcore::scale(numcore::log(p_t), -1.0);
  return numcore::mean_all(numcore::mul(w, numcore::mul(focal_term, nll)));
}

// Seven-parameter L1 distance rows: |dx|,|dy|,|dz|, log-size deltas, and
// the wrapped yaw difference.
inline Tensor box7_l1_rows(const Tensor& pred7, const Tensor& target7) {
  Tensor diff = numcore::sub(pred7, target7);
  Tensor translational = numcore::abs(numcore::slice_cols(diff, 0, 6));
  Tensor yaw = numcore::abs(numcore::wrap_angle(numcore::slice_cols(diff, 6, 1)));
  return numcore::concat_lastdim(translational, yaw);
}

inline Tensor box7_targets(const std::vector<scenekit::ObjectState>& gts,
                           const std::vector<int>& indices) {
  std::vector<double> v;
  v.reserve(indices.size() * 7);
  for (int j : indices) {
    const auto& o = gts[j];
    v.insert(v.end(), {o.x, o.y, o.z, std::log(o.w), std::log(o.l), std::log(o.h),
                       scenekit::wrap_pi(o.yaw)});
  }
  return Tensor::from({indices.size(), 7}, std::move(v));
}

struct DetectionLoss {
  Tensor cls;
  Tensor bbox;
};

// Focal objectness on the frame scores (matched = positive) plus mean L1
// over the matched pairs' seven box parameters.
inline DetectionLoss detection_loss(const langground::FrameProposals& props,
                                    const std::vector<scenekit::ObjectState>& gts,
                                    const MatchAssignment& assign,
                                    double alpha = kFocalAlpha,
                                    double gamma = kFocalGamma) {
  std::vector<int> labels(props.count(), 0);
  for (const auto& [slot, gt] : assign.pairs) labels[slot] = 1;
  DetectionLoss out;
  out.cls = focal_loss(props.scores, labels, alpha, gamma);
  if (assign.pairs.empty()) {
    out.bbox = Tensor::scalar(0.0);
    return out;
  }
  std::vector<std::size_t> slots;
  std::vector<int> gt_idx;
  for (const auto& [slot, gt] : assign.pairs) {
    slots.push_back(static_cast<std::size_t>(slot));
    gt_idx.push_back(gt);
  }
  Tensor pred = numcore::gather_rows(props.box7, slots);
  Tensor target = box7_targets(gts, gt_idx);
  out.bbox = numcore::mean_all(box7_l1_rows(pred, target));
  return out;
}

// Mean (1 - cosine) between this frame's and the previous frame's encoded
// embeddings over the active slots; zero when nothing is active.
inline Tensor memory_loss(const Tensor& m_t, const Tensor& m_prev,
                          const std::vector<std::size_t>& active_slots) {
  if (active_slots.empty()) return Tensor::scalar(0.0);
  Tensor a = numcore::gather_rows(m_t, active_slots);
  Tensor b = numcore::gather_rows(m_prev, active_slots);
  return numcore::mean_all(numcore::affine(numcore::cosine_rows(a, b), -1.0, 1.0));
}

// Mean seven-parameter L1 between propagated boxes and the current-frame
// ground truth of each active slot's tracked object.
inline Tensor future_loss(const temporal::TemporalProposals& his,
                          const std::vector<scenekit::ObjectState>& gts,
                          const std::map<int, int>& active_slot_to_gt) {
  if (his.empty() || active_slot_to_gt.empty()) return Tensor::scalar(0.0);
  std::vector<std::size_t> rows;
  std::vector<int> gt_idx;
  for (std::size_t i = 0; i < his.slots.size(); ++i) {
    auto it = active_slot_to_gt.find(his.slots[i]);
    if (it != active_slot_to_gt.end()) {
      rows.push_back(i);
      gt_idx.push_back(it->second);
    }
  }
  if (rows.empty()) return Tensor::scalar(0.0);
  Tensor pred = numcore::gather_rows(his.box7, rows);
  Tensor target = box7_targets(gts, gt_idx);
  return numcore::mean_all(box7_l1_rows(pred, target));
}

// Focal supervision of the temporal grounding scores against the slots
// matched to prompt-referred objects.
inline Tensor grounding_loss(const Tensor& s_temp,
                             const std::set<int>& target_slots,
                             double alpha = kFocalAlpha,
                             double gamma = kFocalGamma) {
  std::vector<int> labels(s_temp.size(), 0);
  for (int s : target_slots)
    if (s >= 0 && s < static_cast<int>(labels.size())) labels[s] = 1;
  return focal_loss(s_temp, labels, alpha, gamma);
}

struct LossWeights {
  double cls = 2.0;
  double bbox = 0.25;
  double mem = 2.0;
  double fut = 0.5;
  double ground = 1.0;
};

struct FrameLoss {
  Tensor cls = Tensor::scalar(0.0);
  Tensor bbox = Tensor::scalar(0.0);
  Tensor mem = Tensor::scalar(0.0);
  Tensor fut = Tensor::scalar(0.0);
  Tensor ground = Tensor::scalar(0.0);
};

struct LossBreakdown {
  double cls = 0, bbox = 0, mem = 0, fut = 0, ground = 0;
  double total = 0;
  Tensor total_tensor = Tensor::scalar(0.0);
};

// Weighted sum over frames and terms; raw per-term sums are kept for
// reporting.
inline LossBreakdown total_loss(const std::vector<FrameLoss>& frames,
                                const LossWeights& w) {
  if (frames.empty()) throw DomainError("total_loss: no frames");
  LossBreakdown out;
  Tensor total = Tensor::scalar(0.0);
  for (const auto& f : frames) {
    out.cls += f.cls.item();
    out.bbox += f.bbox.item();
    out.mem += f.mem.item();
    out.fut += f.fut.item();
    out.ground += f.ground.item();
    Tensor frame_total = numcore::add(
        numcore::add(numcore::add(numcore::scale(f.cls, w.cls),
                                  numcore::scale(f.bbox, w.bbox)),
                     numcore::add(numcore::scale(f.mem, w.mem),
                                  numcore::scale(f.fut, w.fut))),
        numcore::scale(f.ground, w.ground));
    total = numcore::add(total, frame_total);
  }
  out.total_tensor = total;
  out.total = total.item();
  return out;
}

}  // namespace trackteller::objective
