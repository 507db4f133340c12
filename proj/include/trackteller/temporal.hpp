#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "trackteller/box.hpp"
#include "trackteller/langground.hpp"
#include "trackteller/param_store.hpp"
#include "trackteller/tensor.hpp"

namespace trackteller::temporal {

using numcore::ParamStore;
using numcore::Rng;
using numcore::Tensor;

// Per-sequence ring buffer of the last K frames' slot embeddings. Slot i
// always corresponds to query/proposal index i; entries keep the graph
// alive so gradients can flow across frames.
class MemoryBank {
 public:
  struct Entry {
    Tensor z;  // [M x D]
    int frame = 0;
    std::vector<bool> valid;  // per slot
  };

  explicit MemoryBank(int capacity = 4) : capacity_(capacity) {}

  bool empty() const { return entries_.empty(); }
  int size() const { return static_cast<int>(entries_.size()); }
  int capacity() const { return capacity_; }
  const std::deque<Entry>& entries() const { return entries_; }

  void push(const Tensor& z_hat, int frame) {
    Entry e;
    e.z = z_hat;
    e.frame = frame;
    e.valid.assign(z_hat.rows(), true);
    entries_.push_back(std::move(e));
    if (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
  }

  // Slots that are valid in every stored frame.
  std::vector<std::size_t> full_history_slots() const {
    if (entries_.empty()) return {};
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < entries_.front().valid.size(); ++s) {
      bool all = true;
      for (const auto& e : entries_) all = all && e.valid[s];
      if (all) out.push_back(s);
    }
    return out;
  }

 private:
  int capacity_;
  std::deque<Entry> entries_;
};

struct TemporalDims {
  int d = 32;
  int heads = 4;
  int k = 4;  // memory depth
  int ffn_hidden = 64;
  int head_hidden = 64;
};

inline void declare_memory_params(ParamStore& ps, const TemporalDims& dims,
                                  const Rng& rng) {
  ps.declare("mem.attn.wo", {std::size_t(dims.d), std::size_t(dims.d)}, rng);
}

inline void declare_tempenc_params(ParamStore& ps, const TemporalDims& dims,
                                   const Rng& rng) {
  std::size_t d = dims.d, f = dims.ffn_hidden;
  ps.declare("tempenc.ffn.w1", {f, d}, rng);
  ps.declare("tempenc.ffn.b1", {f}, rng, d);
  ps.declare("tempenc.ffn.w2", {d, f}, rng);
  ps.declare("tempenc.ffn.b2", {d}, rng, f);
}

inline void declare_futreg_params(ParamStore& ps, const TemporalDims& dims,
                                  const Rng& rng) {
  std::size_t d = dims.d, hh = dims.head_hidden;
  ps.declare("futreg.pos", {std::size_t(dims.k), d}, rng);
  ps.declare("futreg.query", {1, d}, rng);
  ps.declare("futreg.attn.wo", {d, d}, rng);
  ps.declare("futreg.reg.w1", {hh, d}, rng);
  ps.declare("futreg.reg.b1", {hh}, rng, d);
  ps.declare("futreg.reg.w2", {9, hh}, rng);
  ps.declare("futreg.reg.b2", {9}, rng, hh);
}

inline void declare_score_params(ParamStore& ps, const TemporalDims& dims,
                                 const Rng& rng) {
  std::size_t d = dims.d, hh = dims.head_hidden;
  ps.declare("score.w1", {hh, d}, rng);
  ps.declare("score.b1", {hh}, rng, d);
  ps.declare("score.w2", {1, hh}, rng);
  ps.declare("score.b2", {1}, rng, hh);
}

// Z_hat = Z_L + CA(Z_L, bank, bank); an empty bank skips the attention so
// uninformative memory cannot disturb current evidence.
inline Tensor attend_memory(const Tensor& z_l, const MemoryBank& bank,
                            const ParamStore& ps, const TemporalDims& dims) {
  if (bank.empty()) return z_l;
  std::vector<Tensor> parts;
  for (const auto& e : bank.entries()) {
    bool all = true;
    for (bool v : e.valid) all = all && v;
    if (all) {
      parts.push_back(e.z);
    } else {
      std::vector<std::size_t> rows;
      for (std::size_t s = 0; s < e.valid.size(); ++s)
        if (e.valid[s]) rows.push_back(s);
      if (!rows.empty()) parts.push_back(numcore::gather_rows(e.z, rows));
    }
  }
  if (parts.empty()) return z_l;
  Tensor keys = parts.size() == 1 ? parts[0] : numcore::concat_rows(parts);
  return numcore::add(z_l, numcore::scaled_dot_attention(
                               z_l, keys, keys, dims.heads, ps.param("mem.attn.wo")));
}

inline void update_memory(MemoryBank& bank, const Tensor& z_hat, int t) {
  bank.push(z_hat, t);
}

// M_t = Z_hat + FFN(LN(Z_hat)); refines short-term motion patterns.
inline Tensor temp_encode(const Tensor& z_hat, const ParamStore& ps) {
  Tensor norm = numcore::layernorm_lastdim(z_hat);
  Tensor hidden = numcore::relu(
      numcore::linear(norm, ps.param("tempenc.ffn.w1"), ps.param("tempenc.ffn.b1")));
  return numcore::add(z_hat, numcore::linear(hidden, ps.param("tempenc.ffn.w2"),
                                             ps.param("tempenc.ffn.b2")));
}

struct TemporalProposals {
  std::vector<Box3D> boxes;
  std::vector<int> slots;  // query slot per proposal
  Tensor box7;             // [n x 7], tracked
  Tensor scores;           // [n x 1], tracked

  bool empty() const { return boxes.empty(); }
  std::size_t count() const { return boxes.size(); }
};

// Extrapolates each slot's stored history to the current frame: learned
// temporal position embeddings by buffer age, one attention read by a
// learned future-query token, then a regression head emitting box
// parameters (in the same reference-point form as the detection head)
// plus a confidence logit. Consumes only the bank - never current-frame
// features.
inline TemporalProposals future_reg(const MemoryBank& bank, const ParamStore& ps,
                                    const TemporalDims& dims) {
  TemporalProposals out;
  if (bank.empty()) return out;
  auto slots = bank.full_history_slots();
  if (slots.empty()) return out;

  const Tensor& pos = ps.param("futreg.pos");
  const Tensor& query = ps.param("futreg.query");
  std::vector<Tensor> rows;
  rows.reserve(slots.size());
  for (std::size_t s : slots) {
    std::vector<Tensor> hist_parts;
    std::vector<std::size_t> ages;
    int age = 0;
    for (auto it = bank.entries().rbegin(); it != bank.entries().rend(); ++it) {
      hist_parts.push_back(numcore::slice_rows(it->z, s, 1));
      ages.push_back(static_cast<std::size_t>(age++));
    }
    Tensor hist = hist_parts.size() == 1 ? hist_parts[0]
                                         : numcore::concat_rows(hist_parts);
    hist = numcore::add(hist, numcore::gather_rows(pos, ages));
    rows.push_back(numcore::scaled_dot_attention(query, hist, hist, dims.heads,
                                                 ps.param("futreg.attn.wo")));
  }
  Tensor f = rows.size() == 1 ? rows[0] : numcore::concat_rows(rows);
  Tensor raw = numcore::mlp(
      f, {{ps.param("futreg.reg.w1"), ps.param("futreg.reg.b1")},
          {ps.param("futreg.reg.w2"), ps.param("futreg.reg.b2")}});
  Tensor refs = numcore::gather_rows(ps.param("prehead.refpoints"), slots);
  out.box7 = langground::assemble_box7(numcore::slice_cols(raw, 0, 8), refs);
  out.boxes = langground::decode_boxes(out.box7);
  out.scores = numcore::sigmoid(numcore::slice_cols(raw, 8, 1));
  out.slots.assign(slots.begin(), slots.end());
  return out;
}

// S_temp = sigmoid(MLP(M_t)) per slot; the logit carries the shared
// trained-score gain.
inline Tensor temporal_score(const Tensor& m_t, const ParamStore& ps) {
  Tensor logit = numcore::mlp(m_t, {{ps.param("score.w1"), ps.param("score.b1")},
                                    {ps.param("score.w2"), ps.param("score.b2")}});
  return numcore::sigmoid(numcore::scale(logit, langground::kScoreGain));
}

// ---------------------------------------------------------------------------
// candidate merging

struct Candidate {
  Box3D box;
  double score = 0;
  bool propagated = false;
  int slot = 0;
};

// Total order used for NMS processing, argmax selection, and tie-breaks:
// higher score first, then lower slot id, then detected before propagated.
inline bool candidate_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.slot != b.slot) return a.slot < b.slot;
  return !a.propagated && b.propagated;
}

// Pools detected (scored by S_temp) and propagated candidates, drops
// scores <= tau, then greedy NMS with BEV center distance < radius as the
// suppression predicate.
inline std::vector<Candidate> merge_and_nms(
    const std::vector<Box3D>& det_boxes, const std::vector<double>& det_scores,
    const TemporalProposals& his, double tau, double radius) {
  if (radius <= 0) throw DomainError("nms radius must be positive");
  std::vector<Candidate> pool;
  for (std::size_t i = 0; i < det_boxes.size(); ++i)
    if (det_scores[i] > tau)
      pool.push_back({det_boxes[i], det_scores[i], false, static_cast<int>(i)});
  for (std::size_t j = 0; j < his.count(); ++j) {
    double s = his.scores.at(j, 0);
    if (s > tau) pool.push_back({his.boxes[j], s, true, his.slots[j]});
  }
  std::sort(pool.begin(), pool.end(), candidate_before);
  std::vector<Candidate> kept;
  for (const auto& c : pool) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (bev_distance(c.box, k.box) < radius) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(c);
  }
  return kept;
}

// Argmax by score with the same deterministic tie-break; empty set yields
// no selection.
inline std::optional<Candidate> select_grounded(const std::vector<Candidate>& cands) {
  if (cands.empty()) return std::nullopt;
  const Candidate* best = &cands[0];
  for (const auto& c : cands)
    if (candidate_before(c, *best)) best = &c;
  return *best;
}

}  // namespace trackteller::temporal
