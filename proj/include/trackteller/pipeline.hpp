#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "trackteller/encoders.hpp"
#include "trackteller/langground.hpp"
#include "trackteller/metrics.hpp"
#include "trackteller/objective.hpp"
#include "trackteller/param_store.hpp"
#include "trackteller/scene.hpp"
#include "trackteller/temporal.hpp"
#include "trackteller/uniscene.hpp"

namespace trackteller::pipeline {

using numcore::ParamStore;
using numcore::Rng;
using numcore::Tensor;

// Architecture components that can be disabled for ablations.
struct Toggles {
  bool lidar_fusion = true;
  bool lsm = true;
  bool lgd = true;
  bool historical_reasoning = true;
  bool temporal_grounding_prediction = true;

  bool uses_text() const { return lsm || lgd; }
};

inline const std::vector<std::pair<std::string, bool Toggles::*>>& toggle_fields() {
  static const std::vector<std::pair<std::string, bool Toggles::*>> fields = {
      {"lidar_fusion", &Toggles::lidar_fusion},
      {"lsm", &Toggles::lsm},
      {"lgd", &Toggles::lgd},
      {"historical_reasoning", &Toggles::historical_reasoning},
      {"temporal_grounding_prediction", &Toggles::temporal_grounding_prediction}};
  return fields;
}

struct ModelConfig {
  int d = 32;
  int d_txt = 32;
  int heads = 4;
  int m = 16;
  int n_decoder_layers = 2;
  int ffn_hidden = 128;
  int head_hidden = 128;
  int k = 4;  // memory depth
  double nms_radius = 2.0;
  double tau = 0.0;
  Toggles toggles;

  langground::Dims lang_dims() const {
    langground::Dims dd;
    dd.d = d;
    dd.d_txt = d_txt;
    dd.heads = heads;
    dd.m = m;
    dd.n_layers = n_decoder_layers;
    dd.ffn_hidden = ffn_hidden;
    dd.head_hidden = head_hidden;
    return dd;
  }
  temporal::TemporalDims temporal_dims() const {
    temporal::TemporalDims td;
    td.d = d;
    td.heads = heads;
    td.k = k;
    td.ffn_hidden = ffn_hidden;
    td.head_hidden = head_hidden;
    return td;
  }

  void validate() const {
    if (d < 1 || d % heads != 0) throw ConfigError("D", "must be divisible by heads");
    if (d_txt < 1 || d_txt % heads != 0)
      throw ConfigError("d_txt", "must be divisible by heads");
    if (m < 1) throw ConfigError("M", "must be >= 1");
    if (n_decoder_layers < 1) throw ConfigError("n_decoder_layers", "must be >= 1");
    if (k < 1) throw ConfigError("K", "must be >= 1");
    if (nms_radius <= 0) throw ConfigError("nms_radius", "must be positive");
    if (tau < 0 || tau > 1) throw ConfigError("tau", "must be in [0, 1]");
  }
};

// Declares every learnable tensor the enabled components need. Disabled
// components leave no parameters behind.
inline void init_params(ParamStore& ps, const scenekit::WorldConfig& world,
                        const ModelConfig& model, std::uint64_t seed) {
  model.validate();
  Rng rng = Rng(seed).child("init");
  auto dims = model.lang_dims();
  auto tdims = model.temporal_dims();

  ps.declare("uniscene.w_img", {std::size_t(model.d), std::size_t(world.d_img)}, rng);
  if (model.toggles.lidar_fusion) {
    ps.declare("uniscene.w_pc", {std::size_t(model.d), std::size_t(world.d_pc)}, rng);
    ps.declare("uniscene.conv.w",
               {std::size_t(model.d), std::size_t(9 * 2 * model.d)}, rng);
    ps.declare("uniscene.conv.b", {std::size_t(model.d)}, rng,
               std::size_t(9 * 2 * model.d));
    ps.declare("uniscene.w_g", {std::size_t(model.d), std::size_t(2 * model.d)}, rng);
  }
  if (model.toggles.uses_text()) langground::declare_text_params(ps, dims, rng);
  if (model.toggles.lsm) langground::declare_lsm_params(ps, dims, rng);
  langground::declare_decoder_params(ps, dims, rng, model.toggles.lgd);
  langground::declare_prehead_params(ps, dims, world, rng);
  if (model.toggles.historical_reasoning)
    temporal::declare_memory_params(ps, tdims, rng);
  temporal::declare_tempenc_params(ps, tdims, rng);
  if (model.toggles.temporal_grounding_prediction)
    temporal::declare_futreg_params(ps, tdims, rng);
  temporal::declare_score_params(ps, tdims, rng);
}

inline std::vector<std::string> expected_param_names(
    const scenekit::WorldConfig& world, const ModelConfig& model) {
  ParamStore tmp;
  init_params(tmp, world, model, 0);
  return tmp.names();
}

// Constant per-frame encoder outputs for one sequence.
struct SequenceData {
  scenekit::Sequence seq;
  std::vector<Tensor> f_pc;   // per frame, empty when lidar fusion is off
  std::vector<Tensor> f_img;  // per frame
};

inline SequenceData encode_features(scenekit::Sequence seq,
                                    const scenekit::WorldConfig& world,
                                    bool need_lidar = true) {
  SequenceData data;
  auto geom = scenekit::build_patch_geometry(world);
  for (const auto& frame : seq.frames) {
    if (need_lidar) data.f_pc.push_back(scenekit::encode_lidar_bev(frame, world));
    data.f_img.push_back(scenekit::encode_views(frame, world, geom, seq.seed));
  }
  data.seq = std::move(seq);
  return data;
}

struct LossParams {
  objective::LossWeights weights;
  double focal_alpha = objective::kFocalAlpha;
  double focal_gamma = objective::kFocalGamma;
  double match_gate = objective::kMatchGateMeters;
};

// Fixed sinusoidal encoding of each patch's ground-plane point, added to
// the scene tokens before query decoding (position-aware attention in the
// style of position-embedding detection transformers).
inline Tensor ground_plane_positions(const scenekit::PatchGeometry& geom, int d,
                                     double norm = 30.0) {
  std::vector<double> v(geom.patches.size() * d, 0.0);
  const int half = d / 2;
  for (std::size_t p = 0; p < geom.patches.size(); ++p) {
    double x = geom.patches[p].x / norm;
    double y = geom.patches[p].y / norm;
    for (int k = 0; k < half; ++k) {
      double freq = std::pow(2.0, double(k / 2)) * 3.14159265358979323846;
      double coord = (k % 2 == 0) ? x : y;
      double angle = freq * coord;
      v[p * d + k] = std::sin(angle);
      v[p * d + half + k] = std::cos(angle);
    }
  }
  return Tensor::from({geom.patches.size(), std::size_t(d)}, std::move(v));
}

struct FrameTrace {
  langground::FrameProposals det;
  temporal::TemporalProposals his;
  Tensor s_temp;  // [M x 1]
  Tensor m_t;     // [M x D]
  std::vector<temporal::Candidate> candidates;
  std::optional<temporal::Candidate> selected;
  objective::MatchAssignment assignment;  // filled in training mode
};

struct SequenceResult {
  std::vector<FrameTrace> frames;
  objective::LossBreakdown loss;  // valid when losses were requested
};

// Full forward pass over one sequence. Inference outputs (candidates,
// selection) are always produced; per-frame losses only when requested.
// Propagated proposals are regressed from the memory state before the
// current frame's update, so they never see current-frame features.
inline SequenceResult run_sequence(const SequenceData& data, const ParamStore& ps,
                                   const scenekit::WorldConfig& world,
                                   const ModelConfig& model, bool with_loss,
                                   const LossParams& lp = {}) {
  const auto& toggles = model.toggles;
  auto dims = model.lang_dims();
  auto tdims = model.temporal_dims();
  auto geom = scenekit::build_patch_geometry(world);
  auto grid = uniscene::grid_from_config(world);

  std::optional<langground::TextEmbedding> txt;
  if (toggles.uses_text())
    txt = langground::encode_text(data.seq.prompt.tokens, ps, dims);

  Tensor patch_positions = ground_plane_positions(geom, model.d, world.patch_r_max);

  temporal::MemoryBank bank(model.k);
  SequenceResult result;
  std::vector<objective::FrameLoss> frame_losses;
  objective::MatchAssignment prev_assignment;
  Tensor prev_m_t;
  bool have_prev = false;

  for (int t = 0; t < data.seq.T(); ++t) {
    const auto& frame = data.seq.frames[t];
    FrameTrace trace;

    uniscene::UniSceneTokens u;
    if (toggles.lidar_fusion) {
      u = uniscene::fuse_frame(data.f_pc[t], data.f_img[t], geom, grid, ps);
    } else {
      u.tokens = numcore::linear(data.f_img[t], ps.param("uniscene.w_img"));
    }

    Tensor u_lang = toggles.lsm ? langground::modulate_scene(u, *txt, ps, dims)
                                : u.tokens;
    auto z0 = toggles.lgd ? langground::init_queries(ps, txt->pooled)
                          : langground::init_queries_unconditioned(ps);
    auto z_l = langground::decode(z0, numcore::add(u_lang, patch_positions), ps, dims);
    trace.det = langground::pre_head(z_l, ps);

    // propagated proposals from the pre-update memory state
    if (toggles.temporal_grounding_prediction && !bank.empty())
      trace.his = temporal::future_reg(bank, ps, tdims);

    Tensor z_hat = toggles.historical_reasoning
                       ? temporal::attend_memory(z_l.embeddings, bank, ps, tdims)
                       : z_l.embeddings;
    temporal::update_memory(bank, z_hat, t);
    trace.m_t = temporal::temp_encode(z_hat, ps);
    trace.s_temp = temporal::temporal_score(trace.m_t, ps);

    std::vector<double> det_scores(model.m);
    for (int i = 0; i < model.m; ++i) det_scores[i] = trace.s_temp.at(i, 0);
    trace.candidates = temporal::merge_and_nms(trace.det.boxes, det_scores,
                                               trace.his, model.tau,
                                               model.nms_radius);
    trace.selected = temporal::select_grounded(trace.candidates);

    if (with_loss) {
      trace.assignment =
          objective::match(trace.det.boxes, frame.objects, lp.match_gate);

      objective::FrameLoss fl;
      auto det_loss = objective::detection_loss(trace.det, frame.objects,
                                                trace.assignment, lp.focal_alpha,
                                                lp.focal_gamma);
      fl.cls = det_loss.cls;
      fl.bbox = det_loss.bbox;

      // active slots: matched last frame to an object still present now
      std::vector<std::size_t> active_slots;
      std::map<int, int> active_slot_to_gt;
      if (have_prev) {
        for (const auto& [slot, prev_gt] : prev_assignment.pairs) {
          int obj_id = data.seq.frames[t - 1].objects[prev_gt].id;
          for (std::size_t j = 0; j < frame.objects.size(); ++j) {
            if (frame.objects[j].id == obj_id) {
              active_slots.push_back(static_cast<std::size_t>(slot));
              active_slot_to_gt[slot] = static_cast<int>(j);
              break;
            }
          }
        }
      }
      if (have_prev)
        fl.mem = objective::memory_loss(trace.m_t, prev_m_t, active_slots);
      if (toggles.temporal_grounding_prediction && !trace.his.empty())
        fl.fut = objective::future_loss(trace.his, frame.objects, active_slot_to_gt);

      std::set<int> target_slots;
      for (const auto& [slot, gt] : trace.assignment.pairs)
        if (data.seq.prompt.target_ids.count(frame.objects[gt].id))
          target_slots.insert(slot);
      fl.ground = objective::grounding_loss(trace.s_temp, target_slots,
                                            lp.focal_alpha, lp.focal_gamma);
      frame_losses.push_back(std::move(fl));

      prev_assignment = trace.assignment;
    }
    prev_m_t = trace.m_t;
    have_prev = true;
    result.frames.push_back(std::move(trace));
  }

  if (with_loss) result.loss = objective::total_loss(frame_losses, lp.weights);
  return result;
}

// Post-NMS candidates as track records; track identity is the query slot.
// If a slot yields both a detected and a propagated survivor in the same
// frame, only the better one is emitted so (frame, track) stays unique.
inline std::vector<metrics::TrackRecord> to_track_records(
    const SequenceResult& result, int prompt_id) {
  std::vector<metrics::TrackRecord> out;
  for (std::size_t t = 0; t < result.frames.size(); ++t) {
    const auto& trace = result.frames[t];
    std::map<int, const temporal::Candidate*> by_slot;
    for (const auto& c : trace.candidates) {
      auto it = by_slot.find(c.slot);
      if (it == by_slot.end() || temporal::candidate_before(c, *it->second))
        by_slot[c.slot] = &c;
    }
    for (const auto& [slot, cand] : by_slot) {
      metrics::TrackRecord r;
      r.t = static_cast<int>(t);
      r.track_id = slot;
      r.box = cand->box;
      r.score = cand->score;
      r.prompt_id = prompt_id;
      r.selected = trace.selected.has_value() &&
                   trace.selected->slot == cand->slot &&
                   trace.selected->propagated == cand->propagated &&
                   trace.selected->score == cand->score;
      out.push_back(r);
    }
  }
  return out;
}

inline std::vector<metrics::GtRecord> to_gt_records(const scenekit::Sequence& seq,
                                                    int prompt_id) {
  std::vector<metrics::GtRecord> out;
  for (const auto& frame : seq.frames) {
    for (const auto& o : frame.objects) {
      metrics::GtRecord g;
      g.t = frame.t;
      g.object_id = o.id;
      g.box = {o.x, o.y, o.z, o.w, o.l, o.h, o.yaw};
      g.prompt_id = prompt_id;
      g.is_target = seq.prompt.target_ids.count(o.id) > 0;
      out.push_back(g);
    }
  }
  return out;
}

}  // namespace trackteller::pipeline
