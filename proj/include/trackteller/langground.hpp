#pragma once

#include <string>
#include <vector>

#include "trackteller/box.hpp"
#include "trackteller/param_store.hpp"
#include "trackteller/scene.hpp"
#include "trackteller/tensor.hpp"
#include "trackteller/uniscene.hpp"

namespace trackteller::langground {

using numcore::ParamStore;
using numcore::Rng;
using numcore::Tensor;

struct TextEmbedding {
  Tensor tokens;     // [L x d_txt] raw encoder output
  Tensor projected;  // [L x D]
  Tensor pooled;     // [1 x D], column mean of projected
};

struct QuerySet {
  Tensor embeddings;  // [M x D]
  int layer = 0;
};

struct FrameProposals {
  std::vector<Box3D> boxes;  // decoded values, size M
  Tensor box7;               // [M x 7] (x, y, z, log w, log l, log h, yaw), tracked
  Tensor scores;             // [M x 1] frame-level grounding scores, tracked
  Tensor embeddings;         // [M x D] final decoder queries

  std::size_t count() const { return boxes.size(); }
};

struct Dims {
  int d = 32;        // shared embedding width
  int d_txt = 32;    // text encoder width
  int heads = 4;
  int m = 16;        // query count
  int n_layers = 2;  // decoder depth
  int ffn_hidden = 64;
  int head_hidden = 64;
};

inline void declare_text_params(ParamStore& ps, const Dims& dims, const Rng& rng) {
  std::size_t v = scenekit::vocabulary().size();
  std::size_t dt = dims.d_txt, d = dims.d, f = dims.ffn_hidden;
  ps.declare("text.embed", {v, dt}, rng);
  ps.declare("text.attn.wo", {dt, dt}, rng);
  ps.declare("text.ffn.w1", {f, dt}, rng);
  ps.declare("text.ffn.b1", {f}, rng, dt);
  ps.declare("text.ffn.w2", {dt, f}, rng);
  ps.declare("text.ffn.b2", {dt}, rng, f);
  ps.declare("text.w_txt", {d, dt}, rng);
}

inline void declare_lsm_params(ParamStore& ps, const Dims& dims, const Rng& rng) {
  std::size_t d = dims.d;
  ps.declare("lsm.attn.wo", {d, d}, rng);
  ps.declare("lsm.w_g", {d, 2 * d}, rng);
}

inline void declare_decoder_params(ParamStore& ps, const Dims& dims, const Rng& rng,
                                   bool language_conditioned) {
  std::size_t d = dims.d, f = dims.ffn_hidden;
  ps.declare("lgd.z_init", {std::size_t(dims.m), d}, rng);
  if (language_conditioned) ps.declare("lgd.w_q", {d, d}, rng);
  for (int l = 0; l < dims.n_layers; ++l) {
    std::string p = "lgd.layer" + std::to_string(l) + ".";
    ps.declare(p + "attn.wo", {d, d}, rng);
    ps.declare(p + "ffn.w1", {f, d}, rng);
    ps.declare(p + "ffn.b1", {f}, rng, d);
    ps.declare(p + "ffn.w2", {d, f}, rng);
    ps.declare(p + "ffn.b2", {d}, rng, f);
  }
}

// Reference points start on a uniform grid over the scene extent.
inline void declare_prehead_params(ParamStore& ps, const Dims& dims,
                                   const scenekit::WorldConfig& world,
                                   const Rng& rng) {
  std::size_t d = dims.d, hh = dims.head_hidden;
  ps.declare("prehead.reg.w1", {hh, d}, rng);
  ps.declare("prehead.reg.b1", {hh}, rng, d);
  ps.declare("prehead.reg.w2", {8, hh}, rng);
  ps.declare("prehead.reg.b2", {8}, rng, hh);
  ps.declare("prehead.cls.w1", {hh, d}, rng);
  ps.declare("prehead.cls.b1", {hh}, rng, d);
  ps.declare("prehead.cls.w2", {1, hh}, rng);
  ps.declare("prehead.cls.b2", {1}, rng, hh);

  int side = 1;
  while (side * side < dims.m) ++side;
  std::vector<double> pts(dims.m * 2);
  for (int i = 0; i < dims.m; ++i) {
    int r = i / side, c = i % side;
    int rows = (dims.m + side - 1) / side;
    pts[i * 2] = world.x_min + (c + 0.5) * (world.x_max - world.x_min) / side;
    pts[i * 2 + 1] = world.y_min + (r + 0.5) * (world.y_max - world.y_min) / rows;
  }
  ps.declare_raw("prehead.refpoints", {std::size_t(dims.m), 2}, pts);
}

// Fixed sinusoidal position table for the text encoder.
inline Tensor sinusoidal_positions(std::size_t len, std::size_t dim) {
  std::vector<double> v(len * dim);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t k = 0; k < dim; ++k) {
      double angle = double(i) / std::pow(10000.0, double(2 * (k / 2)) / double(dim));
      v[i * dim + k] = (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return Tensor::from({len, dim}, std::move(v));
}

// Embedding lookup + position add + one pre-norm self-attention block with
// feedforward, then projection into the shared width and mean pooling.
inline TextEmbedding encode_text(const std::vector<int>& token_ids,
                                 const ParamStore& ps, const Dims& dims) {
  if (token_ids.empty())
    throw DomainError("grounding requires a non-empty prompt");
  std::vector<std::size_t> ids(token_ids.begin(), token_ids.end());
  Tensor e = numcore::gather_rows(ps.param("text.embed"), ids);
  e = numcore::add(e, sinusoidal_positions(ids.size(), dims.d_txt));

  Tensor norm = numcore::layernorm_lastdim(e);
  e = numcore::add(e, numcore::scaled_dot_attention(norm, norm, norm, dims.heads,
                                                    ps.param("text.attn.wo")));
  Tensor ffn_in = numcore::layernorm_lastdim(e);
  Tensor hidden = numcore::relu(numcore::linear(ffn_in, ps.param("text.ffn.w1"),
                                                ps.param("text.ffn.b1")));
  e = numcore::add(e, numcore::linear(hidden, ps.param("text.ffn.w2"),
                                      ps.param("text.ffn.b2")));

  TextEmbedding out;
  out.tokens = e;
  out.projected = numcore::linear(e, ps.param("text.w_txt"));
  out.pooled = numcore::mean_dim0(out.projected);
  return out;
}

// Cross-attention from scene tokens into the text, fused back through the
// sigmoid gate: U_lang = G*U + (1-G)*CA(U, text).
inline Tensor modulate_scene(const uniscene::UniSceneTokens& u,
                             const TextEmbedding& txt, const ParamStore& ps,
                             const Dims& dims) {
  Tensor attended = numcore::scaled_dot_attention(
      u.tokens, txt.projected, txt.projected, dims.heads, ps.param("lsm.attn.wo"));
  return uniscene::gated_fuse(u.tokens, attended, ps.param("lsm.w_g"));
}

// Z_0 = Z_init + W_q * pooled, broadcast over every query row.
inline QuerySet init_queries(const ParamStore& ps, const Tensor& pooled) {
  Tensor shift = numcore::linear(pooled, ps.param("lgd.w_q"));
  return {numcore::add_rowvec(ps.param("lgd.z_init"), shift), 0};
}

inline QuerySet init_queries_unconditioned(const ParamStore& ps) {
  // plain copy so downstream layers never alias the learned table
  return {numcore::affine(ps.param("lgd.z_init"), 1.0, 0.0), 0};
}

// Pre-norm cross-attention decoder: each layer attends from the queries
// into the scene tokens and applies a feedforward, both residual.
inline QuerySet decode(const QuerySet& z0, const Tensor& u_lang,
                       const ParamStore& ps, const Dims& dims) {
  Tensor z = z0.embeddings;
  for (int l = 0; l < dims.n_layers; ++l) {
    std::string p = "lgd.layer" + std::to_string(l) + ".";
    Tensor norm = numcore::layernorm_lastdim(z);
    z = numcore::add(z, numcore::scaled_dot_attention(norm, u_lang, u_lang,
                                                      dims.heads,
                                                      ps.param(p + "attn.wo")));
    Tensor ffn_in = numcore::layernorm_lastdim(z);
    Tensor hidden = numcore::relu(
        numcore::linear(ffn_in, ps.param(p + "ffn.w1"), ps.param(p + "ffn.b1")));
    z = numcore::add(z, numcore::linear(hidden, ps.param(p + "ffn.w2"),
                                        ps.param(p + "ffn.b2")));
  }
  return {z, dims.n_layers};
}

// Ground-plane center offsets are regressed in units of kCenterGain
// meters; the scene spans tens of meters while the heads' raw outputs
// live near unit scale.
constexpr double kCenterGain = 8.0;

// Trained score logits carry a fixed gain so confident separations are
// reachable within a short optimization budget.
constexpr double kScoreGain = 4.0;

// Assembles the 7-parameter box tensor (x, y, z, log w, log l, log h, yaw)
// from a raw regression output and per-slot reference anchors.
inline Tensor assemble_box7(const Tensor& raw8, const Tensor& refpoints) {
  Tensor center_xy = numcore::add(
      numcore::scale(numcore::slice_cols(raw8, 0, 2), kCenterGain), refpoints);
  Tensor center = numcore::concat_lastdim(center_xy, numcore::slice_cols(raw8, 2, 1));
  Tensor log_sizes = numcore::slice_cols(raw8, 3, 3);
  Tensor theta = numcore::atan2(numcore::slice_cols(raw8, 6, 1),
                                numcore::slice_cols(raw8, 7, 1));
  return numcore::concat_lastdim(numcore::concat_lastdim(center, log_sizes), theta);
}

inline std::vector<Box3D> decode_boxes(const Tensor& box7) {
  std::vector<Box3D> out(box7.rows());
  for (std::size_t i = 0; i < box7.rows(); ++i) {
    Box3D& b = out[i];
    b.x = box7.at(i, 0);
    b.y = box7.at(i, 1);
    b.z = box7.at(i, 2);
    b.w = std::exp(box7.at(i, 3));
    b.l = std::exp(box7.at(i, 4));
    b.h = std::exp(box7.at(i, 5));
    b.yaw = scenekit::wrap_pi(box7.at(i, 6));
  }
  return out;
}

inline Tensor box7_from_object(const scenekit::ObjectState& o) {
  return Tensor::from({1, 7}, {o.x, o.y, o.z, std::log(o.w), std::log(o.l),
                               std::log(o.h), scenekit::wrap_pi(o.yaw)});
}

// Two-branch head: box regression relative to the learned reference
// points (sizes through exp, yaw through atan2 of a sin/cos pair, with
// atan2(0,0) pinned to 0) and a sigmoid grounding score per query.
inline FrameProposals pre_head(const QuerySet& z_l, const ParamStore& ps) {
  FrameProposals out;
  Tensor raw = numcore::mlp(z_l.embeddings,
                            {{ps.param("prehead.reg.w1"), ps.param("prehead.reg.b1")},
                             {ps.param("prehead.reg.w2"), ps.param("prehead.reg.b2")}});
  out.box7 = assemble_box7(raw, ps.param("prehead.refpoints"));
  out.boxes = decode_boxes(out.box7);
  Tensor logit = numcore::mlp(z_l.embeddings,
                              {{ps.param("prehead.cls.w1"), ps.param("prehead.cls.b1")},
                               {ps.param("prehead.cls.w2"), ps.param("prehead.cls.b2")}});
  out.scores = numcore::sigmoid(numcore::scale(logit, kScoreGain));
  out.embeddings = z_l.embeddings;
  return out;
}

}  // namespace trackteller::langground
