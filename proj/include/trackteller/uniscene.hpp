#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "trackteller/encoders.hpp"
#include "trackteller/param_store.hpp"
#include "trackteller/tensor.hpp"

namespace trackteller::uniscene {

using numcore::ParamStore;
using numcore::Rng;
using numcore::Tensor;
using scenekit::PatchGeometry;

// Row-major BEV token grid; cell (row, col) <-> token row*w + col.
// Metric-to-cell conversion clamps to the grid edge.
struct BevGridSpec {
  int h = 0, w = 0;
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;

  double cell_w() const { return (x_max - x_min) / w; }
  double cell_h() const { return (y_max - y_min) / h; }

  int cell_of(double x, double y) const {
    int col = std::clamp(static_cast<int>((x - x_min) / cell_w()), 0, w - 1);
    int row = std::clamp(static_cast<int>((y - y_min) / cell_h()), 0, h - 1);
    return row * w + col;
  }
  int cells() const { return h * w; }
};

inline BevGridSpec grid_from_config(const scenekit::WorldConfig& cfg) {
  return {cfg.bev_h, cfg.bev_w, cfg.x_min, cfg.x_max, cfg.y_min, cfg.y_max};
}

struct BevGrid {
  BevGridSpec spec;
  Tensor tokens;  // [(h*w) x D]
};

struct UniSceneTokens {
  Tensor tokens;  // [(n_views*n_patches) x D]
};

inline void declare_params(ParamStore& ps, int d_pc, int d_img, int d,
                           const Rng& rng) {
  ps.declare("uniscene.w_pc", {std::size_t(d), std::size_t(d_pc)}, rng);
  ps.declare("uniscene.w_img", {std::size_t(d), std::size_t(d_img)}, rng);
  ps.declare("uniscene.conv.w", {std::size_t(d), std::size_t(9 * 2 * d)}, rng);
  ps.declare("uniscene.conv.b", {std::size_t(d)}, rng, std::size_t(9 * 2 * d));
  ps.declare("uniscene.w_g", {std::size_t(d), std::size_t(2 * d)}, rng);
}

// Token-wise projections into the shared embedding dimension; pure linear
// maps, F_hat = F * W^T.
inline std::pair<Tensor, Tensor> project_modalities(const Tensor& f_pc,
                                                    const Tensor& f_img,
                                                    const ParamStore& ps) {
  return {numcore::linear(f_pc, ps.param("uniscene.w_pc")),
          numcore::linear(f_img, ps.param("uniscene.w_img"))};
}

// Pillar lift: every patch token is dropped into the BEV cell under its
// ground point; cells collecting several tokens keep their mean.
inline Tensor lift_image_to_bev(const Tensor& f_img_hat,
                                const PatchGeometry& geom,
                                const BevGridSpec& grid) {
  std::vector<std::size_t> cells(geom.patches.size());
  for (std::size_t p = 0; p < geom.patches.size(); ++p)
    cells[p] = static_cast<std::size_t>(
        grid.cell_of(geom.patches[p].x, geom.patches[p].y));
  return numcore::scatter_mean_rows(f_img_hat, cells,
                                    static_cast<std::size_t>(grid.cells()));
}

// Channel concat + 3x3 spatial convolution + relu over the BEV grid.
inline BevGrid fuse_bev(const Tensor& img_bev, const Tensor& pc_hat,
                        const BevGridSpec& grid, const ParamStore& ps) {
  numcore::detail::require_same_shape(img_bev, pc_hat, "fuse_bev");
  Tensor stacked = numcore::concat_lastdim(img_bev, pc_hat);
  Tensor cols = numcore::im2col_3x3(stacked, grid.h, grid.w);
  Tensor out = numcore::relu(numcore::linear(cols, ps.param("uniscene.conv.w"),
                                             ps.param("uniscene.conv.b")));
  return {grid, out};
}

// Bilinear resampling of the BEV grid at each patch's ground point
// (z = 0 plane); border patches clamp to edge cells.
inline Tensor align_bev_to_patches(const BevGrid& bev, const PatchGeometry& geom) {
  const auto& g = bev.spec;
  std::vector<std::array<std::size_t, 4>> idx(geom.patches.size());
  std::vector<std::array<double, 4>> wts(geom.patches.size());
  for (std::size_t p = 0; p < geom.patches.size(); ++p) {
    double u = (geom.patches[p].x - g.x_min) / g.cell_w() - 0.5;
    double v = (geom.patches[p].y - g.y_min) / g.cell_h() - 0.5;
    u = std::clamp(u, 0.0, double(g.w - 1));
    v = std::clamp(v, 0.0, double(g.h - 1));
    int j0 = std::min(static_cast<int>(u), g.w > 1 ? g.w - 2 : 0);
    int i0 = std::min(static_cast<int>(v), g.h > 1 ? g.h - 2 : 0);
    int j1 = g.w > 1 ? j0 + 1 : j0;
    int i1 = g.h > 1 ? i0 + 1 : i0;
    double fu = u - j0;
    double fv = v - i0;
    idx[p] = {std::size_t(i0 * g.w + j0), std::size_t(i0 * g.w + j1),
              std::size_t(i1 * g.w + j0), std::size_t(i1 * g.w + j1)};
    wts[p] = {(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv};
  }
  return numcore::gather_weighted_rows(bev.tokens, idx, wts);
}

// Sigmoid gate over the channel-concatenated pair; the result is an
// entrywise convex combination: G*a + (1-G)*b.
inline Tensor gated_fuse(const Tensor& a, const Tensor& b, const Tensor& w_g) {
  Tensor gate = numcore::sigmoid(numcore::linear(numcore::concat_lastdim(a, b), w_g));
  Tensor one_minus = numcore::affine(gate, -1.0, 1.0);
  return numcore::add(numcore::mul(gate, a), numcore::mul(one_minus, b));
}

inline UniSceneTokens build_uniscene(const Tensor& pc_aligned,
                                     const Tensor& img_hat, const ParamStore& ps) {
  numcore::detail::require_same_shape(pc_aligned, img_hat, "build_uniscene");
  return {gated_fuse(pc_aligned, img_hat, ps.param("uniscene.w_g"))};
}

// Full per-frame path from encoder outputs to fused scene tokens.
inline UniSceneTokens fuse_frame(const Tensor& f_pc, const Tensor& f_img,
                                 const PatchGeometry& geom, const BevGridSpec& grid,
                                 const ParamStore& ps) {
  auto [pc_hat, img_hat] = project_modalities(f_pc, f_img, ps);
  Tensor img_bev = lift_image_to_bev(img_hat, geom, grid);
  BevGrid bev = fuse_bev(img_bev, pc_hat, grid, ps);
  Tensor pc_aligned = align_bev_to_patches(bev, geom);
  return build_uniscene(pc_aligned, img_hat, ps);
}

}  // namespace trackteller::uniscene
