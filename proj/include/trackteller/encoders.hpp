#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "trackteller/scene.hpp"
#include "trackteller/tensor.hpp"

namespace trackteller::scenekit {

using numcore::Tensor;

// Static per-token geometry of the camera-view patch grid: each view is a
// yaw sector, split into a radial x angular grid on the ground plane.
// Token order: view-major, then radial bin, then angular bin.
struct PatchGeometry {
  struct Patch {
    double x, y;    // ground point of the patch center
    double range;   // distance from the ego origin
  };
  std::vector<Patch> patches;
  int n_views = 0, per_view = 0, side = 0;
  double r_min = 0, r_max = 0;

  int token_of(double x, double y) const {
    double r = std::hypot(x, y);
    double ang = std::atan2(y, x);
    double sector_w = 2.0 * kPi / n_views;
    int view = std::clamp(static_cast<int>((ang + kPi) / sector_w), 0, n_views - 1);
    double rel = ang + kPi - view * sector_w;
    int aj = std::clamp(static_cast<int>(rel / (sector_w / side)), 0, side - 1);
    int ri = std::clamp(static_cast<int>((r - r_min) / ((r_max - r_min) / side)),
                        0, side - 1);
    return view * per_view + ri * side + aj;
  }
};

inline PatchGeometry build_patch_geometry(const WorldConfig& cfg) {
  PatchGeometry g;
  g.n_views = cfg.n_views;
  g.per_view = cfg.n_patches;
  g.side = cfg.patch_side();
  g.r_min = cfg.patch_r_min;
  g.r_max = cfg.patch_r_max;
  double sector_w = 2.0 * kPi / cfg.n_views;
  double r_step = (g.r_max - g.r_min) / g.side;
  for (int v = 0; v < cfg.n_views; ++v) {
    double sector_start = -kPi + v * sector_w;
    for (int ri = 0; ri < g.side; ++ri) {
      double r = g.r_min + (ri + 0.5) * r_step;
      for (int aj = 0; aj < g.side; ++aj) {
        double ang = sector_start + (aj + 0.5) * (sector_w / g.side);
        g.patches.push_back({r * std::cos(ang), r * std::sin(ang), r});
      }
    }
  }
  return g;
}

// Per-cell point statistics [count, mean z, max z, mean intensity] tiled
// across the channel dimension. Points outside the metric range clamp to
// border cells; empty cells are zero rows.
inline Tensor encode_lidar_bev(const FrameSample& frame, const WorldConfig& cfg) {
  const int h = cfg.bev_h, w = cfg.bev_w;
  const double cell_w = (cfg.x_max - cfg.x_min) / w;
  const double cell_h = (cfg.y_max - cfg.y_min) / h;
  std::vector<double> count(h * w, 0), sum_z(h * w, 0), max_z(h * w, 0),
      sum_i(h * w, 0);
  for (const auto& p : frame.points) {
    int col = std::clamp(static_cast<int>((p.x - cfg.x_min) / cell_w), 0, w - 1);
    int row = std::clamp(static_cast<int>((p.y - cfg.y_min) / cell_h), 0, h - 1);
    int cell = row * w + col;
    count[cell] += 1.0;
    sum_z[cell] += p.z;
    max_z[cell] = std::max(max_z[cell], p.z);
    sum_i[cell] += p.intensity;
  }
  std::vector<double> out(static_cast<std::size_t>(h) * w * cfg.d_pc, 0.0);
  for (int cell = 0; cell < h * w; ++cell) {
    if (count[cell] == 0) continue;
    double stats[4] = {count[cell], sum_z[cell] / count[cell], max_z[cell],
                       sum_i[cell] / count[cell]};
    for (int c = 0; c < cfg.d_pc; ++c)
      out[static_cast<std::size_t>(cell) * cfg.d_pc + c] = stats[c % 4];
  }
  return Tensor::from({static_cast<std::size_t>(h) * w,
                       static_cast<std::size_t>(cfg.d_pc)},
                      std::move(out));
}

constexpr double kViewNoiseSigma = 0.05;

// One token per view patch: class/color one-hots plus normalized range
// for the nearest visible object in the patch, Gaussian noise everywhere.
// Background patches are pure noise. The noise stream is keyed by
// (sequence seed, frame, token), so a token's value depends only on its
// own content.
inline Tensor encode_views(const FrameSample& frame, const WorldConfig& cfg,
                           const PatchGeometry& geom, std::uint64_t seq_seed) {
  const int P = cfg.total_patches();
  const int d = cfg.d_img;
  std::vector<double> out(static_cast<std::size_t>(P) * d, 0.0);

  // nearest visible object per patch
  std::vector<const ObjectState*> owner(P, nullptr);
  for (const auto& o : frame.objects) {
    if (!o.visible) continue;
    int tok = geom.token_of(o.x, o.y);
    double r = std::hypot(o.x, o.y);
    if (!owner[tok] || r < std::hypot(owner[tok]->x, owner[tok]->y))
      owner[tok] = &o;
  }

  Rng base = Rng(seq_seed).child("viewnoise")
                 .child(static_cast<std::uint64_t>(frame.t));
  for (int tok = 0; tok < P; ++tok) {
    double* row = &out[static_cast<std::size_t>(tok) * d];
    if (owner[tok]) {
      const auto& o = *owner[tok];
      row[static_cast<int>(o.cls)] = 1.0;
      row[kNumClasses + static_cast<int>(o.color)] = 1.0;
      row[kNumClasses + kNumColors] = std::hypot(o.x, o.y) / geom.r_max;
    }
    Rng noise = base.child(static_cast<std::uint64_t>(tok));
    for (int c = 0; c < d; ++c) row[c] += noise.gauss(0.0, kViewNoiseSigma);
  }
  return Tensor::from({static_cast<std::size_t>(P), static_cast<std::size_t>(d)},
                      std::move(out));
}

}  // namespace trackteller::scenekit
