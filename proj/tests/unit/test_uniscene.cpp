#include <doctest.h>

#include <cmath>

#include "trackteller/gradcheck.hpp"
#include "trackteller/uniscene.hpp"

using namespace trackteller;
namespace nc = trackteller::numcore;
namespace sk = trackteller::scenekit;
namespace us = trackteller::uniscene;
using nc::Tensor;

namespace {

Tensor random_tensor(nc::Shape shape, nc::Rng& rng, bool rg = false) {
  std::vector<double> v(nc::numel(shape));
  for (auto& e : v) e = rng.uniform(-1.0, 1.0);
  return Tensor::from(std::move(shape), std::move(v), rg);
}

sk::WorldConfig tiny_world() {
  sk::WorldConfig cfg;
  cfg.n_views = 2;
  cfg.n_patches = 4;
  cfg.d_img = 16;
  cfg.d_pc = 8;
  cfg.bev_h = 4;
  cfg.bev_w = 6;
  return cfg;
}

}  // namespace

TEST_CASE("project_modalities: identity and zero") {
  sk::WorldConfig cfg = tiny_world();
  nc::ParamStore ps;
  int d = 8;
  // identity projection for pc (d == d_pc), random for img
  std::vector<double> eye(d * d, 0.0);
  for (int i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  ps.declare_raw("uniscene.w_pc", {std::size_t(d), std::size_t(d)}, eye);
  nc::Rng rng(1);
  ps.declare("uniscene.w_img", {std::size_t(d), std::size_t(cfg.d_img)}, rng);

  nc::Rng data_rng(2);
  Tensor f_pc = random_tensor({std::size_t(cfg.bev_cells()), std::size_t(d)}, data_rng);
  Tensor f_img = Tensor::zeros({std::size_t(cfg.total_patches()), std::size_t(cfg.d_img)});
  auto [pc_hat, img_hat] = us::project_modalities(f_pc, f_img, ps);
  for (std::size_t i = 0; i < f_pc.size(); ++i) CHECK(pc_hat.at(i) == f_pc.at(i));
  for (std::size_t i = 0; i < img_hat.size(); ++i) CHECK(img_hat.at(i) == 0.0);

  // random case against the raw matmul
  Tensor w = ps.param("uniscene.w_img");
  Tensor f2 = random_tensor({3, std::size_t(cfg.d_img)}, data_rng);
  Tensor expect = nc::matmul(f2, nc::transpose(w));
  Tensor got = nc::linear(f2, w);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got.at(i) == expect.at(i));
}

TEST_CASE("lift_image_to_bev: permutation, mean of duplicates, scatter oracle") {
  us::BevGridSpec grid{2, 2, -2, 2, -2, 2};
  // geometry with one patch per cell center
  sk::PatchGeometry geom;
  geom.patches = {{-1, -1, 0}, {1, -1, 0}, {-1, 1, 0}, {1, 1, 0}};
  nc::Rng rng(3);
  Tensor f = random_tensor({4, 5}, rng);
  Tensor out = us::lift_image_to_bev(f, geom, grid);
  // patch p goes to cell p here (row-major over y then x)
  for (int p = 0; p < 4; ++p)
    for (int c = 0; c < 5; ++c) CHECK(out.at(p, c) == f.at(p, c));

  // two identical tokens into one cell keep the token
  sk::PatchGeometry geom2;
  geom2.patches = {{-1, -1, 0}, {-1, -1, 0}};
  Tensor row = random_tensor({1, 5}, rng);
  Tensor two = nc::concat_rows({row, row});
  Tensor out2 = us::lift_image_to_bev(two, geom2, grid);
  for (int c = 0; c < 5; ++c) CHECK(out2.at(0, c) == doctest::Approx(row.at(0, c)));

  // random layout vs naive scatter-mean loop
  sk::WorldConfig cfg = tiny_world();
  auto g2 = us::grid_from_config(cfg);
  auto geom3 = sk::build_patch_geometry(cfg);
  Tensor f3 = random_tensor({std::size_t(cfg.total_patches()), 4}, rng);
  Tensor lifted = us::lift_image_to_bev(f3, geom3, g2);
  std::vector<double> acc(g2.cells() * 4, 0.0);
  std::vector<int> cnt(g2.cells(), 0);
  for (std::size_t p = 0; p < geom3.patches.size(); ++p) {
    int cell = g2.cell_of(geom3.patches[p].x, geom3.patches[p].y);
    cnt[cell]++;
    for (int c = 0; c < 4; ++c) acc[cell * 4 + c] += f3.at(p, c);
  }
  for (int cell = 0; cell < g2.cells(); ++cell)
    for (int c = 0; c < 4; ++c) {
      double expect = cnt[cell] ? acc[cell * 4 + c] / cnt[cell] : 0.0;
      CHECK(lifted.at(cell, c) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("fuse_bev: zero inputs with zero bias give zero output") {
  us::BevGridSpec grid{3, 3, -3, 3, -3, 3};
  int d = 4;
  nc::ParamStore ps;
  nc::Rng rng(5);
  ps.declare("uniscene.conv.w", {std::size_t(d), std::size_t(18 * d)}, rng);
  ps.declare_zeros("uniscene.conv.b", {std::size_t(d)});
  Tensor z = Tensor::zeros({9, std::size_t(d)});
  auto bev = us::fuse_bev(z, z, grid, ps);
  for (std::size_t i = 0; i < bev.tokens.size(); ++i) CHECK(bev.tokens.at(i) == 0.0);
}

TEST_CASE("fuse_bev: center-only kernel acts as a per-cell affine map") {
  us::BevGridSpec grid{2, 3, -3, 3, -2, 2};
  int d = 3, cin = 2 * d;
  nc::ParamStore ps;
  nc::Rng rng(7);
  // kernel supported only at the center tap (k=4)
  Tensor center_w = random_tensor({std::size_t(d), std::size_t(cin)}, rng);
  std::vector<double> w(d * 9 * cin, 0.0);
  for (int o = 0; o < d; ++o)
    for (int c = 0; c < cin; ++c) w[o * 9 * cin + 4 * cin + c] = center_w.at(o, c);
  ps.declare_raw("uniscene.conv.w", {std::size_t(d), std::size_t(9 * cin)}, w);
  Tensor b = random_tensor({std::size_t(d)}, rng);
  ps.declare_raw("uniscene.conv.b", {std::size_t(d)}, b.data());

  Tensor img = random_tensor({6, std::size_t(d)}, rng);
  Tensor pc = random_tensor({6, std::size_t(d)}, rng);
  auto bev = us::fuse_bev(img, pc, grid, ps);
  Tensor direct = nc::relu(nc::linear(nc::concat_lastdim(img, pc), center_w, b));
  for (std::size_t i = 0; i < direct.size(); ++i)
    CHECK(bev.tokens.at(i) == doctest::Approx(direct.at(i)).epsilon(1e-12));
}

TEST_CASE("fuse_bev: gradient through the convolution") {
  us::BevGridSpec grid{2, 2, -2, 2, -2, 2};
  int d = 3;
  nc::ParamStore ps;
  nc::Rng rng(9);
  ps.declare("uniscene.conv.w", {std::size_t(d), std::size_t(18 * d)}, rng);
  ps.declare("uniscene.conv.b", {std::size_t(d)}, rng);
  Tensor img = random_tensor({4, std::size_t(d)}, rng);
  Tensor pc = random_tensor({4, std::size_t(d)}, rng);
  auto loss_fn = [&]() {
    return nc::mean_all(us::fuse_bev(img, pc, grid, ps).tokens);
  };
  auto report = nc::check_gradients(ps, loss_fn, 1e-4, 1e-4);
  CHECK(report.ok());
  CHECK(report.checked == ps.total_scalars());
}

TEST_CASE("align_bev_to_patches: constants, cell centers, bilinear oracle") {
  us::BevGridSpec grid{4, 6, -6, 6, -4, 4};
  int d = 3;

  // constant field stays constant under interpolation
  Tensor constant = Tensor::filled({std::size_t(grid.cells()), std::size_t(d)}, 2.5);
  sk::PatchGeometry geom;
  geom.patches = {{-5.2, 3.1, 0}, {0.3, -0.9, 0}, {5.9, 3.9, 0}, {-6.0, -4.0, 0}};
  us::BevGrid bev{grid, constant};
  Tensor aligned = us::align_bev_to_patches(bev, geom);
  for (std::size_t i = 0; i < aligned.size(); ++i)
    CHECK(aligned.at(i) == doctest::Approx(2.5).epsilon(1e-12));

  // a patch exactly at a cell center returns that cell's token
  nc::Rng rng(11);
  Tensor tokens = random_tensor({std::size_t(grid.cells()), std::size_t(d)}, rng);
  double cx = grid.x_min + (2 + 0.5) * grid.cell_w();
  double cy = grid.y_min + (1 + 0.5) * grid.cell_h();
  sk::PatchGeometry center_geom;
  center_geom.patches = {{cx, cy, 0}};
  us::BevGrid bev2{grid, tokens};
  Tensor at_center = us::align_bev_to_patches(bev2, center_geom);
  for (int c = 0; c < d; ++c)
    CHECK(at_center.at(0, c) == doctest::Approx(tokens.at(1 * 6 + 2, c)).epsilon(1e-12));

  // random geometry vs an explicit 4-neighbor interpolation
  sk::PatchGeometry rand_geom;
  for (int i = 0; i < 20; ++i)
    rand_geom.patches.push_back({rng.uniform(-7, 7), rng.uniform(-5, 5), 0});
  Tensor got = us::align_bev_to_patches(bev2, rand_geom);
  for (std::size_t p = 0; p < rand_geom.patches.size(); ++p) {
    double u = std::clamp((rand_geom.patches[p].x - grid.x_min) / grid.cell_w() - 0.5,
                          0.0, 5.0);
    double v = std::clamp((rand_geom.patches[p].y - grid.y_min) / grid.cell_h() - 0.5,
                          0.0, 3.0);
    int j0 = std::min(int(u), 4), i0 = std::min(int(v), 2);
    double fu = u - j0, fv = v - i0;
    for (int c = 0; c < d; ++c) {
      double expect = (1 - fu) * (1 - fv) * tokens.at(i0 * 6 + j0, c) +
                      fu * (1 - fv) * tokens.at(i0 * 6 + j0 + 1, c) +
                      (1 - fu) * fv * tokens.at((i0 + 1) * 6 + j0, c) +
                      fu * fv * tokens.at((i0 + 1) * 6 + j0 + 1, c);
      CHECK(got.at(p, c) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("build_uniscene: gate fixed points") {
  int d = 4;
  nc::ParamStore ps;
  ps.declare_zeros("uniscene.w_g", {std::size_t(d), std::size_t(2 * d)});
  nc::Rng rng(13);
  Tensor a = random_tensor({5, std::size_t(d)}, rng);
  Tensor b = random_tensor({5, std::size_t(d)}, rng);

  // zero gate weights: G = 0.5, U = (a+b)/2
  auto u = us::build_uniscene(a, b, ps);
  for (std::size_t i = 0; i < u.tokens.size(); ++i)
    CHECK(u.tokens.at(i) == doctest::Approx((a.at(i) + b.at(i)) / 2).epsilon(1e-12));

  // equal inputs pass through unchanged regardless of the gate
  nc::ParamStore ps2;
  ps2.declare("uniscene.w_g", {std::size_t(d), std::size_t(2 * d)}, rng);
  auto u2 = us::build_uniscene(a, a, ps2);
  for (std::size_t i = 0; i < u2.tokens.size(); ++i)
    CHECK(u2.tokens.at(i) == doctest::Approx(a.at(i)).epsilon(1e-12));
}

TEST_CASE("gate boundedness and convexity over random seeds") {
  int d = 6;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    nc::Rng rng(seed);
    nc::ParamStore ps;
    ps.declare("uniscene.w_g", {std::size_t(d), std::size_t(2 * d)}, rng);
    Tensor a = random_tensor({4, std::size_t(d)}, rng);
    Tensor b = random_tensor({4, std::size_t(d)}, rng);
    Tensor gate = nc::sigmoid(
        nc::linear(nc::concat_lastdim(a, b), ps.param("uniscene.w_g")));
    for (std::size_t i = 0; i < gate.size(); ++i) {
      CHECK(gate.at(i) > 0.0);
      CHECK(gate.at(i) < 1.0);
    }
    auto u = us::build_uniscene(a, b, ps);
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      double lo = std::min(a.at(i), b.at(i)), hi = std::max(a.at(i), b.at(i));
      CHECK(u.tokens.at(i) >= lo - 1e-12);
      CHECK(u.tokens.at(i) <= hi + 1e-12);
    }
  }
}

TEST_CASE("lift then align reproduces constants exactly") {
  // align reads the 4 cells around each patch point, so the adjointness
  // guarantee needs a patch set that populates every cell it samples; a
  // patch at every cell center is the canonical such geometry
  us::BevGridSpec grid{4, 6, -6, 6, -4, 4};
  sk::PatchGeometry geom;
  for (int i = 0; i < grid.h; ++i)
    for (int j = 0; j < grid.w; ++j)
      geom.patches.push_back({grid.x_min + (j + 0.5) * grid.cell_w(),
                              grid.y_min + (i + 0.5) * grid.cell_h(), 0});
  int d = 5;
  Tensor constant =
      Tensor::filled({geom.patches.size(), std::size_t(d)}, -1.75);
  Tensor lifted = us::lift_image_to_bev(constant, geom, grid);
  us::BevGrid bev{grid, lifted};
  Tensor back = us::align_bev_to_patches(bev, geom);
  for (std::size_t i = 0; i < back.size(); ++i)
    CHECK(back.at(i) == -1.75);
}

TEST_CASE("full uniscene path: shape contract and end-to-end gradients") {
  sk::WorldConfig cfg = tiny_world();
  cfg.n_objects = 3;
  cfg.T = 2;
  auto grid = us::grid_from_config(cfg);
  auto geom = sk::build_patch_geometry(cfg);
  int d = 6;
  nc::ParamStore ps;
  nc::Rng rng(17);
  us::declare_params(ps, cfg.d_pc, cfg.d_img, d, rng);

  sk::Sequence seq = sk::simulate_sequence(cfg, 4);
  Tensor f_pc = sk::encode_lidar_bev(seq.frames[0], cfg);
  Tensor f_img = sk::encode_views(seq.frames[0], cfg, geom, seq.seed);

  auto u = us::fuse_frame(f_pc, f_img, geom, grid, ps);
  CHECK(u.tokens.rows() == std::size_t(cfg.total_patches()));
  CHECK(u.tokens.cols() == std::size_t(d));
  for (std::size_t i = 0; i < u.tokens.size(); ++i)
    CHECK(std::isfinite(u.tokens.at(i)));

  auto loss_fn = [&]() {
    return nc::mean_all(us::fuse_frame(f_pc, f_img, geom, grid, ps).tokens);
  };
  auto report = nc::check_gradients(ps, loss_fn, 1e-4, 1e-3);
  CHECK_MESSAGE(report.ok(), report.failures.size(), " gradient failures");
  CHECK(report.checked == ps.total_scalars());
}
