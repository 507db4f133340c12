#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "trackteller/gradcheck.hpp"
#include "trackteller/temporal.hpp"

using namespace trackteller;
namespace nc = trackteller::numcore;
namespace tp = trackteller::temporal;
using nc::Tensor;

namespace {

tp::TemporalDims tiny_dims() {
  tp::TemporalDims d;
  d.d = 8;
  d.heads = 2;
  d.k = 3;
  d.ffn_hidden = 12;
  d.head_hidden = 12;
  return d;
}

nc::ParamStore temporal_store(const tp::TemporalDims& dims, std::uint64_t seed,
                              int m = 4) {
  nc::ParamStore ps;
  nc::Rng rng(seed);
  tp::declare_memory_params(ps, dims, rng);
  tp::declare_tempenc_params(ps, dims, rng);
  tp::declare_futreg_params(ps, dims, rng);
  tp::declare_score_params(ps, dims, rng);
  // reference anchors shared with the detection head
  std::vector<double> pts;
  for (int i = 0; i < m; ++i) {
    pts.push_back(-10.0 + 5.0 * i);
    pts.push_back(i % 2 ? 3.0 : -3.0);
  }
  ps.declare_raw("prehead.refpoints", {std::size_t(m), 2}, pts);
  return ps;
}

Tensor random_tensor(nc::Shape shape, nc::Rng& rng) {
  std::vector<double> v(nc::numel(shape));
  for (auto& e : v) e = rng.uniform(-1.0, 1.0);
  return Tensor::from(std::move(shape), std::move(v));
}

Box3D at(double x, double y) {
  Box3D b;
  b.x = x;
  b.y = y;
  return b;
}

}  // namespace

TEST_CASE("attend_memory: empty bank returns the input unchanged") {
  auto dims = tiny_dims();
  auto ps = temporal_store(dims, 1);
  tp::MemoryBank bank(dims.k);
  nc::Rng rng(2);
  Tensor z = random_tensor({4, std::size_t(dims.d)}, rng);
  Tensor out = tp::attend_memory(z, bank, ps, dims);
  CHECK(out.node() == z.node());  // exact fallback, same tensor
}

TEST_CASE("attend_memory: zero output projection reduces to the residual") {
  auto dims = tiny_dims();
  auto ps = temporal_store(dims, 3);
  auto& wo = ps.param("mem.attn.wo");
  std::fill(wo.mutable_data().begin(), wo.mutable_data().end(), 0.0);
  nc::Rng rng(4);
  Tensor z = random_tensor({4, std::size_t(dims.d)}, rng);
  tp::MemoryBank bank(dims.k);
  bank.push(z, 0);
  Tensor out = tp::attend_memory(z, bank, ps, dims);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(out.at(i) == z.at(i));
}

TEST_CASE("attend_memory: gradient flows through bank entries across frames") {
  auto dims = tiny_dims();
  auto ps = temporal_store(dims, 5);
  nc::Rng rng(6);
  Tensor base = random_tensor({4, std::size_t(dims.d)}, rng);
  auto loss_fn = [&]() {
    // frame 0 output feeds the bank, frame 1 attends to it
    Tensor z0 = tp::temp_encode(base, ps);
    tp::MemoryBank bank(dims.k);
    bank.push(z0, 0);
    Tensor z1 = tp::attend_memory(base, bank, ps, dims);
    return nc::mean_all(z1);
  };
  auto report = nc::check_gradients(ps, loss_fn, 1e-4, 1e-3);
  CHECK_MESSAGE(report.ok(), report.failures.size(), " failures");
  // tempenc params only matter through the stored entry; gradient must be
  // nonzero there
  auto grads = nc::backward(loss_fn(), ps);
  double mag = 0;
  for (double g : grads.at("tempenc.ffn.w1")) mag += std::fabs(g);
  CHECK(mag > 0.0);
}

TEST_CASE("memory bank: push, evict, strictly increasing frames") {
  tp::MemoryBank bank(3);
  CHECK(bank.empty());
  nc::Rng rng(7);
  Tensor z = random_tensor({2, 4}, rng);
  tp::update_memory(bank, z, 0);
  CHECK(bank.size() == 1);

  for (int t = 1; t <= 5; ++t) tp::update_memory(bank, z, t);
  CHECK(bank.size() == 3);
  CHECK(bank.entries().front().frame == 3);  // oldest evicted
  CHECK(bank.entries().back().frame == 5);

  int prev = -1;
  for (const auto& e : bank.entries()) {
    CHECK(e.frame > prev);
    prev = e.frame;
  }
}

TEST_CASE("temp_encode: zero ffn weights are the identity; gradients pass") {
  auto dims = tiny_dims();
  auto ps = temporal_store(dims, 8);
  for (const char* name : {"tempenc.ffn.w2", "tempenc.ffn.b2"}) {
    auto& t = ps.param(name);
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  }
  nc::Rng rng(9);
  Tensor z = random_tensor({5, std::size_t(dims.d)}, rng);
  Tensor out = tp::temp_encode(z, ps);
  CHECK(out.shape() == z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(out.at(i) == z.at(i));

  auto ps2 = temporal_store(dims, 10);
  auto loss_fn = [&]() { return nc::mean_all(tp::temp_encode(z, ps2)); };
  auto report = nc::check_gradients(ps2, loss_fn, 1e-4, 1e-3);
  CHECK(report.ok());
}

TEST_CASE("future_reg: empty bank gives empty proposals") {
  auto dims = tiny_dims();
  auto ps = temporal_store(dims, 11);
  tp::MemoryBank bank(dims.k);
  auto props = tp::future_reg(bank, ps, dims);
  CHECK(props.empty());
  CHECK(props.count() == 0);
}

TEST_CASE("future_reg: duplicated history with equal position embeddings changes nothing") {
  auto dims = tiny_dims();
  auto ps = temporal_store(dims, 12);
  // make age-0 and age-1 position embeddings identical
  auto& pos = ps.param("futreg.pos");
  for (int c = 0; c < dims.d; ++c)
    pos.mutable_data()[1 * dims.d + c] = pos.at(0, c);

  nc::Rng rng(13);
  Tensor z = random_tensor({4, std::size_t(dims.d)}, rng);
  tp::MemoryBank one(dims.k);
  one.push(z, 0);
  auto single = tp::future_reg(one, ps, dims);

  tp::MemoryBank two(dims.k);
  two.push(z, 0);
  two.push(z, 1);
  auto doubled = tp::future_reg(two, ps, dims);

  REQUIRE(single.count() == doubled.count());
  for (std::size_t i = 0; i < single.box7.size(); ++i)
    CHECK(doubled.box7.at(i) == doctest::Approx(single.box7.at(i)).epsilon(1e-12));
  for (std::size_t i = 0; i < single.scores.size(); ++i)
    CHECK(doubled.scores.at(i) == doctest::Approx(single.scores.at(i)).epsilon(1e-12));
}

TEST_CASE("future_reg: slots and reference anchors line up") {
  auto dims = tiny_dims();
  auto ps = temporal_store(dims, 14);
  nc::Rng rng(15);
  Tensor z = random_tensor({4, std::size_t(dims.d)}, rng);
  tp::MemoryBank bank(dims.k);
  bank.push(z, 0);
  bank.push(z, 1);
  auto props = tp::future_reg(bank, ps, dims);
  REQUIRE(props.count() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(props.slots[i] == i);
    CHECK(props.scores.at(i, 0) > 0.0);
    CHECK(props.scores.at(i, 0) < 1.0);
    CHECK(props.boxes[i].w > 0.0);
  }
}

TEST_CASE("temporal_score: zero head weights give one half; rows permute") {
  auto dims = tiny_dims();
  auto ps = temporal_store(dims, 16);
  for (const char* name : {"score.w2", "score.b2"}) {
    auto& t = ps.param(name);
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  }
  nc::Rng rng(17);
  Tensor m = random_tensor({4, std::size_t(dims.d)}, rng);
  Tensor s = tp::temporal_score(m, ps);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s.at(i) == 0.5);

  auto ps2 = temporal_store(dims, 18);
  Tensor s2 = tp::temporal_score(m, ps2);
  for (std::size_t i = 0; i < s2.size(); ++i) {
    CHECK(s2.at(i) > 0.0);
    CHECK(s2.at(i) < 1.0);
  }
  std::vector<std::size_t> perm{3, 1, 0, 2};
  Tensor mp = nc::gather_rows(m, perm);
  Tensor sp = tp::temporal_score(mp, ps2);
  for (int i = 0; i < 4; ++i) CHECK(sp.at(i, 0) == s2.at(perm[i], 0));
}

TEST_CASE("temporal_score: range holds over many random inputs") {
  auto dims = tiny_dims();
  auto ps = temporal_store(dims, 19);
  nc::Rng rng(20);
  for (int trial = 0; trial < 2500; ++trial) {
    Tensor m = random_tensor({4, std::size_t(dims.d)}, rng);
    Tensor s = tp::temporal_score(m, ps);
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(s.at(i) > 0.0);
      CHECK(s.at(i) < 1.0);
    }
  }
}

TEST_CASE("merge_and_nms: single candidate, suppression, threshold") {
  tp::TemporalProposals none;
  auto single = tp::merge_and_nms({at(1, 1)}, {0.7}, none, 0.2, 2.0);
  REQUIRE(single.size() == 1);
  CHECK(single[0].score == 0.7);
  CHECK(single[0].slot == 0);

  // identical centers: only the higher score survives
  auto two = tp::merge_and_nms({at(1, 1), at(1, 1)}, {0.9, 0.8}, none, 0.0, 2.0);
  REQUIRE(two.size() == 1);
  CHECK(two[0].score == 0.9);

  // tau filters everything
  auto zero = tp::merge_and_nms({at(1, 1)}, {0.5}, none, 0.5, 2.0);
  CHECK(zero.empty());
}

TEST_CASE("merge_and_nms: idempotent and pairwise separated") {
  nc::Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Box3D> boxes;
    std::vector<double> scores;
    int n = 3 + static_cast<int>(rng.uniform_int(8));
    for (int i = 0; i < n; ++i) {
      boxes.push_back(at(rng.uniform(-10, 10), rng.uniform(-5, 5)));
      scores.push_back(rng.uniform(0.01, 0.99));
    }
    tp::TemporalProposals none;
    auto kept = tp::merge_and_nms(boxes, scores, none, 0.1, 2.0);
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j)
        CHECK(bev_distance(kept[i].box, kept[j].box) >= 2.0);

    // feeding the survivors back returns them unchanged
    std::vector<Box3D> kb;
    std::vector<double> ks;
    for (const auto& c : kept) {
      kb.push_back(c.box);
      ks.push_back(c.score);
    }
    auto again = tp::merge_and_nms(kb, ks, none, 0.1, 2.0);
    REQUIRE(again.size() == kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      CHECK(again[i].score == kept[i].score);
      CHECK(again[i].box.x == kept[i].box.x);
    }
  }
}

TEST_CASE("select_grounded: empty, tie-break, monotone invariance") {
  CHECK_FALSE(tp::select_grounded({}).has_value());

  std::vector<tp::Candidate> cands{
      {at(0, 0), 0.2, false, 2}, {at(5, 0), 0.7, false, 0}, {at(9, 0), 0.7, false, 1}};
  auto sel = tp::select_grounded(cands);
  REQUIRE(sel.has_value());
  CHECK(sel->slot == 0);  // tie on score, lower slot wins

  nc::Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<tp::Candidate> cs;
    int n = 2 + static_cast<int>(rng.uniform_int(6));
    for (int i = 0; i < n; ++i)
      cs.push_back({at(rng.uniform(-9, 9), rng.uniform(-4, 4)),
                    rng.uniform(0.05, 0.95), rng.uniform() < 0.3, i});
    auto before = tp::select_grounded(cs);
    // strictly increasing transform: a*x + b with a>0, then cube root
    double a = rng.uniform(0.5, 3.0), b = rng.uniform(-0.2, 0.2);
    auto transformed = cs;
    for (auto& c : transformed) c.score = std::cbrt(a * c.score + b + 1.0);
    auto after = tp::select_grounded(transformed);
    REQUIRE(before.has_value());
    REQUIRE(after.has_value());
    CHECK(before->slot == after->slot);
    CHECK(before->propagated == after->propagated);
  }
}

TEST_CASE("detected and propagated candidates merge with slot identity") {
  auto dims = tiny_dims();
  auto ps = temporal_store(dims, 23);
  nc::Rng rng(24);
  Tensor z = random_tensor({4, std::size_t(dims.d)}, rng);
  tp::MemoryBank bank(dims.k);
  bank.push(z, 0);
  auto his = tp::future_reg(bank, ps, dims);
  REQUIRE(his.count() == 4);

  std::vector<Box3D> det{at(-100, 0), at(-80, 0), at(-60, 0), at(-40, 0)};
  std::vector<double> s{0.9, 0.8, 0.7, 0.6};
  auto merged = tp::merge_and_nms(det, s, his, 0.0, 2.0);
  // every detected candidate is far from everything else, so all survive;
  // propagated ones survive NMS amongst themselves
  int det_count = 0, prop_count = 0;
  for (const auto& c : merged) (c.propagated ? prop_count : det_count)++;
  CHECK(det_count == 4);
  CHECK(prop_count >= 1);
  for (const auto& c : merged)
    if (c.propagated) CHECK(c.slot >= 0);
}
