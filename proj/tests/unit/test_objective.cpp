#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trackteller/gradcheck.hpp"
#include "trackteller/objective.hpp"

using namespace trackteller;
namespace nc = trackteller::numcore;
namespace sk = trackteller::scenekit;
namespace ob = trackteller::objective;
using nc::Tensor;

namespace {

sk::ObjectState gt_at(double x, double y, double z = 0.8, double yaw = 0) {
  sk::ObjectState o;
  o.cls = sk::ObjClass::car;
  o.x = x;
  o.y = y;
  o.z = z;
  o.w = 1.9;
  o.l = 4.5;
  o.h = 1.6;
  o.yaw = yaw;
  return o;
}

Box3D box_at(double x, double y) {
  Box3D b;
  b.x = x;
  b.y = y;
  return b;
}

// exhaustive assignment oracle on the same padded square matrix
double brute_force_cost(const std::vector<std::vector<double>>& cost) {
  int n = static_cast<int>(cost.size());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0;
    for (int i = 0; i < n; ++i) total += cost[i][perm[i]];
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

langground::FrameProposals props_from_box7(Tensor box7, std::vector<double> scores) {
  langground::FrameProposals p;
  std::size_t n = scores.size();
  p.box7 = box7;
  p.boxes = langground::decode_boxes(box7);
  p.scores = Tensor::from({n, 1}, std::move(scores));
  p.embeddings = Tensor::zeros({box7.rows(), 4});
  return p;
}

}  // namespace

TEST_CASE("solve_assignment matches brute force on random square instances") {
  nc::Rng rng(1);
  for (int trial = 0; trial < 60; ++trial) {
    int n = 2 + static_cast<int>(rng.uniform_int(4));  // up to 5x5
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (auto& row : cost)
      for (auto& c : row) c = rng.uniform(0.0, 10.0);
    auto sol = ob::solve_assignment(cost);
    double total = 0;
    std::vector<char> used(n, 0);
    for (int i = 0; i < n; ++i) {
      REQUIRE(sol[i] >= 0);
      CHECK(!used[sol[i]]);
      used[sol[i]] = 1;
      total += cost[i][sol[i]];
    }
    CHECK(total == doctest::Approx(brute_force_cost(cost)).epsilon(1e-9));
  }
}

TEST_CASE("match: no ground truth leaves every slot unmatched") {
  auto a = ob::match({box_at(0, 0), box_at(5, 5)}, {});
  CHECK(a.pairs.empty());
  CHECK(a.unmatched_slots == std::vector<int>{0, 1});
  CHECK(a.unmatched_gts.empty());
}

TEST_CASE("match: proximity pairing with hand-computed cost") {
  std::vector<Box3D> props{box_at(0, 0), box_at(10, 0)};
  std::vector<sk::ObjectState> gts{gt_at(0.5, 0), gt_at(9, 0)};
  auto a = ob::match(props, gts);
  REQUIRE(a.pairs.size() == 2);
  double total = 0;
  for (const auto& [slot, gt] : a.pairs) {
    total += std::hypot(props[slot].x - gts[gt].x, props[slot].y - gts[gt].y);
    if (slot == 0) CHECK(gt == 0);
    if (slot == 1) CHECK(gt == 1);
  }
  CHECK(total == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("match: distance gate discards far pairs") {
  std::vector<Box3D> props{box_at(0, 0), box_at(20, 0)};
  std::vector<sk::ObjectState> gts{gt_at(1, 0), gt_at(12, 0)};
  auto a = ob::match(props, gts, 4.0);
  REQUIRE(a.pairs.size() == 1);
  CHECK(a.pairs[0].first == 0);
  CHECK(a.pairs[0].second == 0);
  CHECK(a.unmatched_slots == std::vector<int>{1});
  CHECK(a.unmatched_gts == std::vector<int>{1});
}

TEST_CASE("match: equals exhaustive enumeration on small random instances") {
  nc::Rng rng(2);
  for (int trial = 0; trial < 40; ++trial) {
    int n = 1 + static_cast<int>(rng.uniform_int(6));
    int g = 1 + static_cast<int>(rng.uniform_int(6));
    std::vector<Box3D> props;
    std::vector<sk::ObjectState> gts;
    for (int i = 0; i < n; ++i)
      props.push_back(box_at(rng.uniform(-20, 20), rng.uniform(-8, 8)));
    for (int j = 0; j < g; ++j)
      gts.push_back(gt_at(rng.uniform(-20, 20), rng.uniform(-8, 8)));

    // oracle: padded square matrix over all permutations
    int s = std::max(n, g);
    std::vector<std::vector<double>> cost(s, std::vector<double>(s, 1e6));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < g; ++j)
        cost[i][j] = std::hypot(props[i].x - gts[j].x, props[i].y - gts[j].y);
    double best = brute_force_cost(cost);

    // ungated match must reach the same minimal real cost
    auto raw = ob::match(props, gts, 1e9);
    double raw_cost = 0;
    for (const auto& [slot, gt] : raw.pairs)
      raw_cost += std::hypot(props[slot].x - gts[gt].x, props[slot].y - gts[gt].y);
    int dummy_pairs = s - std::min(n, g);
    CHECK(raw_cost == doctest::Approx(best - dummy_pairs * 1e6).epsilon(1e-6));

    // gated match only ever drops pairs
    auto gated = ob::match(props, gts);
    CHECK(gated.pairs.size() <= raw.pairs.size());
    for (const auto& [slot, gt] : gated.pairs)
      CHECK(std::hypot(props[slot].x - gts[gt].x, props[slot].y - gts[gt].y) <=
            ob::kMatchGateMeters);
  }
}

TEST_CASE("focal_loss: gamma 0 with balancing off reduces to cross-entropy") {
  std::vector<double> s{0.1, 0.6, 0.93, 0.4};
  std::vector<int> labels{0, 1, 1, 0};
  Tensor scores = Tensor::from({4}, std::vector<double>(s));
  double loss = ob::focal_loss(scores, labels, /*alpha=*/1.0, /*gamma=*/0.0).item();
  double ce = 0;
  for (int i = 0; i < 4; ++i)
    ce += labels[i] ? -std::log(s[i]) : -std::log(1 - s[i]);
  ce /= 4;
  CHECK(loss == doctest::Approx(ce).epsilon(1e-12));
}

TEST_CASE("focal_loss: confident correct prediction vanishes") {
  Tensor scores = Tensor::from({1}, {0.999});
  double loss = ob::focal_loss(scores, {1}, 0.25, 2.0).item();
  CHECK(loss < 1e-5 * 0.25);
}

TEST_CASE("focal_loss: hand value at p=0.5, label 1") {
  Tensor scores = Tensor::from({1}, {0.5});
  double loss = ob::focal_loss(scores, {1}, 0.25, 2.0).item();
  // 0.25 * 0.25 * ln 2
  CHECK(loss == doctest::Approx(0.04332169878499658).epsilon(1e-12));
}

TEST_CASE("focal_loss: rejects scores outside the open unit interval") {
  CHECK_THROWS_AS(ob::focal_loss(Tensor::from({1}, {1.0}), {1}), DomainError);
  CHECK_THROWS_AS(ob::focal_loss(Tensor::from({1}, {0.0}), {0}), DomainError);
  CHECK_THROWS_AS(ob::focal_loss(Tensor::from({1}, {-0.2}), {0}), DomainError);
}

TEST_CASE("focal_loss: gradient against finite differences") {
  nc::ParamStore ps;
  ps.declare_raw("logits", {4}, {0.3, -0.4, 1.2, -2.0});
  std::vector<int> labels{1, 0, 0, 1};
  auto loss_fn = [&]() {
    return ob::focal_loss(nc::sigmoid(ps.param("logits")), labels, 0.25, 2.0);
  };
  auto report = nc::check_gradients(ps, loss_fn, 1e-5, 1e-4);
  CHECK(report.ok());
}

TEST_CASE("detection_loss: exact boxes give zero bbox term") {
  std::vector<sk::ObjectState> gts{gt_at(2, 1), gt_at(-5, 3)};
  Tensor box7 = ob::box7_targets(gts, {0, 1});
  auto props = props_from_box7(box7, {0.5, 0.5});
  auto assign = ob::match(props.boxes, gts);
  REQUIRE(assign.pairs.size() == 2);
  auto loss = ob::detection_loss(props, gts, assign);
  CHECK(loss.bbox.item() == 0.0);
  CHECK(loss.cls.item() > 0.0);
}

TEST_CASE("detection_loss: one meter of x offset costs 1/7") {
  std::vector<sk::ObjectState> gts{gt_at(2, 1)};
  Tensor exact = ob::box7_targets(gts, {0});
  std::vector<double> shifted = exact.data();
  shifted[0] += 1.0;  // dx = 1 m
  auto props = props_from_box7(Tensor::from({1, 7}, shifted), {0.5});
  auto assign = ob::match(props.boxes, gts);
  REQUIRE(assign.pairs.size() == 1);
  auto loss = ob::detection_loss(props, gts, assign);
  CHECK(loss.bbox.item() == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("detection_loss: empty ground truth means all-negative focal") {
  std::vector<sk::ObjectState> none;
  Tensor box7 = Tensor::from({2, 7}, {0, 0, 0, 0, 0, 0, 0, 5, 5, 0, 0, 0, 0, 0});
  auto props = props_from_box7(box7, {0.3, 0.7});
  auto assign = ob::match(props.boxes, none);
  auto loss = ob::detection_loss(props, none, assign);
  CHECK(loss.bbox.item() == 0.0);
  double expect = ob::focal_loss(props.scores, {0, 0}).item();
  CHECK(loss.cls.item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("yaw regression uses the wrapped angular difference") {
  std::vector<sk::ObjectState> gts{gt_at(0, 0, 0.8, 3.0)};
  Tensor exact = ob::box7_targets(gts, {0});
  std::vector<double> v = exact.data();
  v[6] = -3.0;  // vs gt yaw 3.0: raw diff -6.0, wrapped ~ 0.283
  auto props = props_from_box7(Tensor::from({1, 7}, v), {0.5});
  auto assign = ob::match(props.boxes, gts);
  auto loss = ob::detection_loss(props, gts, assign);
  double wrapped = std::fabs(sk::wrap_pi(-3.0 - 3.0));
  CHECK(loss.bbox.item() == doctest::Approx(wrapped / 7.0).epsilon(1e-9));
}

TEST_CASE("memory_loss: identical, orthogonal, inactive") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 0});
  Tensor b = Tensor::from({2, 2}, {1, 2, 0, 4});
  CHECK(ob::memory_loss(a, a, {0, 1}).item() == 0.0);
  // row 1 of a and b are orthogonal: 1 - cos = 1
  CHECK(ob::memory_loss(a, b, {1}).item() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ob::memory_loss(a, b, {}).item() == 0.0);
}

TEST_CASE("future_loss: exact, hand offset, inactive mask") {
  std::vector<sk::ObjectState> gts{gt_at(1, 1), gt_at(-4, 2)};
  temporal::TemporalProposals his;
  his.box7 = ob::box7_targets(gts, {0, 1});
  his.boxes = langground::decode_boxes(his.box7);
  his.slots = {0, 1};
  his.scores = Tensor::from({2, 1}, {0.5, 0.5});

  std::map<int, int> active{{0, 0}, {1, 1}};
  CHECK(ob::future_loss(his, gts, active).item() == 0.0);

  // one active slot, center off by (3,4,0), everything else exact
  std::vector<double> off = his.box7.data();
  off[0] += 3.0;
  off[1] += 4.0;
  temporal::TemporalProposals moved = his;
  moved.box7 = Tensor::from({2, 7}, off);
  moved.boxes = langground::decode_boxes(moved.box7);
  std::map<int, int> only0{{0, 0}};
  CHECK(ob::future_loss(moved, gts, only0).item() ==
        doctest::Approx(7.0 / 7.0).epsilon(1e-12));

  CHECK(ob::future_loss(moved, gts, {}).item() == 0.0);
}

TEST_CASE("grounding_loss: near-perfect, all-negative, hand value") {
  std::vector<double> good(16, 0.001);
  good[3] = 0.999;
  Tensor s = Tensor::from({16, 1}, std::move(good));
  CHECK(ob::grounding_loss(s, {3}).item() < 1e-4);

  std::vector<double> uniform(16, 0.5);
  Tensor u = Tensor::from({16, 1}, std::move(uniform));
  double loss = ob::grounding_loss(u, {5}).item();
  // one positive and 15 negatives at p_t = 0.5:
  // (alpha*0.25*ln2 + 15*(1-alpha)*0.25*ln2) / 16
  double ln2 = std::log(2.0);
  double expect = (0.25 * 0.25 * ln2 + 15 * 0.75 * 0.25 * ln2) / 16.0;
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));

  double all_neg = ob::grounding_loss(u, {}).item();
  double expect_neg = 0.75 * 0.25 * ln2;
  CHECK(all_neg == doctest::Approx(expect_neg).epsilon(1e-12));
}

TEST_CASE("total_loss: zero, single-term weighting, linearity") {
  std::vector<ob::FrameLoss> zero(3);
  auto z = ob::total_loss(zero, {});
  CHECK(z.total == 0.0);

  ob::FrameLoss one;
  one.cls = Tensor::scalar(1.0);
  auto t = ob::total_loss({one}, {});
  CHECK(t.total == doctest::Approx(2.0).epsilon(1e-12));  // default cls weight

  ob::FrameLoss f;
  f.cls = Tensor::scalar(0.3);
  f.bbox = Tensor::scalar(0.8);
  f.mem = Tensor::scalar(0.1);
  f.fut = Tensor::scalar(0.6);
  f.ground = Tensor::scalar(0.2);
  ob::FrameLoss doubled;
  doubled.cls = Tensor::scalar(0.6);
  doubled.bbox = Tensor::scalar(1.6);
  doubled.mem = Tensor::scalar(0.2);
  doubled.fut = Tensor::scalar(1.2);
  doubled.ground = Tensor::scalar(0.4);
  auto a = ob::total_loss({f}, {});
  auto b = ob::total_loss({doubled}, {});
  CHECK(b.total == doctest::Approx(2 * a.total).epsilon(1e-12));
  CHECK(a.total ==
        doctest::Approx(2.0 * 0.3 + 0.25 * 0.8 + 2.0 * 0.1 + 0.5 * 0.6 + 1.0 * 0.2)
            .epsilon(1e-12));

  for (const auto& br : {z, t, a, b}) {
    CHECK(br.cls >= 0.0);
    CHECK(br.bbox >= 0.0);
    CHECK(br.mem >= 0.0);
    CHECK(br.fut >= 0.0);
    CHECK(br.ground >= 0.0);
    CHECK(br.total >= 0.0);
  }
}
