#include <cmath>
#include <numbers>

#include <doctest.h>

#include "boxalign/grad.hpp"
#include "oracles.hpp"

using namespace boxalign;

namespace {
const CameraIntrinsics kKittiK{721.5377, 721.5377, 609.5593, 172.854};
}

TEST_CASE("spatial gradient vanishes at the ground truth") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Box3D box = oracles::random_box(rng);
    const GradResult g = grad_spatial_loss(box, box);
    for (double partial : g.partials) {
      CHECK(std::abs(partial) <= 1e-12);
    }
  }
}

TEST_CASE("spatial gradient points toward the ground truth") {
  // gt sits at +x of pred, so increasing cx must reduce the loss
  const Box3D pred{0, 0, 0, 1, 1, 1, 0};
  const Box3D gt{10, 0, 0, 1, 1, 1, 0};
  const GradResult g = grad_spatial_loss(pred, gt);
  CHECK(g.partials[static_cast<std::size_t>(BoxParam::kCx)] < 0.0);
}

TEST_CASE("projection gradient vanishes at the exact rect") {
  Rng rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const Box3D box = oracles::random_box(rng);
    const Rect2D exact = projected_enclosing_rect(box, kKittiK);
    const GradResult g = grad_projection_loss(box, kKittiK, exact);
    for (double partial : g.partials) {
      CHECK(std::abs(partial) <= 1e-9);
    }
  }
}

TEST_CASE("projection gradient chases a shifted rect") {
  const Box3D box{0.5, 0.8, 18, 4.0, 1.6, 1.8, 0.2};
  Rect2D target = projected_enclosing_rect(box, kKittiK);
  target.umin += 10.0;
  target.umax += 10.0;
  const GradResult g = grad_projection_loss(box, kKittiK, target);
  // target moved toward +u, so the loss drops as cx grows
  CHECK(g.partials[static_cast<std::size_t>(BoxParam::kCx)] < 0.0);
}

TEST_CASE("depth gradient only touches the height slot") {
  const Box3D box{1, 1, 24, 4.1, 1.55, 1.7, 0.7};
  const double focal = 721.5, h2d = 47.0, z_err = 0.5, z_gt = 25.0, sigma = 0.8;
  const GradResult g = grad_depth_loss(box, focal, h2d, z_err, z_gt, sigma);
  const double residual = focal * box.h / h2d + z_err - z_gt;
  const double expected =
      std::numbers::sqrt2 / sigma * (residual >= 0 ? 1.0 : -1.0) * focal / h2d;
  for (std::size_t p = 0; p < kBoxParamCount; ++p) {
    if (p == static_cast<std::size_t>(BoxParam::kH)) {
      CHECK(g.partials[p] == doctest::Approx(expected).epsilon(1e-12));
    } else {
      CHECK(g.partials[p] == 0.0);
    }
  }
}

TEST_CASE("finite differences validate the quadratic functional") {
  LossInstance in;
  in.pred = {1.0, -2.0, 3.0, 4.0, 0.5, 1.5, -0.7};
  const GradReport r = finite_diff_check(LossId::kQuadratic, in, 1e-5);
  CHECK(r.max_rel_err <= 1e-9);
  for (std::size_t p = 0; p < kBoxParamCount; ++p) {
    CHECK(r.analytic[p] ==
          doctest::Approx(2.0 * box_param(in.pred, p)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(finite_diff_check(LossId::kQuadratic, in, 0.0),
                  std::invalid_argument);
}

TEST_CASE("finite differences agree with the analytic gradients") {
  const std::pair<LossId, const char*> losses[] = {
      {LossId::kSpatial, "spatial"},
      {LossId::kProjection, "projection"},
      {LossId::kDepth, "depth"}};
  Rng master(611);
  for (const auto& [id, name] : losses) {
    CAPTURE(name);
    Rng rng = master.fork(static_cast<std::uint64_t>(id));
    for (int i = 0; i < 100; ++i) {
      const LossInstance in = random_instance(id, rng);
      const GradReport r = finite_diff_check(id, in, 1e-5);
      CHECK(!r.tie_flag);
      CHECK(r.max_rel_err <= 1e-5);
    }
  }
}

TEST_CASE("a genuine corner-projection tie raises the flag") {
  // cx = l/2 puts one corner column at x = 0, so u = cu is attained at two
  // different depths with different du/dcx.
  const Box3D tied{1.0, 0.0, 10.0, 2.0, 2.0, 2.0, 0.0};
  const CameraIntrinsics k{100, 100, 50, 50};
  const Rect2D rect{30, 70, 30, 70};
  const GradResult g = grad_projection_loss(tied, k, rect);
  CHECK(g.tie);

  LossInstance in;
  in.pred = tied;
  in.intrinsics = k;
  in.gt_rect = rect;
  CHECK(finite_diff_check(LossId::kProjection, in).tie_flag);

  // equal yaws tie the gt corners on the pred axes
  const Box3D a{0, 0, 20, 4.0, 1.5, 1.8, 0.3};
  Box3D b = a;
  b.cx += 0.4;
  CHECK(grad_spatial_loss(a, b).tie);
}

TEST_CASE("nested configurations sit on exact translation plateaus") {
  // ground truth strictly inside the prediction on every axis: translating
  // the prediction moves intersection, union, and hull identically, so the
  // center partials are exactly zero (and FD instances must exclude these).
  const Box3D big{2, 1, 20, 6, 6, 6, 0.4};
  Box3D small = big;
  small.l = small.h = small.w = 1.0;
  const GradResult g = grad_spatial_loss(big, small);
  CHECK(g.partials[0] == 0.0);
  CHECK(g.partials[1] == 0.0);
  CHECK(g.partials[2] == 0.0);
  CHECK(g.partials[4] != 0.0);  // dims still pull

  // projected rect nested in the target with both v-extremes on the near
  // face: d(v)/d(cy) is fv/z with the same z, so the cy partial cancels.
  const Box3D upright{0.2, 0.1, 15, 4, 1.6, 1.8, 0.0};
  Rect2D fat = projected_enclosing_rect(upright, kKittiK);
  fat.umin -= 25.0;
  fat.umax += 25.0;
  fat.vmin -= 25.0;
  fat.vmax += 25.0;
  const GradResult gp = grad_projection_loss(upright, kKittiK, fat);
  CHECK(gp.partials[1] == 0.0);
}

TEST_CASE("gradients are deterministic") {
  Rng rng(3111);
  const LossInstance in = random_instance(LossId::kSpatial, rng);
  const GradResult first = grad_spatial_loss(in.pred, in.gt);
  for (int rep = 0; rep < 5; ++rep) {
    const GradResult again = grad_spatial_loss(in.pred, in.gt);
    for (std::size_t p = 0; p < kBoxParamCount; ++p) {
      CHECK(again.partials[p] == first.partials[p]);
    }
  }
}
