#include <cmath>
#include <limits>
#include <numbers>

#include <doctest.h>

#include "boxalign/geometry.hpp"
#include "oracles.hpp"

using namespace boxalign;
constexpr double kPi = std::numbers::pi;

TEST_CASE("rotation_y basics") {
  const Mat3d id = rotation_y(0.0);
  for (int i = 0; i < 9; ++i) {
    CHECK(id.m[i] == Mat3d::identity().m[i]);
  }

  const Mat3d quarter = rotation_y(kPi / 2.0);
  const double expected[9] = {0, 0, 1, 0, 1, 0, -1, 0, 0};
  for (int i = 0; i < 9; ++i) {
    CHECK(quarter.m[i] == doctest::Approx(expected[i]).epsilon(1e-15));
  }

  CHECK_THROWS_AS(rotation_y(std::numeric_limits<double>::quiet_NaN()),
                  std::invalid_argument);
  CHECK_THROWS_AS(rotation_y(std::numeric_limits<double>::infinity()),
                  std::invalid_argument);
}

TEST_CASE("rotation_y is orthogonal and composes additively") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const double a = rng.uniform(-10.0, 10.0);
    const double b = rng.uniform(-10.0, 10.0);
    const Mat3d ra = rotation_y(a);

    // R^T R = I and det = +1
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double v = dot(ra.col(i), ra.col(j));
        CHECK(std::abs(v - (i == j ? 1.0 : 0.0)) < 1e-12);
      }
    }
    const auto& m = ra.m;
    const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) -
                       m[1] * (m[3] * m[8] - m[5] * m[6]) +
                       m[2] * (m[3] * m[7] - m[4] * m[6]);
    CHECK(std::abs(det - 1.0) < 1e-12);

    const Mat3d prod = ra * rotation_y(b);
    const Mat3d sum = rotation_y(a + b);
    for (int i = 0; i < 9; ++i) {
      CHECK(std::abs(prod.m[i] - sum.m[i]) < 1e-12);
    }
  }
}

TEST_CASE("corners of an axis-aligned unit-signs cube") {
  const Box3D box{0, 0, 0, 2, 2, 2, 0};
  const Corners3D c = corners_from_box(box);
  CHECK(c[0].x == 1.0);
  CHECK(c[0].y == 1.0);
  CHECK(c[0].z == 1.0);
  for (const auto& p : c) {
    CHECK(std::abs(std::abs(p.x) - 1.0) < 1e-15);
    CHECK(std::abs(std::abs(p.y) - 1.0) < 1e-15);
    CHECK(std::abs(std::abs(p.z) - 1.0) < 1e-15);
  }
}

TEST_CASE("quarter-turn corner permutation") {
  // local corner (2, 1, 1) of the l=4 box lands at (1, 1, -2)
  const Box3D box{0, 0, 0, 4, 2, 2, kPi / 2.0};
  const Corners3D c = corners_from_box(box);
  CHECK(c[0].x == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c[0].y == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c[0].z == doctest::Approx(-2.0).epsilon(1e-12));
}

TEST_CASE("corner mean recovers the center and edges recover dims") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const Box3D box = oracles::random_box(rng);
    const Corners3D c = corners_from_box(box);

    Vec3d mean{0, 0, 0};
    for (const auto& p : c) mean = mean + p;
    CHECK(std::abs(mean.x / 8.0 - box.cx) < 1e-9);
    CHECK(std::abs(mean.y / 8.0 - box.cy) < 1e-9);
    CHECK(std::abs(mean.z / 8.0 - box.cz) < 1e-9);

    for (const auto& [i, j] : kOppositeCorners) {
      CHECK(std::abs(0.5 * (c[i].x + c[j].x) - box.cx) < 1e-9);
      CHECK(std::abs(0.5 * (c[i].y + c[j].y) - box.cy) < 1e-9);
      CHECK(std::abs(0.5 * (c[i].z + c[j].z) - box.cz) < 1e-9);
    }

    CHECK(std::abs(norm(c[0] - c[3]) - box.l) < 1e-9);
    CHECK(std::abs(norm(c[0] - c[4]) - box.h) < 1e-9);
    CHECK(std::abs(norm(c[0] - c[1]) - box.w) < 1e-9);
  }
}

TEST_CASE("corner round-trip through reconstruction") {
  Rng rng(411);
  for (int trial = 0; trial < 200; ++trial) {
    Box3D box = oracles::random_box(rng);
    box.ry = rng.uniform(-kPi / 4.0, kPi / 4.0);  // yaw branch without ambiguity
    const Box3D back = oracles::box_from_corners(corners_from_box(box));
    CHECK(std::abs(back.cx - box.cx) < 1e-9);
    CHECK(std::abs(back.cy - box.cy) < 1e-9);
    CHECK(std::abs(back.cz - box.cz) < 1e-9);
    CHECK(std::abs(back.l - box.l) < 1e-9);
    CHECK(std::abs(back.h - box.h) < 1e-9);
    CHECK(std::abs(back.w - box.w) < 1e-9);
    CHECK(std::abs(back.ry - box.ry) < 1e-9);
  }
}

TEST_CASE("invalid boxes are rejected") {
  CHECK_THROWS_AS(corners_from_box(Box3D{0, 0, 0, -1, 1, 1, 0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(corners_from_box(Box3D{0, 0, 0, 1, 0, 1, 0}),
                  std::invalid_argument);
  Box3D nan_box{0, 0, 0, 1, 1, 1, 0};
  nan_box.cz = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(corners_from_box(nan_box), std::invalid_argument);
}

TEST_CASE("face normals") {
  const auto at0 = face_normals(Box3D{0, 0, 0, 1, 1, 1, 0});
  CHECK(at0[0].x == 1.0);
  CHECK(at0[0].z == 0.0);
  CHECK(at0[1].y == 1.0);
  CHECK(at0[2].x == 0.0);
  CHECK(at0[2].z == 1.0);

  const auto quarter = face_normals(Box3D{0, 0, 0, 1, 1, 1, kPi / 2.0});
  CHECK(std::abs(quarter[0].x - 0.0) < 1e-12);
  CHECK(std::abs(quarter[0].z - (-1.0)) < 1e-12);
  CHECK(std::abs(quarter[2].x - 1.0) < 1e-12);
  CHECK(std::abs(quarter[2].z - 0.0) < 1e-12);

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto normals = face_normals(Box3D{0, 0, 0, 1, 1, 1, rng.uniform(-10, 10)});
    for (const auto& a : normals) {
      CHECK(std::abs(norm(a) - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("pinhole projection") {
  const CameraIntrinsics k{100, 100, 50, 50};
  const Pixel on_axis = project_point(Vec3d{0, 0, 10}, k);
  CHECK(on_axis.u == 50.0);
  CHECK(on_axis.v == 50.0);

  const Pixel off_axis = project_point(Vec3d{1, 2, 10}, k);
  CHECK(off_axis.u == doctest::Approx(60.0).epsilon(1e-15));
  CHECK(off_axis.v == doctest::Approx(70.0).epsilon(1e-15));

  CHECK_THROWS_AS(project_point(Vec3d{1, 1, 0}, k), BehindCameraError);
  CHECK_THROWS_AS(project_point(Vec3d{1, 1, -3}, k), BehindCameraError);
  CHECK_THROWS_AS(project_point(Vec3d{1, 1, 1e-7}, k), BehindCameraError);
  CHECK_THROWS_AS(project_point(Vec3d{0, 0, 1}, CameraIntrinsics{0, 1, 0, 0}),
                  std::invalid_argument);
}

TEST_CASE("projection is scale-invariant along rays") {
  const CameraIntrinsics k{721.5377, 721.5377, 609.5593, 172.854};
  Rng rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec3d p{rng.uniform(-20, 20), rng.uniform(-10, 10), rng.uniform(1, 50)};
    const double lambda = rng.uniform(0.1, 10.0);
    const Pixel a = project_point(p, k);
    const Pixel b = project_point(lambda * p, k);
    CHECK(std::abs(a.u - b.u) < 1e-9);
    CHECK(std::abs(a.v - b.v) < 1e-9);
  }
}

TEST_CASE("normalize_yaw maps into (-pi, pi]") {
  CHECK(normalize_yaw(0.0) == 0.0);
  CHECK(normalize_yaw(kPi) == kPi);
  CHECK(normalize_yaw(-kPi) == kPi);
  CHECK(normalize_yaw(3.0 * kPi) == doctest::Approx(kPi).epsilon(1e-12));
  CHECK(normalize_yaw(2.5 * kPi) == doctest::Approx(0.5 * kPi).epsilon(1e-12));
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const double ry = rng.uniform(-50.0, 50.0);
    const double n = normalize_yaw(ry);
    CHECK(n > -kPi);
    CHECK(n <= kPi);
    // same angle modulo 2*pi
    CHECK(std::abs(std::remainder(n - ry, 2.0 * kPi)) < 1e-9);
  }
}
