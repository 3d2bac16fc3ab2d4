#include <cmath>
#include <string>

#include <doctest.h>

#include "boxalign/kitti.hpp"
#include "oracles.hpp"

using namespace boxalign;

namespace {

const char* kCarLine =
    "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 "
    "46.70 -1.59";
const char* kDontCareLine =
    "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 "
    "-1000 -10";
const char* kCalibText =
    "P0: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 "
    "7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 "
    "1.000000e+00 0.000000e+00\n"
    "P2: 721.5377 0.0 609.5593 44.85728 0.0 721.5377 172.854 0.2163791 0.0 "
    "0.0 1.0 0.002745884\n";

}  // namespace

TEST_CASE("label parsing") {
  const auto records = parse_label_file(kCarLine);
  REQUIRE(records.size() == 1);
  const LabelRecord& r = records[0];
  CHECK(r.category == "Car");
  CHECK(r.truncation == 0.0);
  CHECK(r.occlusion == 0);
  CHECK(r.alpha == -1.58);
  CHECK(r.rect.umin == 587.01);
  CHECK(r.rect.umax == 614.12);
  CHECK(r.rect.vmin == 173.33);
  CHECK(r.rect.vmax == 200.12);
  CHECK(r.h == 1.65);
  CHECK(r.w == 1.67);
  CHECK(r.l == 3.64);
  CHECK(r.x == -0.65);
  CHECK(r.y == 1.71);
  CHECK(r.z == 46.70);
  CHECK(r.ry == -1.59);
  CHECK(!r.score.has_value());
  CHECK(!is_dont_care(r));

  CHECK(parse_label_file("").empty());
  CHECK(parse_label_file("\n\n").empty());

  // optional 16th field is the score
  const auto scored = parse_label_file(std::string(kCarLine) + " 0.97\n");
  REQUIRE(scored.size() == 1);
  CHECK(scored[0].score.value() == 0.97);

  // unknown categories are preserved verbatim
  std::string exotic(kCarLine);
  exotic.replace(0, 3, "Tram");
  CHECK(parse_label_file(exotic)[0].category == "Tram");

  try {
    parse_label_file("Car 0.0 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 "
                     "3.64 -0.65 1.71 46.70\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 1);
  }
  try {
    parse_label_file(std::string(kCarLine) + "\nCar zero 0 0 0 0 0 0 1 1 1 0 0 "
                     "10 0\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("DontCare records carry sentinels and are skipped") {
  const auto records = parse_label_file(kDontCareLine);
  REQUIRE(records.size() == 1);
  CHECK(is_dont_care(records[0]));
  CHECK(records[0].occlusion == -1);
  CHECK(!label_to_box(records[0]).has_value());
}

TEST_CASE("label round-trip is lossless") {
  Rng rng(40);
  std::vector<LabelRecord> records;
  for (int i = 0; i < 50; ++i) {
    const Box3D box = oracles::random_box(rng);
    const Rect2D rect = projected_enclosing_rect(
        box, CameraIntrinsics{721.5377, 721.5377, 609.5593, 172.854});
    LabelRecord rec = label_from_box(box, rect);
    rec.truncation = rng.uniform01() < 0.5 ? 0.0 : rng.uniform01();
    rec.occlusion = static_cast<int>(rng.uniform_index(4));
    if (i % 3 == 0) rec.score = rng.uniform01();
    records.push_back(rec);
  }
  const auto reparsed = parse_label_file(serialize_label_file(records));
  REQUIRE(reparsed.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(reparsed[i].category == records[i].category);
    CHECK(reparsed[i].truncation == records[i].truncation);
    CHECK(reparsed[i].occlusion == records[i].occlusion);
    CHECK(reparsed[i].alpha == records[i].alpha);
    CHECK(reparsed[i].rect.umin == records[i].rect.umin);
    CHECK(reparsed[i].rect.umax == records[i].rect.umax);
    CHECK(reparsed[i].rect.vmin == records[i].rect.vmin);
    CHECK(reparsed[i].rect.vmax == records[i].rect.vmax);
    CHECK(reparsed[i].h == records[i].h);
    CHECK(reparsed[i].w == records[i].w);
    CHECK(reparsed[i].l == records[i].l);
    CHECK(reparsed[i].x == records[i].x);
    CHECK(reparsed[i].y == records[i].y);
    CHECK(reparsed[i].z == records[i].z);
    CHECK(reparsed[i].ry == records[i].ry);
    CHECK(reparsed[i].score == records[i].score);
  }
}

TEST_CASE("calibration parsing") {
  const CameraIntrinsics k = parse_calib(kCalibText);
  CHECK(k.fu == 721.5377);
  CHECK(k.fv == 721.5377);
  CHECK(k.cu == 609.5593);
  CHECK(k.cv == 172.854);

  const CameraIntrinsics identity =
      parse_calib("P2: 1 0 0 0 0 1 0 0 0 0 1 0\n");
  CHECK(identity.fu == 1.0);
  CHECK(identity.fv == 1.0);
  CHECK(identity.cu == 0.0);
  CHECK(identity.cv == 0.0);

  CHECK_THROWS_AS(parse_calib("P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"), ParseError);
  CHECK_THROWS_AS(parse_calib("P2: 1 0 0\n"), ParseError);
  CHECK_THROWS_AS(parse_calib("P2: 1 0 0 0 0 x 0 0 0 0 1 0\n"), ParseError);
}

TEST_CASE("label to box anchor conversion") {
  LabelRecord rec;
  rec.category = "Car";
  rec.h = 2.0;
  rec.w = 1.6;
  rec.l = 4.0;
  rec.x = 0.0;
  rec.y = 1.0;
  rec.z = 10.0;
  rec.ry = 0.3;
  const Box3D box = label_to_box(rec).value();
  CHECK(box.cy == 0.0);
  CHECK(box.cx == 0.0);
  CHECK(box.cz == 10.0);

  // the bottom face sits at the label's anchor height (y-down frame)
  double lowest = -1e300;
  for (const auto& c : corners_from_box(box)) lowest = std::max(lowest, c.y);
  CHECK(std::abs(lowest - rec.y) < 1e-9);

  // inverse round-trip
  Rng rng(41);
  for (int i = 0; i < 100; ++i) {
    const Box3D b = oracles::random_box(rng);
    const LabelRecord back = label_from_box(b, Rect2D{0, 1, 0, 1});
    const Box3D again = label_to_box(back).value();
    CHECK(std::abs(again.cx - b.cx) < 1e-9);
    CHECK(std::abs(again.cy - b.cy) < 1e-9);
    CHECK(std::abs(again.cz - b.cz) < 1e-9);
    CHECK(std::abs(again.l - b.l) < 1e-9);
    CHECK(std::abs(again.h - b.h) < 1e-9);
    CHECK(std::abs(again.w - b.w) < 1e-9);
    CHECK(std::abs(normalize_yaw(again.ry - b.ry)) < 1e-9);
  }
}

TEST_CASE("deviation statistics are zero on self-consistent records") {
  Rng rng(42);
  const Scene scene = synth_scene(rng, 60);
  std::vector<LabelRecord> records;
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    records.push_back(label_from_box(scene.boxes[i], scene.rects[i]));
  }
  const auto stats = deviation_stats(records, scene.intrinsics).value();
  CHECK(stats.sample_count == records.size());
  for (const EdgeStats* e : {&stats.du_min, &stats.du_max, &stats.dv_min,
                             &stats.dv_max}) {
    CHECK(std::abs(e->mean) < 1e-9);
    CHECK(std::abs(e->min) < 1e-9);
    CHECK(std::abs(e->max) < 1e-9);
    std::size_t total = 0;
    for (const auto& bin : e->bins) total += bin.count;
    CHECK(total == stats.sample_count);
  }
}

TEST_CASE("deviation statistics export to CSV and JSON") {
  Rng rng(44);
  const Scene scene = synth_scene(rng, 20);
  std::vector<LabelRecord> records;
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    records.push_back(label_from_box(scene.boxes[i], scene.rects[i]));
  }
  const auto stats = deviation_stats(records, scene.intrinsics).value();

  const std::string csv = deviation_hist_csv(stats);
  const auto lines = split_lines(csv);
  REQUIRE(lines.size() > 1);
  CHECK(lines[0] == "edge,bin_lo,bin_hi,count");
  std::size_t counted = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split(lines[i], ',');
    REQUIRE(fields.size() == 4);
    counted += static_cast<std::size_t>(*try_parse_int(fields[3]));
  }
  CHECK(counted == 4 * stats.sample_count);

  const auto summary = deviation_summary_json(stats);
  CHECK(summary["sample_count"] == stats.sample_count);
  for (const char* edge : {"du_min", "du_max", "dv_min", "dv_max"}) {
    CHECK(std::abs(summary["edges"][edge]["mean"].get<double>()) < 1e-9);
  }
}

TEST_CASE("deviation filters exclude truncated and occluded objects") {
  Rng rng(43);
  const Scene scene = synth_scene(rng, 10);
  std::vector<LabelRecord> records;
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    records.push_back(label_from_box(scene.boxes[i], scene.rects[i]));
  }
  records[0].truncation = 0.4;  // excluded by the default filter
  records[1].occlusion = 3;

  DeviationFilters strict;
  strict.max_occlusion = 2;
  const auto stats = deviation_stats(records, scene.intrinsics, strict).value();
  CHECK(stats.sample_count == records.size() - 2);

  DeviationFilters lax;
  lax.max_truncation = 1.0;
  const auto all = deviation_stats(records, scene.intrinsics, lax).value();
  CHECK(all.sample_count == records.size());

  // nothing passes -> empty-stats signal
  DeviationFilters impossible;
  impossible.max_occlusion = -1;
  CHECK(!deviation_stats(records, scene.intrinsics, impossible).has_value());
}

TEST_CASE("synthetic scenes are deterministic and in range") {
  Rng a(777), b(777);
  const Scene sa = synth_scene(a, 40);
  const Scene sb = synth_scene(b, 40);
  REQUIRE(sa.boxes.size() == 40);
  for (std::size_t i = 0; i < sa.boxes.size(); ++i) {
    CHECK(sa.boxes[i].cx == sb.boxes[i].cx);
    CHECK(sa.boxes[i].cz == sb.boxes[i].cz);
    CHECK(sa.boxes[i].ry == sb.boxes[i].ry);
    CHECK(sa.rects[i].umin == sb.rects[i].umin);

    const SceneRanges r;
    CHECK(sa.boxes[i].cz >= r.z_lo);
    CHECK(sa.boxes[i].cz <= r.z_hi);
    CHECK(std::abs(sa.boxes[i].cx) <= r.lateral_frac * sa.boxes[i].cz);
    CHECK(sa.boxes[i].l >= r.len_lo);
    CHECK(sa.boxes[i].l <= r.len_hi);
  }

  Rng c(1);
  CHECK(synth_scene(c, 0).boxes.empty());

  SceneRanges bad;
  bad.z_lo = 70.0;  // above z_hi
  CHECK_THROWS_AS(synth_scene(c, 1, bad), ConfigError);
  SceneRanges behind;
  behind.z_lo = 1.0;  // largest box would poke behind the camera
  CHECK_THROWS_AS(synth_scene(c, 1, behind), ConfigError);
}
