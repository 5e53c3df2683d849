#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "emfi/calibration.hpp"
#include "support.hpp"

using namespace emfi;
using namespace emfi::test;

namespace {

OffsetCalibration offset(double dx, double dy) {
  OffsetCalibration c;
  c.dx = dx;
  c.dy = dy;
  c.probe_id = "4mm-CW";
  return c;
}

}  // namespace

TEST_CASE("compute_probe_offset examples") {
  const auto zero = compute_probe_offset({100, 100}, {100, 100}, 7.5);
  CHECK(zero.dx == 0.0);
  CHECK(zero.dy == 0.0);
  const auto one = compute_probe_offset({200, 100}, {100, 100}, 10);
  CHECK(one.dx == doctest::Approx(1.0));
  CHECK(one.dy == 0.0);
  CHECK(one.pixel_scale_um == 10);
}

TEST_CASE("compute_probe_offset rejects bad inputs") {
  CHECK(error_code([] { compute_probe_offset({1, 1}, {2, 2}, 0); }) == ErrorCode::range);
  CHECK(error_code([] { compute_probe_offset({1, 1}, {2, 2}, -1); }) == ErrorCode::range);
  CHECK(error_code([] { compute_probe_offset({1920, 1}, {2, 2}, 1); }) == ErrorCode::range);
  CHECK(error_code([] { compute_probe_offset({1, 1}, {2, -1}, 1); }) == ErrorCode::range);
  // 1900 px at 30 um/px is 57 mm, beyond any plausible mount.
  CHECK(error_code([] { compute_probe_offset({1910, 1}, {10, 1}, 30); }) == ErrorCode::range);
}

TEST_CASE("compute_probe_offset is antisymmetric") {
  std::mt19937_64 g(11);
  std::uniform_real_distribution<double> u(0, 1919.999), v(0, 1079.999), s(0.5, 20);
  for (int i = 0; i < 1000; ++i) {
    const PixelPoint a{u(g), v(g)}, b{u(g), v(g)};
    const double scale = s(g);
    if (std::hypot(a.u - b.u, a.v - b.v) * scale / 1000 >= kMaxProbeOffsetMm) continue;
    const auto ab = compute_probe_offset(a, b, scale);
    const auto ba = compute_probe_offset(b, a, scale);
    CHECK(ab.dx == -ba.dx);
    CHECK(ab.dy == -ba.dy);
  }
}

TEST_CASE("offset applied to the camera center recovers the probe pixel") {
  std::mt19937_64 g(12);
  std::uniform_real_distribution<double> u(0, 1919.999), v(0, 1079.999), s(0.5, 20);
  int checked = 0;
  while (checked < 1000) {
    const PixelPoint probe{u(g), v(g)}, cam{u(g), v(g)};
    const double scale = s(g);
    if (std::hypot(probe.u - cam.u, probe.v - cam.v) * scale / 1000 >= kMaxProbeOffsetMm) continue;
    const auto back = probe_pixel(compute_probe_offset(probe, cam, scale), cam);
    CHECK(std::abs(back.u - probe.u) < 1.0);
    CHECK(std::abs(back.v - probe.v) < 1.0);
    ++checked;
  }
}

TEST_CASE("die_to_stage examples") {
  const DieAnchor anchor{{30, 40, 12.1}, 22, 9};
  CHECK(die_to_stage({0, 0}, anchor, offset(0, 0)) == anchor.corner);
  CHECK(die_to_stage({1, 1}, anchor, offset(1, 0)) == StagePosition{32, 41, 12.1});
  CHECK(die_to_stage({22, 9}, anchor, offset(0, 0)) == StagePosition{52, 49, 12.1});
  CHECK(error_code([&] { die_to_stage({22.5, 0}, anchor, offset(0, 0)); }) == ErrorCode::range);
  CHECK(error_code([&] { die_to_stage({0, -0.5}, anchor, offset(0, 0)); }) == ErrorCode::range);
  CHECK(die_to_stage({-0.5, 0}, anchor, offset(0, 0), true) == StagePosition{29.5, 40, 12.1});
  const auto s = die_to_stage({3.25, 4.5}, anchor, offset(1.25, -0.75));
  const auto d = stage_to_die(s, anchor, offset(1.25, -0.75));
  CHECK(d.x == doctest::Approx(3.25));
  CHECK(d.y == doctest::Approx(4.5));
}

TEST_CASE("die_to_stage is affine") {
  std::mt19937_64 g(13);
  for (int i = 0; i < 1000; ++i) {
    const DieAnchor anchor{{dyadic(g, 0, 60), dyadic(g, 0, 60), dyadic(g, 0, 40)}, dyadic(g, 1, 30), dyadic(g, 1, 30)};
    const auto cal = offset(dyadic(g, -10, 10), dyadic(g, -10, 10));
    const auto inside = [&](double extent) {
      return std::floor(std::uniform_real_distribution<double>(0, extent)(g) * 1024) / 1024;
    };
    const DiePoint a{inside(anchor.width_mm), inside(anchor.height_mm)};
    const DiePoint b{inside(anchor.width_mm), inside(anchor.height_mm)};
    const auto sa = die_to_stage(a, anchor, cal);
    const auto sb = die_to_stage(b, anchor, cal);
    CHECK(sa.x - sb.x == a.x - b.x);
    CHECK(sa.y - sb.y == a.y - b.y);
    CHECK(sa.z == anchor.corner.z);
    CHECK(sb.z == anchor.corner.z);
  }
}

TEST_CASE("die corners land inside the stage for anchors valid with their offset") {
  std::mt19937_64 g(14);
  const MotionLimits limits;
  int checked = 0;
  while (checked < 1000) {
    const DieAnchor anchor{{dyadic(g, 0, 100), dyadic(g, 0, 100), dyadic(g, 0, 100)}, dyadic(g, 1, 40), dyadic(g, 1, 40)};
    const auto cal = offset(dyadic(g, -5, 5), dyadic(g, -5, 5));
    if (error_code([&] { anchor.validate(limits); })) continue;
    const StagePosition lo{anchor.corner.x + cal.dx, anchor.corner.y + cal.dy, anchor.corner.z};
    const StagePosition hi{lo.x + anchor.width_mm, lo.y + anchor.height_mm, lo.z};
    if (!limits.within(lo) || !limits.within(hi)) continue;
    for (const DiePoint corner : {DiePoint{0, 0}, DiePoint{anchor.width_mm, 0}, DiePoint{0, anchor.height_mm},
                                  DiePoint{anchor.width_mm, anchor.height_mm}}) {
      CHECK(limits.within(die_to_stage(corner, anchor, cal)));
    }
    ++checked;
  }
}

TEST_CASE("anchor validation") {
  const MotionLimits limits;
  CHECK_FALSE(error_code([&] { DieAnchor{{30, 40, 12.1}, 22, 9}.validate(limits); }));
  CHECK(error_code([&] { DieAnchor{{90, 40, 12.1}, 22, 9}.validate(limits); }) == ErrorCode::limit);
  CHECK(error_code([&] { DieAnchor{{30, 40, 12.1}, 0, 9}.validate(limits); }) == ErrorCode::validation);
}

TEST_CASE("find_z_touch against a simulated surface") {
  const double surface = 12.0;
  const auto clearance = [&](double z) { return z - surface; };

  const double z = find_z_touch(30.0, 0.025, 0.1, clearance);
  CHECK(z >= 12.1 - 0.025);
  CHECK(z <= 12.1 + 0.025);
  CHECK(clearance(z) >= 0.1 - 1e-12);

  const double touch = find_z_touch(30.0, 0.025, 0.0, clearance);
  CHECK(touch >= surface);
  CHECK(touch < surface + 0.025 + 1e-9);

  CHECK(error_code([&] { find_z_touch(11.0, 0.025, 0.1, clearance); }) == ErrorCode::range);
  CHECK(error_code([&] { find_z_touch(30.0, 0.0, 0.1, clearance); }) == ErrorCode::validation);
  CHECK(error_code([&] { find_z_touch(30.0, 0.025, -0.1, clearance); }) == ErrorCode::validation);
  CHECK(error_code([&] { find_z_touch(30.0, 0.025, 0.1, [](double) { return 1.0; }); }) == ErrorCode::not_found);
}

TEST_CASE("find_z_touch never penetrates the surface") {
  std::mt19937_64 g(15);
  std::uniform_real_distribution<double> surf(0.5, 40), thr(0, 2), step(0.0025, 0.5);
  for (int i = 0; i < 2000; ++i) {
    const double s = surf(g), t = thr(g), h = step(g);
    const double start = s + t + std::uniform_real_distribution<double>(0, 50)(g);
    int probes = 0;
    const auto clearance = [&](double z) {
      ++probes;
      return z - s;
    };
    const double z = find_z_touch(start, h, t, clearance);
    CHECK(z >= s + t - h);
    CHECK(z - s >= t - 1e-9);
    CHECK(z - h - s < t + 1e-9);  // one more step would breach the threshold
    CHECK(probes <= 2 + static_cast<int>((start - s) / h / 16) + 8);
  }
}

TEST_CASE("calibration store persists offsets and drops them on tip change") {
  TempDir dir;
  const auto path = (dir / "calibration.json").string();
  const ProbeTip big{4.0, Winding::CW}, small{1.0, Winding::CCW};
  {
    CalibrationStore store(path);
    store.change_tip(big);
    auto a = compute_probe_offset({225, 25}, {100, 100}, 10);
    a.probe_id = big.id();
    a.timestamp = VirtualClock::default_epoch() + std::chrono::seconds(5);
    store.set_offset(a);
    auto b = compute_probe_offset({100, 100}, {150, 100}, 10);
    b.probe_id = small.id();
    store.set_offset(b);
    store.set_anchor({{30, 40, 12.1}, 22, 9});
    store.save();
  }
  CalibrationStore loaded(path);
  loaded.load();
  CHECK(loaded.active_tip() == big);
  REQUIRE(loaded.offset(big.id()));
  CHECK(loaded.offset(big.id())->dx == doctest::Approx(1.25));
  CHECK(loaded.offset(big.id())->dy == doctest::Approx(-0.75));
  CHECK(loaded.offset(big.id())->timestamp == VirtualClock::default_epoch() + std::chrono::seconds(5));
  CHECK(loaded.anchor() == DieAnchor{{30, 40, 12.1}, 22, 9});

  loaded.change_tip(small);
  CHECK_FALSE(loaded.offset(small.id()));
  CHECK(loaded.offset(big.id()));
  CHECK(loaded.active_tip() == small);

  OffsetCalibration anonymous;
  CHECK(error_code([&] { loaded.set_offset(anonymous); }) == ErrorCode::validation);
  CHECK(error_code([&] { loaded.from_json(Json{{"schema_version", 2}}); }) == ErrorCode::validation);
  CHECK(error_code([&] { loaded.from_json(Json{{"schema_version", 1}}); }) == ErrorCode::validation);
}
