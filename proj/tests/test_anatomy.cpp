#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "support.hpp"
#include "vqct/anatomy.hpp"
#include "vqct/presegment.hpp"

using namespace vqct;

namespace {

// Straight canal through `base` along `dir`, sampled every 0.5 mm.
CanalLine straight_canal(const Vec3& base, const Vec3& dir, double half_length = 40.0) {
  CanalLine c;
  const Vec3 d = dir.normalized();
  for (double t = -half_length; t <= half_length; t += 0.5) {
    c.points.push_back(base + t * d);
    c.radii.push_back(5.0);
    c.detected.push_back(true);
  }
  return c;
}

void check_frame(const Vcs& v) {
  CHECK(std::abs(v.x.norm() - 1.0) < 1e-9);
  CHECK(std::abs(v.y.norm() - 1.0) < 1e-9);
  CHECK(std::abs(v.z.norm() - 1.0) < 1e-9);
  CHECK(std::abs(v.x.dot(v.y)) < 1e-9);
  CHECK(std::abs(v.x.dot(v.z)) < 1e-9);
  CHECK(std::abs(v.y.dot(v.z)) < 1e-9);
  CHECK((v.x.cross(v.y) - v.z).norm() < 1e-9);
}

Vcs world_vcs(const Vec3& origin) { return Vcs{origin, Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()}; }

}  // namespace

TEST_CASE("centre of volume") {
  const Geometry g = testing::cube(10);
  Mask box(g, 0);
  for (int k = 2; k <= 7; ++k)
    for (int j = 1; j <= 4; ++j)
      for (int i = 3; i <= 8; ++i) box(i, j, k) = 1;
  CHECK((centre_of_volume(box) - Vec3(5.5, 2.5, 4.5)).norm() < 1e-12);
  Mask one(g, 0);
  one(2, 7, 4) = 1;
  CHECK(centre_of_volume(one) == Vec3(2, 7, 4));
  Mask ell(g, 0);
  ell(0, 0, 0) = ell(1, 0, 0) = ell(0, 1, 0) = 1;
  CHECK((centre_of_volume(ell) - Vec3(1.0 / 3, 1.0 / 3, 0)).norm() < 1e-12);
  CHECK_THROWS_AS(centre_of_volume(Mask(g, 0)), Error);
}

TEST_CASE("column spline") {
  SUBCASE("collinear points give a constant tangent") {
    const ColumnSpline s({Vec3(1, 2, 0), Vec3(1, 2, 29), Vec3(1, 2, 58)});
    for (double t = 0.0; t <= s.length(); t += s.length() / 37.0) CHECK((s.tangent(t) - Vec3::UnitZ()).norm() < 1e-9);
  }
  SUBCASE("interpolates every point") {
    const std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(2, 1, 28), Vec3(3, 3, 57), Vec3(2, 6, 85)};
    const ColumnSpline s(pts);
    double acc = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) acc += (pts[i] - pts[i - 1]).norm();
      CHECK((s.point(acc) - pts[i]).norm() < 1e-9);
      CHECK(s.nearest_parameter(pts[i]) == doctest::Approx(acc).epsilon(1e-6));
    }
  }
  SUBCASE("circle arc tangent") {
    // Three points on a circle of radius 100 in the x-z plane, 30 degrees apart.
    const double r = 100.0;
    auto at = [&](double deg) { return Vec3(r * std::cos(radians(deg)), 0.0, r * std::sin(radians(deg))); };
    const ColumnSpline s({at(-30), at(0), at(30)});
    const Vec3 tan = s.tangent(s.nearest_parameter(at(0)));
    CHECK(degrees(angle_between(tan, Vec3::UnitZ())) < 2.0);
  }
  SUBCASE("degenerate inputs") {
    const ColumnSpline one({Vec3(4, 5, 6)});
    CHECK(one.tangent(0.0) == Vec3::UnitZ());
    CHECK((one.point(3.0) - Vec3(4, 5, 9)).norm() < 1e-12);
    const ColumnSpline two({Vec3(0, 0, 0), Vec3(0, 3, 4)});
    CHECK((two.tangent(1.0) - Vec3(0, 0.6, 0.8)).norm() < 1e-12);
    CHECK((two.point(2.5) - Vec3(0, 1.5, 2)).norm() < 1e-12);
    CHECK_THROWS_AS(ColumnSpline({Vec3(1, 1, 1), Vec3(1, 1, 1)}), Error);
    CHECK_THROWS_AS(ColumnSpline(std::vector<Vec3>{}), Error);
  }
}

TEST_CASE("VCS of a straight column") {
  const ColumnSpline s({Vec3(0, 0, -29), Vec3(0, 0, 0), Vec3(0, 0, 29)});
  const CanalLine canal = straight_canal(Vec3(22, 0, 0), Vec3::UnitZ());
  const VcsResult r = compute_vcs(Vec3(0, 0, 1), canal, s, Vec3(15, -10, 1), Vec3(15, 10, 1));
  CHECK((r.vcs.x - Vec3::UnitX()).norm() < 1e-9);
  CHECK((r.vcs.y - Vec3::UnitY()).norm() < 1e-9);
  CHECK((r.vcs.z - Vec3::UnitZ()).norm() < 1e-9);
  CHECK((r.landmarks.m2 - Vec3(22, 0, 1)).norm() < 1e-9);
  CHECK(r.vcs.origin == Vec3(0, 0, 1));
  check_frame(r.vcs);
  const nlohmann::json j = landmarks_json(r);
  for (const char* k : {"M1", "M2", "M3", "M4"}) CHECK(j.contains(k));

  const CanalLine short_canal = straight_canal(Vec3(22, 0, 50), Vec3::UnitZ(), 5.0);
  CHECK_THROWS_AS(compute_vcs(Vec3(0, 0, 1), short_canal, s, std::nullopt, std::nullopt), Error);
}

TEST_CASE("VCS frames are orthonormal for random inputs") {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 50; ++t) {
    const Vec3 bend(3 * u(rng), 3 * u(rng), 0);
    const ColumnSpline s({Vec3(u(rng), u(rng), -30), bend, Vec3(u(rng), u(rng), 30) + bend});
    const Vec3 m1 = s.point(s.length() / 2) + Vec3(u(rng), u(rng), u(rng));
    const Vec3 dir = Vec3(0.1 * u(rng), 0.1 * u(rng), 1.0);
    const CanalLine canal = straight_canal(m1 + Vec3(20 * std::cos(3 * u(rng)), 20 * std::sin(3 * u(rng)), 0), dir);
    check_frame(compute_vcs(m1, canal, s, std::nullopt, std::nullopt).vcs);
  }
}

TEST_CASE("pacman sector") {
  const Vcs v = world_vcs(Vec3::Zero());
  const double th = radians(40.0);
  const Vec3 m3(10 * std::cos(th), -10 * std::sin(th), 3), m4(10 * std::cos(th), 10 * std::sin(th), -2);
  CHECK(pacman_sector(v, m3, m4) == doctest::Approx(2 * th).epsilon(1e-12));
  CHECK(pacman_sector(v, m4, m3) == doctest::Approx(2 * th).epsilon(1e-12));
}

TEST_CASE("VOIs on a 100^3 grid") {
  const Geometry g = testing::cube(100);
  const Mask body(g, 1);
  const Vec3 c(49.5, 49.5, 49.5);
  const Vcs v = world_vcs(c);
  const double th = radians(40.0);
  const Vec3 m3 = c + Vec3(10 * std::cos(th), -10 * std::sin(th), 0);
  const Vec3 m4 = c + Vec3(10 * std::cos(th), 10 * std::sin(th), 0);
  const Mask cyl = make_voi(v, VoiSpec{VoiKind::cylinder}, body);
  const Mask pac = make_voi(v, VoiSpec{VoiKind::pacman}, body, m3, m4);
  const double ratio = static_cast<double>(count(pac)) / static_cast<double>(count(cyl));
  const double expected = 1.0 - 2.0 * th / (2.0 * M_PI);
  CHECK(std::abs(ratio - expected) <= 0.02 * expected);
  // Extents run between voxel centers: 99 mm. Radius 0.6 · 49.5, and the
  // half height 24.75 keeps the 50 central slices.
  const double analytic = M_PI * 29.7 * 29.7 * 50.0;
  CHECK(std::abs(static_cast<double>(count(cyl)) - analytic) <= 0.02 * analytic);

  // Mirror symmetry about the x-z plane through the origin.
  std::size_t asym = 0;
  for (std::size_t i = 0; i < pac.size(); ++i) {
    if (!pac[i]) continue;
    const Index3 p = g.unlinear(i);
    bool near = false;
    for (int d = -1; d <= 1 && !near; ++d) {
      const int j = 99 - p.y() + d;
      near = j >= 0 && j < 100 && pac(p.x(), j, p.z());
    }
    asym += !near;
  }
  CHECK(asym == 0);
  CHECK_THROWS_AS(make_voi(v, VoiSpec{VoiKind::pacman}, body), Error);
}

TEST_CASE("VOIs stay inside the body and follow translations") {
  const Geometry g = testing::cube(60);
  const Vec3 c(25, 27, 26);
  const Mask body = testing::mask_where(g, [&](const Vec3& p) {
    const Vec3 q = p - c;
    return (q.x() / 18) * (q.x() / 18) + (q.y() / 14) * (q.y() / 14) <= 1.0 && std::abs(q.z()) <= 12;
  });
  const Vcs v = world_vcs(c);
  const Vec3 m3 = c + Vec3(12, -6, 0), m4 = c + Vec3(12, 6, 0);
  VoiSpec big{VoiKind::pacman, 1.0, 1.0};
  const Mask pac = make_voi(v, big, body, m3, m4);
  CHECK(count(pac) > 0);
  CHECK(count(mask_minus(pac, body)) == 0);

  const Vec3 shift(3, -2, 4);
  Mask moved(g, 0);
  for (std::size_t i = 0; i < body.size(); ++i) {
    const Index3 p = g.unlinear(i) + Index3(3, -2, 4);
    if (body[i] && g.in_bounds(p.x(), p.y(), p.z())) moved(p.x(), p.y(), p.z()) = 1;
  }
  const Mask pac2 = make_voi(world_vcs(c + shift), big, moved, m3 + shift, m4 + shift);
  CHECK(count(pac2) == count(pac));
  for (std::size_t i = 0; i < pac.size(); ++i) {
    if (!pac[i]) continue;
    const Index3 p = g.unlinear(i) + Index3(3, -2, 4);
    CHECK(pac2(p.x(), p.y(), p.z()) == 1);
  }

  CHECK_THROWS_AS(make_voi(v, VoiSpec{VoiKind::cylinder}, Mask(g, 0)), Error);
  VoiSpec bad{VoiKind::cylinder, 1.5, 0.5};
  CHECK_THROWS_AS(bad.validate(), Error);
  // A wedge of 180 degrees or more is refused.
  CHECK_THROWS_AS(make_voi(v, big, body, c + Vec3(0, -6, 0), c + Vec3(0, 6, 0)), Error);
}

TEST_CASE("VCS on a tilted phantom follows the body axis") {
  PhantomSpec spec = PhantomSpec::default_three_level();
  for (auto& l : spec.levels) l.tilt_deg = 10.0;
  const Phantom ph = generate_phantom(spec);
  const PipelineResult r = run_pipeline(ph.volume, phantom_seeds(ph.truth), PipelineConfig{});
  for (std::size_t l = 0; l < 3; ++l) {
    CAPTURE(l);
    REQUIRE(r.levels[l].ok());
    const Vcs& v = r.levels[l].vcs->vcs;
    CHECK(degrees(angle_between(v.z, ph.truth.levels[l].axis())) < 2.0);
    check_frame(v);
  }
}
