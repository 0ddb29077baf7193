#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "support.hpp"
#include "vqct/volume_io.hpp"

using namespace vqct;

TEST_CASE("load_volume decodes x-fastest float payload") {
  const auto dir = testing::scratch_dir("io_decode");
  std::ofstream(dir / "v.vqh") << R"({"dims":[2,2,2],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],"dtype":"f32","data_file":"v.vqr"})";
  {
    std::ofstream raw(dir / "v.vqr", std::ios::binary);
    for (int i = 0; i < 8; ++i) {
      const float f = static_cast<float>(i) + 0.5f;
      raw.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  const Volume v = load_volume(dir / "v.vqh");
  CHECK(v(0, 0, 0) == 0.5f);
  CHECK(v(1, 0, 0) == 1.5f);
  CHECK(v(0, 1, 0) == 2.5f);
  CHECK(v(0, 0, 1) == 4.5f);
  CHECK(v(1, 1, 1) == 7.5f);
}

TEST_CASE("load_volume rejects a short payload and bad headers") {
  const auto dir = testing::scratch_dir("io_short");
  std::ofstream(dir / "v.vqh") << R"({"dims":[2,2,2],"spacing_mm":[1,1,1],"origin_mm":[0,0,0],"dtype":"f32","data_file":"v.vqr"})";
  {
    std::ofstream raw(dir / "v.vqr", std::ios::binary);
    const float f = 1.0f;
    for (int i = 0; i < 7; ++i) raw.write(reinterpret_cast<const char*>(&f), 4);
  }
  CHECK_THROWS_AS(load_volume(dir / "v.vqh"), Error);
  CHECK_THROWS_AS(load_volume(dir / "missing.vqh"), Error);
  std::ofstream(dir / "neg.vqh") << R"({"dims":[2,2,2],"spacing_mm":[1,0,1],"origin_mm":[0,0,0],"dtype":"f32","data_file":"v.vqr"})";
  CHECK_THROWS_AS(load_volume(dir / "neg.vqh"), Error);
}

TEST_CASE("volume and mask round-trip bit-identically") {
  const auto dir = testing::scratch_dir("io_roundtrip");
  Geometry g(Index3(5, 4, 3), Eigen::Array3d(0.3, 0.5, 1.0), Vec3(-2.0, 1.5, 7.25));
  Volume v(g);
  std::mt19937 rng(7);
  std::normal_distribution<float> n(100.0f, 50.0f);
  for (auto& x : v.values()) x = n(rng);
  write_volume(dir / "a.vqh", v);
  const Volume back = load_volume(dir / "a.vqh");
  CHECK(back.geometry() == g);
  CHECK(back.storage() == v.storage());

  Mask m(g, 0);
  for (std::size_t i = 0; i < m.size(); i += 3) m[i] = 1;
  write_mask(dir / "m.vqh", m);
  CHECK(load_mask(dir / "m.vqh").storage() == m.storage());
  CHECK_THROWS_AS(load_mask(dir / "a.vqh"), Error);
}

TEST_CASE("sample_trilinear interpolates") {
  Geometry g(Index3(2, 2, 2), Eigen::Array3d(1, 1, 1), Vec3::Zero());
  Volume v(g);
  const float corner[8] = {1, 4, -2, 7, 3, 11, 5, -6};
  for (int i = 0; i < 8; ++i) v[i] = corner[i];

  SUBCASE("voxel centers are exact") {
    for (int i = 0; i < 8; ++i) CHECK(sample_trilinear(v, g.center(i)) == static_cast<double>(corner[i]));
  }
  SUBCASE("midpoint of two voxels") {
    Volume w(Geometry(Index3(2, 1, 1), Eigen::Array3d(1, 1, 1), Vec3::Zero()), 0.0f);
    w[1] = 10.0f;
    CHECK(sample_trilinear(w, Vec3(0.5, 0, 0)) == doctest::Approx(5.0));
  }
  SUBCASE("fractional offset matches an explicit 8-corner weighted sum") {
    const double fx = 0.25, fy = 0.5, fz = 0.75;
    double expected = 0.0;
    for (int k = 0; k < 2; ++k)
      for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 2; ++i)
          expected += (i ? fx : 1 - fx) * (j ? fy : 1 - fy) * (k ? fz : 1 - fz) * corner[i + 2 * j + 4 * k];
    CHECK(sample_trilinear(v, Vec3(fx, fy, fz)) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("outside points clamp to the edge") {
    CHECK(sample_trilinear(v, Vec3(-5, -5, -5)) == doctest::Approx(1.0));
    CHECK(sample_trilinear(v, Vec3(9, 9, 9)) == doctest::Approx(-6.0));
  }
}

TEST_CASE("trilinear sampling reproduces affine fields") {
  Geometry g(Index3(9, 7, 6), Eigen::Array3d(0.5, 0.7, 1.0), Vec3(3, -1, 2));
  Volume v(g);
  auto f = [](const Vec3& p) { return 2.0 + 0.5 * p.x() - 1.25 * p.y() + 3.0 * p.z(); };
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(f(g.center(i)));
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 500; ++t) {
    const Vec3 vox(u(rng) * 8, u(rng) * 6, u(rng) * 5);
    const Vec3 p = g.voxel_to_world(vox);
    CHECK(sample_trilinear(v, p) == doctest::Approx(f(p)).epsilon(1e-6));
  }
}

TEST_CASE("world and voxel coordinates") {
  Geometry unit(Index3(8, 8, 8), Eigen::Array3d(1, 1, 1), Vec3::Zero());
  CHECK(unit.world_to_voxel(Vec3(3, 4, 5)).isApprox(Vec3(3, 4, 5)));
  Geometry g(Index3(8, 8, 8), Eigen::Array3d(0.5, 1, 1), Vec3(10, 0, 0));
  CHECK((g.world_to_voxel(Vec3(11, 0, 0)) - Vec3(2, 0, 0)).norm() < 1e-12);

  Geometry h(Index3(10, 10, 10), Eigen::Array3d(0.37, 0.5, 1.3), Vec3(-12.5, 3.25, 100.0));
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-200.0, 200.0);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Vec3 p(u(rng), u(rng), u(rng));
    worst = std::max(worst, (h.voxel_to_world(h.world_to_voxel(p)) - p).norm());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("mask boolean algebra") {
  const Geometry g = testing::cube(12);
  std::mt19937 rng(5);
  std::bernoulli_distribution coin(0.4);
  Mask a(g), b(g);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = coin(rng);
    b[i] = coin(rng);
  }
  CHECK(mask_or(mask_and(a, b), mask_and(a, mask_not(b))).storage() == a.storage());
  CHECK(count(mask_minus(a, b)) == count(a) - count(mask_and(a, b)));
  Mask other(Geometry(Index3(12, 12, 11), Eigen::Array3d(1, 1, 1), Vec3::Zero()));
  CHECK_THROWS_AS(mask_and(a, other), Error);
}

TEST_CASE("grid payload size is checked") {
  CHECK_THROWS_AS(Volume(testing::cube(2), std::vector<float>(7)), Error);
}
