#include <doctest.h>

#include <algorithm>
#include <random>

#include "fixtures.hpp"
#include "support.hpp"
#include "vqct/classify.hpp"
#include "vqct/presegment.hpp"

using namespace vqct;

namespace {

std::vector<float> mixture_sample(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution pick_high(0.4);
  std::normal_distribution<double> lo(30.0, 15.0), hi(250.0, 40.0);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(pick_high(rng) ? hi(rng) : lo(rng));
  return v;
}

// Roots of the log-quadratic, written out longhand.
double intersection_oracle(double w1, double m1, double s1, double w2, double m2, double s2) {
  const long double A = 1.0L / (2.0L * s2 * s2) - 1.0L / (2.0L * s1 * s1);
  const long double B = static_cast<long double>(m1) / (s1 * s1) - static_cast<long double>(m2) / (s2 * s2);
  const long double C = static_cast<long double>(m2) * m2 / (2.0L * s2 * s2) -
                        static_cast<long double>(m1) * m1 / (2.0L * s1 * s1) +
                        std::log(static_cast<long double>(w1) * s2 / (static_cast<long double>(w2) * s1));
  const long double d = std::sqrt(B * B - 4.0L * A * C);
  for (long double r : {(-B + d) / (2.0L * A), (-B - d) / (2.0L * A)})
    if (r > m1 && r < m2) return static_cast<double>(r);
  return std::nan("");
}

GaussianPair pair(double w0, double m0, double s0, double m1, double s1) {
  GaussianPair g;
  g.weight = {w0, 1.0 - w0};
  g.mean = {m0, m1};
  g.sigma = {s0, s1};
  return g;
}

}  // namespace

TEST_CASE("EM recovers a known mixture") {
  const auto v = mixture_sample(100000, 2024);
  EmTrace trace;
  const GaussianPair g = fit_two_gaussians(v, {}, &trace);
  CHECK(std::abs(g.weight[0] - 0.6) <= 0.03 * 0.6);
  CHECK(std::abs(g.weight[1] - 0.4) <= 0.03 * 0.4);
  CHECK(std::abs(g.mean[0] - 30.0) <= 0.03 * 30.0);
  CHECK(std::abs(g.mean[1] - 250.0) <= 0.03 * 250.0);
  CHECK(std::abs(g.sigma[0] - 15.0) <= 0.03 * 15.0);
  CHECK(std::abs(g.sigma[1] - 40.0) <= 0.03 * 40.0);
  CHECK(trace.converged);
  REQUIRE(trace.log_likelihood.size() >= 2);
  for (std::size_t i = 1; i < trace.log_likelihood.size(); ++i) {
    CHECK(trace.log_likelihood[i] >= trace.log_likelihood[i - 1] - 1e-12);
  }
}

TEST_CASE("EM output is ordered and independent of data order") {
  auto v = mixture_sample(20000, 7);
  const GaussianPair a = fit_two_gaussians(v);
  std::reverse(v.begin(), v.end());
  const GaussianPair b = fit_two_gaussians(v);
  std::mt19937 rng(1);
  std::shuffle(v.begin(), v.end(), rng);
  const GaussianPair c = fit_two_gaussians(v);
  for (const auto* g : {&a, &b, &c}) {
    CHECK(g->mean[0] < g->mean[1]);
    CHECK(g->mean[0] == doctest::Approx(a.mean[0]).epsilon(1e-6));
    CHECK(g->mean[1] == doctest::Approx(a.mean[1]).epsilon(1e-6));
  }
}

TEST_CASE("EM refuses non-bimodal input") {
  const std::vector<float> flat(5000, 120.0f);
  CHECK_THROWS_AS(fit_two_gaussians(flat), Error);
  const Volume v(testing::cube(20), 120.0f);
  const SearchRegion r(Vec3(10, 10, 10), Vec3::UnitZ(), 8.0, 8.0, {});
  CHECK_THROWS_AS(fit_two_gaussians(v, r), Error);
  const SearchRegion tiny(Vec3(10, 10, 10), Vec3::UnitZ(), 2.0, 2.0, {});
  CHECK_THROWS_AS(fit_two_gaussians(v, tiny), Error);  // under 1000 voxels
}

TEST_CASE("Otsu splits two clusters") {
  std::vector<float> v(1000, 10.0f);
  v.insert(v.end(), 1000, 90.0f);
  const double t = otsu_threshold(v);
  CHECK(t > 10.0);
  CHECK(t < 90.0);
}

TEST_CASE("Gaussian intersection") {
  SUBCASE("symmetric pair meets at the midpoint") {
    CHECK(gaussian_intersection(pair(0.5, 0.0, 1.0, 2.0, 1.0)) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("unequal widths against the log-quadratic") {
    const double x = gaussian_intersection(pair(0.5, 0.0, 1.0, 10.0, 2.0));
    CHECK(std::abs(x - intersection_oracle(0.5, 0.0, 1.0, 0.5, 10.0, 2.0)) <= 1e-9);
  }
  SUBCASE("densities agree at the root") {
    for (const auto& g : {pair(0.6, 30, 15, 250, 40), pair(0.2, 0, 3, 7, 1), pair(0.9, -5, 2, 40, 20)}) {
      const double x = gaussian_intersection(g);
      CHECK(std::abs(x - intersection_oracle(g.weight[0], g.mean[0], g.sigma[0], g.weight[1], g.mean[1],
                                             g.sigma[1])) <= 1e-9);
      CHECK(g.density(0, x) == doctest::Approx(g.density(1, x)).epsilon(1e-9));
    }
  }
  SUBCASE("common rescaling of both densities leaves the root") {
    // Changing units by k rescales both densities by 1/k at matched points.
    const GaussianPair g = pair(0.3, 10, 4, 60, 9);
    GaussianPair h = g;
    for (int c = 0; c < 2; ++c) {
      h.mean[c] *= 2.5;
      h.sigma[c] *= 2.5;
    }
    CHECK(gaussian_intersection(h) == doctest::Approx(2.5 * gaussian_intersection(g)).epsilon(1e-12));
  }
  SUBCASE("invalid pairs are refused") {
    CHECK_THROWS_AS(gaussian_intersection(pair(0.5, 5, 1, 1, 1)), Error);
    CHECK_THROWS_AS(gaussian_intersection(pair(0.5, 0, 0, 1, 1)), Error);
    // A narrow, light component buried in a wide one has no root between
    // the means.
    CHECK_THROWS_AS(gaussian_intersection(pair(0.001, 0, 0.1, 0.5, 50)), Error);
  }
}

TEST_CASE("threshold band") {
  const GaussianPair g = pair(0.5, 0, 10, 100, 20);
  const ThresholdBand b = make_band(g);
  CHECK(b.x_star - b.low == doctest::Approx(5.0));
  CHECK(b.high - b.x_star == doctest::Approx(5.0));
  const ThresholdBand z = make_band(g, 0.0, 0.0);
  CHECK(z.low == z.x_star);
  CHECK(z.high == z.x_star);
  CHECK_THROWS_AS(make_band(g, 80.0, 1.0), Error);
  const nlohmann::json j = fit_report(g, b);
  for (const char* k : {"w", "mu", "sigma", "x_star", "low", "high"}) CHECK(j.contains(k));
}

TEST_CASE("voxel classification") {
  ThresholdBand band;
  band.x_star = 100.0;
  band.low = 90.0;
  band.high = 110.0;
  Volume v(testing::cube(3), 100.0f);
  SUBCASE("outside the band") {
    v(1, 1, 1) = 111.0f;
    CHECK(classify_voxel(v, 1, 1, 1, band) == TissueClass::bone);
    v(1, 1, 1) = 89.0f;
    CHECK(classify_voxel(v, 1, 1, 1, band) == TissueClass::soft);
  }
  SUBCASE("transition voxel follows its neighborhood mean") {
    // Centre at x*, the other 26 chosen so the 27-mean is x* ± 5.
    for (int sign : {+1, -1}) {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(100.0 + sign * 27.0 * 5.0 / 26.0);
      v(1, 1, 1) = 100.0f;
      CHECK(classify_voxel(v, 1, 1, 1, band) == (sign > 0 ? TissueClass::bone : TissueClass::soft));
    }
  }
  SUBCASE("raising a voxel never turns bone into soft") {
    const Geometry g = testing::cube(10);
    Volume w(g);
    std::mt19937 rng(9);
    std::uniform_real_distribution<float> u(80.0f, 120.0f);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = u(rng);
    std::vector<TissueClass> before(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) before[i] = classify_voxel(w, g.unlinear(i), band);
    for (int trial = 0; trial < 20; ++trial) {
      Volume up = w;
      const std::size_t idx = rng() % up.size();
      up[idx] += 15.0f;
      for (std::size_t i = 0; i < up.size(); ++i)
        if (before[i] == TissueClass::bone) CHECK(classify_voxel(up, g.unlinear(i), band) == TissueClass::bone);
    }
  }
}

TEST_CASE("noiseless phantom region classifies cleanly") {
  const Phantom& ph = testing::default_phantom();
  const SeedSet seeds = phantom_seeds(ph.truth);
  const CanalLine canal = detect_canal(ph.volume, seeds);
  const auto planes = fit_disk_planes(ph.volume, seeds);
  const SearchRegion r = build_search_region(seeds.levels[1].center, canal, planes[1], planes[2]);
  const ThresholdBand band = make_band(fit_two_gaussians(ph.volume, r), 0.0, 0.0);
  const Mask shell = ph.truth.part_mask(1, {TissuePart::shell});
  const Mask any_bone = mask_or(mask_or(ph.truth.vertebra_mask(0), ph.truth.vertebra_mask(1)),
                                ph.truth.vertebra_mask(2));
  const Geometry& g = ph.volume.geometry();
  std::size_t shell_bone = 0, shell_n = 0, soft_soft = 0, soft_n = 0;
  for (std::size_t idx : r.voxels(g)) {
    const Index3 v = g.unlinear(idx);
    // With zero offsets the band is the single value x*.
    const bool is_bone = classify_voxel(ph.volume, v, band) == TissueClass::bone;
    if (shell[idx]) {
      ++shell_n;
      shell_bone += is_bone;
    } else if (!any_bone[idx]) {
      ++soft_n;
      soft_soft += !is_bone;
    }
  }
  CHECK(shell_n > 0);
  CHECK(shell_bone == shell_n);
  CHECK(soft_soft == soft_n);
}
