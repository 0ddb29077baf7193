#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "vqct/grid.hpp"

namespace vqct {

class SearchRegion;

/// Two-component Gaussian mixture, component 0 below component 1.
struct GaussianPair {
  std::array<double, 2> weight{0.5, 0.5};
  std::array<double, 2> mean{0.0, 1.0};
  std::array<double, 2> sigma{1.0, 1.0};

  void validate() const;
  double density(int c, double x) const;
};

/// Low/high thresholds around the Gaussian intersection.
struct ThresholdBand {
  double x_star = 0.0;
  double low = 0.0;
  double high = 0.0;
};

struct EmOptions {
  double tolerance = 1e-8;  ///< on the mean per-sample log-likelihood
  int max_iterations = 500;
  /// Standard deviations are floored at this fraction of the data range;
  /// delta-like components (noiseless phantoms) would otherwise collapse.
  double sigma_floor_fraction = 1e-3;
  int histogram_bins = 256;
};

struct EmTrace {
  std::vector<double> log_likelihood;  ///< mean per-sample, one per iteration
  int iterations = 0;
  bool converged = false;
};

/// Expectation-maximization on raw values, seeded by an Otsu split.
GaussianPair fit_two_gaussians(std::span<const float> values, const EmOptions& opt = {},
                               EmTrace* trace = nullptr);
GaussianPair fit_two_gaussians(const Volume& vol, const SearchRegion& region,
                               const EmOptions& opt = {}, EmTrace* trace = nullptr);

/// Otsu threshold of the values' histogram.
double otsu_threshold(std::span<const float> values, int bins = 256);

/// Root of w1·N(x;μ1,σ1) = w2·N(x;μ2,σ2) that lies between the means.
double gaussian_intersection(const GaussianPair& g);

/// Band at x* − δ⁻ .. x* + δ⁺. Negative offsets select the default
/// 0.5·min(σ1, σ2).
ThresholdBand make_band(const GaussianPair& g, double delta_minus = -1.0, double delta_plus = -1.0);

enum class TissueClass { soft, bone };

/// Below low → soft, above high → bone; in between, bone iff the mean of the
/// (2r+1)³ neighborhood (edge-clamped) exceeds x*.
TissueClass classify_voxel(const Volume& vol, int i, int j, int k, const ThresholdBand& band,
                           int neighborhood_radius = 1);
inline TissueClass classify_voxel(const Volume& vol, const Index3& v, const ThresholdBand& band,
                                  int neighborhood_radius = 1) {
  return classify_voxel(vol, v.x(), v.y(), v.z(), band, neighborhood_radius);
}

nlohmann::json fit_report(const GaussianPair& g, const ThresholdBand& band);

}  // namespace vqct
