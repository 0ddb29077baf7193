#pragma once

#include <string>
#include <vector>

#include "vqct/classify.hpp"
#include "vqct/grid.hpp"

namespace vqct {

class SearchRegion;

/// Exact squared Euclidean distance (mm²) from every voxel center to the
/// nearest foreground voxel center, anisotropic spacing aware.
DistanceField edt_squared(const Mask& foreground);
/// Square root of edt_squared. Throws on an empty mask.
DistanceField edt(const Mask& foreground);

/// Connected-component labeling with 4/6 (face), 18 or 26 connectivity.
/// Labels are 1..n in order of each component's first voxel in memory order.
int label_components(const Mask& m, LabelMap& labels, int connectivity,
                     std::vector<std::size_t>* sizes = nullptr);
/// Largest component (ties: first in memory order); empty input → empty.
Mask largest_component(const Mask& m, int connectivity = 6);

/// 6-connected flood from `seeds` over voxels that classify as bone and lie
/// inside `region`.
Mask volume_grow(const Volume& vol, const std::vector<std::size_t>& seeds,
                 const ThresholdBand& band, const SearchRegion& region, int neighborhood_radius = 1);

/// Closing with a Euclidean ball of radius r (mm), via distance thresholds.
Mask close_ball(const Mask& m, double radius_mm);
/// Background components (26-connected) that do not reach the lattice
/// border are set to foreground.
Mask fill_holes(const Mask& m);
Mask close_and_fill(const Mask& m, double radius_mm = 2.0);

struct ErosionResult {
  LabelMap residuals;       ///< 1 = largest residual, 2 = next, ...; 0 elsewhere
  double threshold_mm = 0;  ///< interior distance that first separates them
  int components = 0;
};

/// Smallest interior-distance level set that splits the shape into at least
/// `expected` significant components.
ErosionResult ultimate_erode(const Mask& m, int expected = 2);

struct SkizResult {
  LabelMap labels;  ///< residual label per voxel of `within`, 0 if unreached
  Mask contact;     ///< zone-boundary voxels
};

/// Lockstep geodesic dilation of the residuals inside `within`.
SkizResult skiz_partition(const LabelMap& residuals, const Mask& within);

struct DissectionResult {
  Mask body;
  Mask process;
  Mask cut;
  std::vector<Vec3> cut_centers;  ///< centroids of the two largest cut components, by world x
  double split_threshold_mm = 0.0;
  std::vector<std::string> warnings;
};

DissectionResult pedicle_cut(const Mask& vertebra);

/// Strips bright voxels inward from the surface, then erodes by `depth_mm`.
Mask trabecular_peel(const Mask& body, const Volume& vol, const ThresholdBand& band,
                     double depth_mm = 2.0);

}  // namespace vqct
