#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqct/geometry.hpp"
#include "vqct/grid.hpp"

namespace vqct {

/// One synthetic vertebra: an elliptic-cylinder body with a cortical shell,
/// two cylindrical pedicles joining a half-torus arch around the canal, and
/// a box-shaped spinous process. Local frame: u lateral, v posterior,
/// w cranial, origin at the body center.
struct VertebraSpec {
  std::string name = "L1";
  double trabecular_bmd = 100.0;
  double body_radius_mm = 20.0;  ///< lateral semi-axis
  double body_aspect = 0.75;     ///< AP semi-axis / lateral semi-axis
  double body_height_mm = 25.0;
  double cortical_thickness_mm = 1.0;
  double cortical_bmd = 800.0;
  double pedicle_radius_mm = 3.0;
  double canal_radius_mm = 7.5;
  double arch_radius_mm = 5.0;  ///< tube radius of the posterior arch
  double process_extent_mm = 15.0;
  double tilt_deg = 0.0;  ///< rotation of the level about the world x axis
  Eigen::Vector2d offset_mm{0.0, 0.0};  ///< in-plane (x, y) displacement

  double body_depth_mm() const { return body_aspect * body_radius_mm; }
  double canal_offset_mm() const { return body_depth_mm() + canal_radius_mm; }
  double pedicle_lateral_mm() const { return canal_radius_mm + pedicle_radius_mm; }
};

struct PhantomSpec {
  std::vector<VertebraSpec> levels;
  double soft_tissue_value = 0.0;
  Eigen::Array3d spacing{0.5, 0.5, 0.5};
  double noise_sigma = 0.0;
  std::uint64_t rng_seed = 1;
  double gap_mm = 4.0;
  double margin_mm = 8.0;

  /// Three levels L1-L3 with nominal trabecular BMD 50/100/200 mg/cm³.
  static PhantomSpec default_three_level();
  void validate() const;
};

void to_json(nlohmann::json& j, const VertebraSpec& v);
void from_json(const nlohmann::json& j, VertebraSpec& v);
void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

struct LevelTruth {
  std::string name;
  Vec3 center;
  Eigen::Matrix3d frame;  ///< columns: lateral, posterior, cranial axis
  double nominal_bmd = 0.0;
  double body_volume_mm3 = 0.0;
  double trabecular_volume_mm3 = 0.0;
  double body_height_mm = 0.0;
  Vec3 canal_point;  ///< canal axis point in the mid-body plane
  std::array<Vec3, 2> pedicle_midpoints;  ///< lateral -u first

  Vec3 axis() const { return frame.col(2); }
  /// Canal axis intersected with the axial slice at world z.
  Vec3 canal_center_at_z(double z) const;
};

/// Per-voxel tissue code: 0 soft tissue, otherwise 1 + 3·level + part with
/// part 0 trabecular, 1 cortical shell, 2 posterior elements.
enum class TissuePart : int { trabecular = 0, shell = 1, posterior = 2 };

struct PhantomTruth {
  std::vector<LevelTruth> levels;
  std::vector<Plane> disk_planes;  ///< one per adjacent level pair
  Grid<std::uint8_t> tissue;

  Mask part_mask(std::size_t level, std::initializer_list<TissuePart> parts) const;
  Mask body_mask(std::size_t level) const;
  Mask trabecular_mask(std::size_t level) const;
  Mask vertebra_mask(std::size_t level) const;

  nlohmann::json to_json() const;
};

struct Phantom {
  Volume volume;
  PhantomTruth truth;
};

/// Builds the noiseless phantom, then adds noise_sigma Gaussian noise.
Phantom generate_phantom(const PhantomSpec& spec);

/// Independent zero-mean Gaussian noise per voxel, deterministic per seed.
Volume add_noise(const Volume& vol, double sigma, std::uint64_t seed);

}  // namespace vqct
