#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqct/geometry.hpp"
#include "vqct/grid.hpp"

namespace vqct {

struct Seed {
  std::string name;
  Vec3 center;
};

/// Operator-marked body centers, one per level, caudal first.
struct SeedSet {
  std::vector<Seed> levels;

  static constexpr double kMinSeparationMm = 10.0;

  /// Throws unless non-empty, sorted by z and pairwise separated.
  void validate() const;
  static SeedSet load(const std::string& path);
  void save(const std::string& path) const;
};

void to_json(nlohmann::json& j, const SeedSet& s);
void from_json(const nlohmann::json& j, SeedSet& s);

/// Bounding plane of a search region; points with signed distance ≥ 0 are
/// inside when `keep_positive`, ≤ 0 otherwise.
struct HalfSpace {
  Plane plane;
  bool keep_positive = true;

  bool inside(const Vec3& p) const {
    const double d = plane.signed_distance(p);
    return keep_positive ? d >= 0.0 : d <= 0.0;
  }
  double violation(const Vec3& p) const {
    const double d = plane.signed_distance(p);
    return keep_positive ? std::max(0.0, -d) : std::max(0.0, d);
  }
};

/// Finite cylinder intersected with half-spaces.
class SearchRegion {
 public:
  SearchRegion() = default;
  SearchRegion(const Vec3& axis_point, const Vec3& axis_dir, double radius, double half_length,
               std::vector<HalfSpace> planes);

  bool in_cylinder(const Vec3& p) const;
  bool contains(const Vec3& p) const;
  /// Largest violation of any primitive (0 inside).
  double outside_distance(const Vec3& p) const;

  /// Inclusive voxel box that encloses the region, clipped to the lattice.
  /// Returns false when the region misses the lattice.
  bool voxel_bounds(const Geometry& g, Index3& lo, Index3& hi) const;
  std::vector<std::size_t> voxels(const Geometry& g) const;
  Mask mask(const Geometry& g) const;

  const Vec3& axis_point() const { return point_; }
  const Vec3& axis() const { return axis_; }
  double radius() const { return radius_; }
  double half_length() const { return half_length_; }
  const std::vector<HalfSpace>& planes() const { return planes_; }

  nlohmann::json to_json() const;

 private:
  Vec3 point_{0, 0, 0};
  Vec3 axis_{0, 0, 1};
  double radius_ = 0.0;
  double half_length_ = 0.0;
  std::vector<HalfSpace> planes_;
};

/// Canal centerline sampled once per axial slice, ordered by z.
struct CanalLine {
  std::vector<Vec3> points;
  std::vector<double> radii;     ///< inscribed radius (mm); interpolated slices carry the
                                 ///< neighbours' blend
  std::vector<bool> detected;    ///< false where interpolated or extrapolated

  /// Point where the polyline crosses the plane (linear between samples);
  /// nullopt when it never does.
  std::optional<Vec3> intersect(const Plane& plane) const;
  /// Polyline sample interpolated at world z (clamped at the ends).
  Vec3 at_z(double z) const;
  double radius_at_z(double z) const;
  nlohmann::json to_json() const;
};

struct CanalOptions {
  double bone_threshold = 450.0;  ///< coarse bone/soft split (mg/cm³)
  double window_lateral_mm = 40.0;
  double window_posterior_mm = 40.0;
  double min_radius_mm = 2.0;
  double max_step_mm = 3.0;  ///< per slice
  double extend_mm = 15.0;   ///< coverage beyond the end seeds
  Vec3 posterior{0.0, 1.0, 0.0};
};

CanalLine detect_canal(const Volume& vol, const SeedSet& seeds, const CanalOptions& opt = {});

/// Equivalent radius of the dark flood around the seed in its axial slice,
/// capped at `cap_mm`. Half-extents of the flood along x and y are returned
/// through the optional pointer.
double estimate_body_radius(const Volume& vol, const Vec3& seed, double bone_threshold = 450.0,
                            double cap_mm = 35.0, Eigen::Vector2d* half_extents = nullptr);

struct DiskPlaneOptions {
  double max_tilt_deg = 15.0;
  double tilt_step_deg = 1.0;
  double offset_step_mm = 1.0;
  double disk_radius_fraction = 0.75;  ///< of the coarse body radius
  double layer_sigma_mm = 0.75;
  std::vector<double> layers_mm{-1.0, -0.5, 0.0, 0.5, 1.0};
  double default_half_height_mm = 15.0;
  double bone_threshold = 450.0;
};

/// Mean grey value over a Gaussian-weighted stack of disks centered at
/// `center` in the plane ⊥ `normal`.
double disk_objective(const Volume& vol, const Vec3& center, const Vec3& normal, double radius_mm,
                      const DiskPlaneOptions& opt);

/// levels+1 planes: lower cap, one per adjacent pair, upper cap. Normals
/// point cranially.
std::vector<Plane> fit_disk_planes(const Volume& vol, const SeedSet& seeds,
                                   const DiskPlaneOptions& opt = {});

struct RegionOptions {
  double margin_mm = 12.0;  ///< radial allowance beyond the canal's far wall
};

SearchRegion build_search_region(const Vec3& seed, const CanalLine& canal, const Plane& lower,
                                 const Plane& upper, const RegionOptions& opt = {});

}  // namespace vqct
