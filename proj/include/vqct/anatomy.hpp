#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqct/geometry.hpp"
#include "vqct/grid.hpp"

namespace vqct {

struct CanalLine;

/// Mean world position of the foreground voxel centers.
Vec3 centre_of_volume(const Mask& mask);

/// Natural cubic spline through ordered points, parameterized by cumulative
/// chord length. Two points give a segment, one point a vertical line.
class ColumnSpline {
 public:
  explicit ColumnSpline(std::vector<Vec3> points);

  double length() const { return knots_.back(); }
  Vec3 point(double s) const;
  /// Unit tangent; parameters outside [0, length] use the end tangent.
  Vec3 tangent(double s) const;
  /// Parameter of the curve point nearest to p.
  double nearest_parameter(const Vec3& p) const;
  const std::vector<Vec3>& points() const { return points_; }

 private:
  Vec3 derivative(double s) const;
  std::size_t segment(double s) const;

  std::vector<Vec3> points_;
  std::vector<double> knots_;
  std::vector<Vec3> second_;  ///< second derivatives at the knots
};

struct Landmarks {
  Vec3 m1, m2;
  std::optional<Vec3> m3, m4;
};

/// Vertebral coordinate system: x toward the canal, z along the column.
struct Vcs {
  Vec3 origin;
  Vec3 x, y, z;
};

struct VcsResult {
  Landmarks landmarks;
  Vcs vcs;
};

VcsResult compute_vcs(const Vec3& m1, const CanalLine& canal, const ColumnSpline& spline,
                      const std::optional<Vec3>& m3, const std::optional<Vec3>& m4);

enum class VoiKind { cylinder, pacman };

struct VoiSpec {
  VoiKind kind = VoiKind::cylinder;
  double radius_fraction = 0.6;  ///< of the body's smaller in-plane half extent
  double height_fraction = 0.5;  ///< of the body's extent along the VCS z axis
  void validate() const;
};

/// Angular extent (radians) of the sector between the M3 and M4 rays that
/// contains the +x direction.
double pacman_sector(const Vcs& vcs, const Vec3& m3, const Vec3& m4);

Mask make_voi(const Vcs& vcs, const VoiSpec& spec, const Mask& body,
              const std::optional<Vec3>& m3 = std::nullopt,
              const std::optional<Vec3>& m4 = std::nullopt);

nlohmann::json landmarks_json(const VcsResult& r);

}  // namespace vqct
