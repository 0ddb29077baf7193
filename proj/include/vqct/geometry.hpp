#pragma once

#include <cmath>

#include <Eigen/Geometry>

#include "vqct/grid.hpp"

namespace vqct {

/// Oriented plane n·x = d with unit normal n (mm).
struct Plane {
  Vec3 normal{0.0, 0.0, 1.0};
  double offset = 0.0;

  Plane() = default;
  Plane(const Vec3& n, double d) : normal(n), offset(d) {
    const double len = normal.norm();
    if (!(len > 0.0) || !std::isfinite(len)) throw Error("plane normal must be non-zero");
    normal /= len;
    offset /= len;
  }
  static Plane through(const Vec3& point, const Vec3& n) {
    const Vec3 u = n.normalized();
    return Plane(u, u.dot(point));
  }

  double signed_distance(const Vec3& p) const { return normal.dot(p) - offset; }
  Vec3 project(const Vec3& p) const { return p - signed_distance(p) * normal; }
};

/// Right-handed orthonormal frame whose third column is `axis`.
inline Eigen::Matrix3d frame_from_axis(const Vec3& axis) {
  const Vec3 z = axis.normalized();
  const Vec3 helper = std::abs(z.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 x = (helper - helper.dot(z) * z).normalized();
  Eigen::Matrix3d f;
  f.col(0) = x;
  f.col(1) = z.cross(x);
  f.col(2) = z;
  return f;
}

inline double degrees(double rad) { return rad * 180.0 / M_PI; }
inline double radians(double deg) { return deg * M_PI / 180.0; }

inline double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace vqct
