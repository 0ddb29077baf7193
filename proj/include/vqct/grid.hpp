#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "vqct/error.hpp"

namespace vqct {

using Vec3 = Eigen::Vector3d;
using Index3 = Eigen::Array3i;

/// Axis-aligned voxel lattice: dims, spacing (mm) and world position of the
/// center of voxel (0,0,0). Memory order is x fastest, then y, then z.
struct Geometry {
  Index3 dims{0, 0, 0};
  Eigen::Array3d spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  Geometry() = default;
  Geometry(Index3 d, Eigen::Array3d s, Vec3 o);

  std::size_t size() const {
    return static_cast<std::size_t>(dims.x()) * dims.y() * dims.z();
  }
  double voxel_volume() const { return spacing.prod(); }

  std::size_t linear(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims.x()) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims.y()) * k);
  }
  Index3 unlinear(std::size_t idx) const {
    const auto nx = static_cast<std::size_t>(dims.x());
    const auto ny = static_cast<std::size_t>(dims.y());
    return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny),
            static_cast<int>(idx / (nx * ny))};
  }
  bool in_bounds(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims.x() && j < dims.y() && k < dims.z();
  }

  Vec3 voxel_to_world(const Vec3& v) const {
    return origin + (v.array() * spacing).matrix();
  }
  Vec3 world_to_voxel(const Vec3& p) const {
    return ((p - origin).array() / spacing).matrix();
  }
  Vec3 center(int i, int j, int k) const { return voxel_to_world(Vec3(i, j, k)); }
  Vec3 center(std::size_t idx) const {
    const Index3 v = unlinear(idx);
    return center(v.x(), v.y(), v.z());
  }

  /// Nearest voxel to a world point, unclamped.
  Index3 nearest_voxel(const Vec3& p) const;
  bool contains_world(const Vec3& p) const;

  bool operator==(const Geometry& other) const {
    return (dims == other.dims).all() && (spacing == other.spacing).all() &&
           origin == other.origin;
  }
  bool operator!=(const Geometry& other) const { return !(*this == other); }
};

/// Dense scalar field over a Geometry.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  explicit Grid(const Geometry& g, T fill = T{}) : geom_(g), data_(g.size(), fill) {}
  Grid(const Geometry& g, std::vector<T> data) : geom_(g), data_(std::move(data)) {
    if (data_.size() != geom_.size()) {
      throw Error("grid payload has " + std::to_string(data_.size()) +
                  " values, geometry requires " + std::to_string(geom_.size()));
    }
  }

  const Geometry& geometry() const { return geom_; }
  const Index3& dims() const { return geom_.dims; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator[](std::size_t idx) { return data_[idx]; }
  const T& operator[](std::size_t idx) const { return data_[idx]; }
  T& operator()(int i, int j, int k) { return data_[geom_.linear(i, j, k)]; }
  const T& operator()(int i, int j, int k) const { return data_[geom_.linear(i, j, k)]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& storage() const { return data_; }

  /// Value at clamped integer coordinates.
  const T& clamped(int i, int j, int k) const {
    i = std::clamp(i, 0, geom_.dims.x() - 1);
    j = std::clamp(j, 0, geom_.dims.y() - 1);
    k = std::clamp(k, 0, geom_.dims.z() - 1);
    return (*this)(i, j, k);
  }

 private:
  Geometry geom_;
  std::vector<T> data_;
};

using Volume = Grid<float>;
using Mask = Grid<std::uint8_t>;
using LabelMap = Grid<std::int32_t>;
using DistanceField = Grid<double>;

/// Trilinear interpolation at a world point; points outside the lattice are
/// clamped to the nearest edge voxel.
double sample_trilinear(const Volume& vol, const Vec3& p);

void require_same_geometry(const Geometry& a, const Geometry& b, const char* what);

std::size_t count(const Mask& m);
Mask mask_and(const Mask& a, const Mask& b);
Mask mask_or(const Mask& a, const Mask& b);
Mask mask_not(const Mask& a);
Mask mask_minus(const Mask& a, const Mask& b);
std::vector<std::size_t> foreground_indices(const Mask& m);

/// Inclusive voxel bounding box of the foreground; returns false when empty.
bool bounding_box(const Mask& m, Index3& lo, Index3& hi);

/// Sub-lattice [lo, hi] (inclusive), which may extend beyond the source;
/// voxels outside the source take `fill`.
template <typename T>
Grid<T> crop(const Grid<T>& src, const Index3& lo, const Index3& hi, T fill = T{}) {
  const Geometry& g = src.geometry();
  Geometry out_geom(hi - lo + 1, g.spacing, g.center(lo.x(), lo.y(), lo.z()));
  Grid<T> out(out_geom, fill);
  for (int k = 0; k < out_geom.dims.z(); ++k) {
    const int sk = k + lo.z();
    if (sk < 0 || sk >= g.dims.z()) continue;
    for (int j = 0; j < out_geom.dims.y(); ++j) {
      const int sj = j + lo.y();
      if (sj < 0 || sj >= g.dims.y()) continue;
      for (int i = 0; i < out_geom.dims.x(); ++i) {
        const int si = i + lo.x();
        if (si < 0 || si >= g.dims.x()) continue;
        out(i, j, k) = src(si, sj, sk);
      }
    }
  }
  return out;
}

/// Writes the in-bounds part of `part` (cropped at `lo`) back into `dst`.
template <typename T>
void paste(Grid<T>& dst, const Grid<T>& part, const Index3& lo) {
  const Geometry& g = dst.geometry();
  const Geometry& pg = part.geometry();
  for (int k = 0; k < pg.dims.z(); ++k) {
    const int dk = k + lo.z();
    if (dk < 0 || dk >= g.dims.z()) continue;
    for (int j = 0; j < pg.dims.y(); ++j) {
      const int dj = j + lo.y();
      if (dj < 0 || dj >= g.dims.y()) continue;
      for (int i = 0; i < pg.dims.x(); ++i) {
        const int di = i + lo.x();
        if (di < 0 || di >= g.dims.x()) continue;
        dst(di, dj, dk) = part(i, j, k);
      }
    }
  }
}

}  // namespace vqct
