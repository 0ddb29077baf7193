#include "vqct/grid.hpp"

#include <cmath>

namespace vqct {

Geometry::Geometry(Index3 d, Eigen::Array3d s, Vec3 o) : dims(d), spacing(s), origin(o) {
  if ((dims <= 0).any()) throw Error("geometry dims must be positive");
  if (!(spacing > 0.0).all()) throw Error("geometry spacing must be positive");
}

Index3 Geometry::nearest_voxel(const Vec3& p) const {
  const Vec3 v = world_to_voxel(p);
  return {static_cast<int>(std::lround(v.x())), static_cast<int>(std::lround(v.y())),
          static_cast<int>(std::lround(v.z()))};
}

bool Geometry::contains_world(const Vec3& p) const {
  const Vec3 v = world_to_voxel(p);
  for (int a = 0; a < 3; ++a) {
    if (v[a] < -0.5 || v[a] > dims[a] - 0.5) return false;
  }
  return true;
}

double sample_trilinear(const Volume& vol, const Vec3& p) {
  const Geometry& g = vol.geometry();
  const double vx = (p.x() - g.origin.x()) / g.spacing.x();
  const double vy = (p.y() - g.origin.y()) / g.spacing.y();
  const double vz = (p.z() - g.origin.z()) / g.spacing.z();
  const int nx = g.dims.x(), ny = g.dims.y(), nz = g.dims.z();
  // Fast path: all eight neighbours inside the lattice.
  if (vx >= 0.0 && vy >= 0.0 && vz >= 0.0 && vx < nx - 1 && vy < ny - 1 && vz < nz - 1) {
    const int i = static_cast<int>(vx), j = static_cast<int>(vy), k = static_cast<int>(vz);
    const double fx = vx - i, fy = vy - j, fz = vz - k;
    const std::size_t sy = static_cast<std::size_t>(nx), sz = sy * static_cast<std::size_t>(ny);
    const float* c = vol.values().data() + g.linear(i, j, k);
    const double c00 = c[0] + fx * (c[1] - c[0]);
    const double c10 = c[sy] + fx * (c[sy + 1] - c[sy]);
    const double c01 = c[sz] + fx * (c[sz + 1] - c[sz]);
    const double c11 = c[sz + sy] + fx * (c[sz + sy + 1] - c[sz + sy]);
    const double c0 = c00 + fy * (c10 - c00), c1 = c01 + fy * (c11 - c01);
    return c0 + fz * (c1 - c0);
  }
  const Vec3 v(vx, vy, vz);
  int base[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    const double hi = g.dims[a] - 1;
    const double c = std::clamp(v[a], 0.0, hi);
    int b = static_cast<int>(std::floor(c));
    if (b >= g.dims[a] - 1) b = std::max(0, g.dims[a] - 2);
    base[a] = b;
    frac[a] = g.dims[a] > 1 ? c - b : 0.0;
  }
  const int ox = nx > 1 ? 1 : 0, oy = ny > 1 ? 1 : 0, oz = nz > 1 ? 1 : 0;
  double acc = 0.0;
  for (int dz = 0; dz <= oz; ++dz) {
    const double wz = dz ? frac[2] : 1.0 - frac[2];
    for (int dy = 0; dy <= oy; ++dy) {
      const double wy = dy ? frac[1] : 1.0 - frac[1];
      for (int dx = 0; dx <= ox; ++dx) {
        const double wx = dx ? frac[0] : 1.0 - frac[0];
        acc += wx * wy * wz * vol(base[0] + dx, base[1] + dy, base[2] + dz);
      }
    }
  }
  return acc;
}

void require_same_geometry(const Geometry& a, const Geometry& b, const char* what) {
  if (a != b) throw Error(std::string("geometry mismatch in ") + what);
}

std::size_t count(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.values()) n += v ? 1 : 0;
  return n;
}

namespace {
template <typename Op>
Mask combine(const Mask& a, const Mask& b, const char* what, Op op) {
  require_same_geometry(a.geometry(), b.geometry(), what);
  Mask out(a.geometry());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i] != 0, b[i] != 0) ? 1 : 0;
  return out;
}
}  // namespace

Mask mask_and(const Mask& a, const Mask& b) {
  return combine(a, b, "mask_and", [](bool x, bool y) { return x && y; });
}
Mask mask_or(const Mask& a, const Mask& b) {
  return combine(a, b, "mask_or", [](bool x, bool y) { return x || y; });
}
Mask mask_minus(const Mask& a, const Mask& b) {
  return combine(a, b, "mask_minus", [](bool x, bool y) { return x && !y; });
}
Mask mask_not(const Mask& a) {
  Mask out(a.geometry());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] ? 0 : 1;
  return out;
}

std::vector<std::size_t> foreground_indices(const Mask& m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i]) out.push_back(i);
  }
  return out;
}

bool bounding_box(const Mask& m, Index3& lo, Index3& hi) {
  const Geometry& g = m.geometry();
  lo = g.dims;
  hi = Index3(-1, -1, -1);
  for (int k = 0; k < g.dims.z(); ++k)
    for (int j = 0; j < g.dims.y(); ++j)
      for (int i = 0; i < g.dims.x(); ++i) {
        if (!m(i, j, k)) continue;
        lo = lo.min(Index3(i, j, k));
        hi = hi.max(Index3(i, j, k));
      }
  return hi.x() >= 0;
}

}  // namespace vqct
