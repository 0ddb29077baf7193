#include "vqct/mesh.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <unordered_map>

namespace vqct {

namespace {

std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
}

}  // namespace

void BalloonMesh::rebuild_adjacency() {
  adjacency.assign(positions.size(), {});
  for (const auto& t : triangles)
    for (int e = 0; e < 3; ++e) {
      adjacency[t[e]].push_back(t[(e + 1) % 3]);
      adjacency[t[(e + 1) % 3]].push_back(t[e]);
    }
  for (auto& n : adjacency) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
}

std::size_t BalloonMesh::edge_count() const {
  std::vector<std::uint64_t> keys;
  keys.reserve(3 * triangles.size());
  for (const auto& t : triangles)
    for (int e = 0; e < 3; ++e) keys.push_back(edge_key(t[e], t[(e + 1) % 3]));
  std::sort(keys.begin(), keys.end());
  return static_cast<std::size_t>(std::unique(keys.begin(), keys.end()) - keys.begin());
}

int BalloonMesh::euler_characteristic() const {
  return static_cast<int>(vertex_count()) - static_cast<int>(edge_count()) +
         static_cast<int>(face_count());
}

bool BalloonMesh::is_closed_oriented() const {
  // Directed half-edges must appear once each, paired with their reverse.
  std::vector<std::pair<int, int>> half;
  half.reserve(3 * triangles.size());
  for (const auto& t : triangles)
    for (int e = 0; e < 3; ++e) half.push_back({t[e], t[(e + 1) % 3]});
  std::sort(half.begin(), half.end());
  if (std::adjacent_find(half.begin(), half.end()) != half.end()) return false;
  for (const auto& h : half) {
    if (!std::binary_search(half.begin(), half.end(), std::make_pair(h.second, h.first))) {
      return false;
    }
  }
  return !triangles.empty();
}

double BalloonMesh::signed_volume() const {
  double v = 0.0;
  for (const auto& t : triangles) {
    v += positions[t[0]].dot(positions[t[1]].cross(positions[t[2]]));
  }
  return v / 6.0;
}

double BalloonMesh::max_edge_length() const {
  double m = 0.0;
  for (const auto& t : triangles)
    for (int e = 0; e < 3; ++e) m = std::max(m, (positions[t[e]] - positions[t[(e + 1) % 3]]).norm());
  return m;
}

std::vector<Vec3> BalloonMesh::vertex_normals() const {
  std::vector<Vec3> n(positions.size(), Vec3::Zero());
  for (const auto& t : triangles) {
    const Vec3 c = (positions[t[1]] - positions[t[0]]).cross(positions[t[2]] - positions[t[0]]);
    for (int e = 0; e < 3; ++e) n[t[e]] += c;
  }
  for (auto& v : n) {
    const double len = v.norm();
    v = len > 0.0 ? Vec3(v / len) : Vec3::UnitZ();
  }
  return n;
}

void BalloonMesh::validate() const {
  if (!is_closed_oriented()) throw Error("mesh is not closed and consistently oriented");
  if (euler_characteristic() != 2) throw Error("mesh is not genus 0");
  if (!(signed_volume() > 0.0)) throw Error("mesh is not outward oriented");
}

BalloonMesh make_icosphere(const Vec3& center, double radius, int subdivisions) {
  if (!(radius > 0.0)) throw Error("icosphere radius must be positive");
  if (subdivisions < 0 || subdivisions > 7) throw Error("icosphere subdivisions out of range");
  const double phi = 0.5 * (1.0 + std::sqrt(5.0));
  std::vector<Vec3> v = {{-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0},
                         {0, -1, phi}, {0, 1, phi},  {0, -1, -phi}, {0, 1, -phi},
                         {phi, 0, -1}, {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Triangle> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                             {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                             {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                             {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::unordered_map<std::uint64_t, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = edge_key(a, b);
      const auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int id = static_cast<int>(v.size()) - 1;
      mid.emplace(key, id);
      return id;
    };
    std::vector<Triangle> next;
    next.reserve(4 * f.size());
    for (const auto& t : f) {
      const int a = midpoint(t[0], t[1]), b = midpoint(t[1], t[2]), c = midpoint(t[2], t[0]);
      next.push_back({t[0], a, c});
      next.push_back({t[1], b, a});
      next.push_back({t[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  BalloonMesh m;
  for (const auto& p : v) m.positions.push_back(center + radius * p);
  m.velocities.assign(m.positions.size(), Vec3::Zero());
  m.targets.assign(m.positions.size(), std::nullopt);
  m.triangles = std::move(f);
  m.rebuild_adjacency();
  return m;
}

int refine_mesh(BalloonMesh& mesh, double max_edge_mm) {
  if (!(max_edge_mm > 0.0)) throw Error("max edge length must be positive");
  int splits = 0;
  while (true) {
    // Edge → the (up to two) faces using it.
    std::unordered_map<std::uint64_t, std::array<int, 2>> faces;
    for (int fi = 0; fi < static_cast<int>(mesh.triangles.size()); ++fi) {
      const auto& t = mesh.triangles[fi];
      for (int e = 0; e < 3; ++e) {
        auto [it, fresh] = faces.try_emplace(edge_key(t[e], t[(e + 1) % 3]), std::array<int, 2>{fi, -1});
        if (!fresh) it->second[1] = fi;
      }
    }
    struct Long {
      double len;
      std::uint64_t key;
    };
    std::vector<Long> longs;
    for (const auto& [key, fs] : faces) {
      const int a = static_cast<int>(key >> 32), b = static_cast<int>(key & 0xffffffffu);
      const double len = (mesh.positions[a] - mesh.positions[b]).norm();
      if (len > max_edge_mm) longs.push_back({len, key});
    }
    if (longs.empty()) break;
    std::sort(longs.begin(), longs.end(), [](const Long& x, const Long& y) {
      return x.len != y.len ? x.len > y.len : x.key < y.key;
    });
    std::vector<std::uint8_t> touched(mesh.triangles.size(), 0);
    for (const auto& l : longs) {
      const auto fs = faces.at(l.key);
      if (fs[1] < 0) throw Error("refine on an open mesh");
      if (touched[fs[0]] || touched[fs[1]]) continue;
      const int a = static_cast<int>(l.key >> 32), b = static_cast<int>(l.key & 0xffffffffu);
      const int m = static_cast<int>(mesh.positions.size());
      mesh.positions.push_back(0.5 * (mesh.positions[a] + mesh.positions[b]));
      mesh.velocities.push_back(0.5 * (mesh.velocities[a] + mesh.velocities[b]));
      mesh.targets.push_back(std::nullopt);
      for (int fi : fs) {
        Triangle t = mesh.triangles[fi];
        // Rotate so the split edge is t[0] → t[1].
        while (!((t[0] == a && t[1] == b) || (t[0] == b && t[1] == a))) {
          t = Triangle(t[1], t[2], t[0]);
        }
        mesh.triangles[fi] = Triangle(t[0], m, t[2]);
        mesh.triangles.push_back(Triangle(m, t[1], t[2]));
        touched[fi] = 1;
        touched.push_back(1);
      }
      ++splits;
    }
  }
  if (splits > 0) mesh.rebuild_adjacency();
  return splits;
}

namespace {

// Triangle / axis-aligned box overlap by separating axes (Akenine-Möller).
bool tri_box_overlap(const Vec3& c, double h, const Vec3& a0, const Vec3& a1, const Vec3& a2) {
  const Vec3 v0 = a0 - c, v1 = a1 - c, v2 = a2 - c;
  const Vec3 e[3] = {v1 - v0, v2 - v1, v0 - v2};
  for (int i = 0; i < 3; ++i) {
    const double mn = std::min({v0[i], v1[i], v2[i]}), mx = std::max({v0[i], v1[i], v2[i]});
    if (mn > h || mx < -h) return false;
  }
  for (const auto& ed : e)
    for (int ax = 0; ax < 3; ++ax) {
      const Vec3 axis = Vec3::Unit(ax).cross(ed);
      if (axis.squaredNorm() < 1e-30) continue;
      const double p0 = axis.dot(v0), p1 = axis.dot(v1), p2 = axis.dot(v2);
      const double r = h * (std::abs(axis.x()) + std::abs(axis.y()) + std::abs(axis.z()));
      if (std::min({p0, p1, p2}) > r || std::max({p0, p1, p2}) < -r) return false;
    }
  const Vec3 n = e[0].cross(e[1]);
  const double r = h * (std::abs(n.x()) + std::abs(n.y()) + std::abs(n.z()));
  return std::abs(n.dot(v0)) <= r;
}

}  // namespace

MeshRaster voxelize_closed_mesh(const BalloonMesh& mesh, const Geometry& g) {
  if (!mesh.is_closed_oriented()) throw Error("voxelization needs a closed mesh");
  std::vector<Vec3> vc;
  vc.reserve(mesh.positions.size());
  for (const auto& p : mesh.positions) vc.push_back(g.world_to_voxel(p));

  MeshRaster out{Mask(g, 0), Mask(g, 0)};
  const Index3 dims = g.dims;
  for (const auto& t : mesh.triangles) {
    const Vec3& a = vc[t[0]];
    const Vec3& b = vc[t[1]];
    const Vec3& c = vc[t[2]];
    Index3 lo, hi;
    for (int ax = 0; ax < 3; ++ax) {
      const double mn = std::min({a[ax], b[ax], c[ax]}), mx = std::max({a[ax], b[ax], c[ax]});
      lo[ax] = std::max(0, static_cast<int>(std::ceil(mn - 0.5)));
      hi[ax] = std::min(dims[ax] - 1, static_cast<int>(std::floor(mx + 0.5)));
    }
    for (int k = lo.z(); k <= hi.z(); ++k)
      for (int j = lo.y(); j <= hi.y(); ++j)
        for (int i = lo.x(); i <= hi.x(); ++i) {
          const std::size_t idx = g.linear(i, j, k);
          if (out.surface[idx]) continue;
          if (tri_box_overlap(Vec3(i, j, k), 0.5, a, b, c)) out.surface[idx] = 1;
        }
  }

  // Parity along x; the ray is nudged off the lattice so it never grazes a
  // vertex or edge exactly.
  const double ey = 1.2345678e-7 * std::sqrt(2.0), ez = 2.3456789e-7 * std::sqrt(3.0);
  const int ny = dims.y(), nz = dims.z();
  std::vector<std::vector<double>> hits(static_cast<std::size_t>(ny) * nz);
  for (const auto& t : mesh.triangles) {
    const Vec3& a = vc[t[0]];
    const Vec3& b = vc[t[1]];
    const Vec3& c = vc[t[2]];
    const int j0 = std::max(0, static_cast<int>(std::ceil(std::min({a.y(), b.y(), c.y()}) - ey)));
    const int j1 = std::min(ny - 1, static_cast<int>(std::floor(std::max({a.y(), b.y(), c.y()}) - ey)));
    const int k0 = std::max(0, static_cast<int>(std::ceil(std::min({a.z(), b.z(), c.z()}) - ez)));
    const int k1 = std::min(nz - 1, static_cast<int>(std::floor(std::max({a.z(), b.z(), c.z()}) - ez)));
    for (int k = k0; k <= k1; ++k)
      for (int j = j0; j <= j1; ++j) {
        const double y = j + ey, z = k + ez;
        // Barycentric coordinates in the (y, z) projection.
        const double d = (b.y() - a.y()) * (c.z() - a.z()) - (c.y() - a.y()) * (b.z() - a.z());
        if (d == 0.0) continue;
        const double u = ((y - a.y()) * (c.z() - a.z()) - (c.y() - a.y()) * (z - a.z())) / d;
        const double v = ((b.y() - a.y()) * (z - a.z()) - (y - a.y()) * (b.z() - a.z())) / d;
        if (u < 0.0 || v < 0.0 || u + v > 1.0) continue;
        const double x = a.x() + u * (b.x() - a.x()) + v * (c.x() - a.x());
        hits[static_cast<std::size_t>(k) * ny + j].push_back(x);
      }
  }
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j) {
      auto& h = hits[static_cast<std::size_t>(k) * ny + j];
      if (h.size() < 2) continue;
      std::sort(h.begin(), h.end());
      for (std::size_t p = 0; p + 1 < h.size(); p += 2) {
        const int i0 = std::max(0, static_cast<int>(std::ceil(h[p])));
        const int i1 = std::min(dims.x() - 1, static_cast<int>(std::floor(h[p + 1])));
        for (int i = i0; i <= i1; ++i) out.interior(i, j, k) = 1;
      }
    }
  return out;
}

void write_triangle_soup(const BalloonMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write mesh " + path);
  char buf[256];
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.positions[t[0]];
    const Vec3& b = mesh.positions[t[1]];
    const Vec3& c = mesh.positions[t[2]];
    std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f\n", a.x(), a.y(),
                  a.z(), b.x(), b.y(), b.z(), c.x(), c.y(), c.z());
    out << buf;
  }
}

}  // namespace vqct
