#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqct/geometry.hpp"

namespace vqct {

using Triangle = Eigen::Array3i;

/// Closed triangle surface with per-vertex dynamics state. Triangles are
/// counter-clockwise seen from outside.
struct BalloonMesh {
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;  ///< mm per step
  std::vector<std::optional<Vec3>> targets;
  std::vector<Triangle> triangles;
  std::vector<std::vector<int>> adjacency;  ///< sorted neighbour ids

  std::size_t vertex_count() const { return positions.size(); }
  std::size_t face_count() const { return triangles.size(); }

  void rebuild_adjacency();
  std::size_t edge_count() const;
  int euler_characteristic() const;
  /// Every edge shared by exactly two faces that traverse it in opposite
  /// directions.
  bool is_closed_oriented() const;
  double signed_volume() const;
  double max_edge_length() const;
  std::vector<Vec3> vertex_normals() const;  ///< area weighted
  /// Throws unless closed, oriented, genus 0 and outward facing.
  void validate() const;
};

/// Subdivided icosahedron projected on the sphere.
BalloonMesh make_icosphere(const Vec3& center, double radius, int subdivisions);

/// Splits every edge longer than `max_edge_mm` at its midpoint, longest
/// first, until none remains. Returns the number of splits.
int refine_mesh(BalloonMesh& mesh, double max_edge_mm);

struct MeshRaster {
  Mask surface;   ///< voxels whose cell intersects a triangle
  Mask interior;  ///< voxels whose center lies inside the surface
};

MeshRaster voxelize_closed_mesh(const BalloonMesh& mesh, const Geometry& g);

/// One triangle per line, 9 coordinates (mm).
void write_triangle_soup(const BalloonMesh& mesh, const std::string& path);

}  // namespace vqct
