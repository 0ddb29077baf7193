#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "vqct/grid.hpp"

namespace testing {

inline vqct::Geometry cube(int n, double spacing = 1.0) {
  return vqct::Geometry(vqct::Index3(n, n, n), Eigen::Array3d::Constant(spacing), vqct::Vec3::Zero());
}

/// Mask of voxels whose world center satisfies `inside`.
inline vqct::Mask mask_where(const vqct::Geometry& g, const std::function<bool(const vqct::Vec3&)>& inside) {
  vqct::Mask m(g, 0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = inside(g.center(i)) ? 1 : 0;
  return m;
}

inline vqct::Mask ball(const vqct::Geometry& g, const vqct::Vec3& c, double r) {
  return mask_where(g, [&](const vqct::Vec3& p) { return (p - c).norm() <= r; });
}

inline double dice(const vqct::Mask& a, const vqct::Mask& b) {
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] != 0;
    nb += b[i] != 0;
    inter += a[i] && b[i];
  }
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("vqct_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
