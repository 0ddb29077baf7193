#include "vqct/anatomy.hpp"

#include <algorithm>
#include <cmath>

#include "vqct/presegment.hpp"

namespace vqct {

using nlohmann::json;

Vec3 centre_of_volume(const Mask& mask) {
  const Geometry& g = mask.geometry();
  // Integer index sums keep the mean independent of visiting order.
  Eigen::Array3d sum(0, 0, 0);
  std::size_t n = 0;
  for (int k = 0; k < g.dims.z(); ++k)
    for (int j = 0; j < g.dims.y(); ++j) {
      long long row = 0, cnt = 0;
      for (int i = 0; i < g.dims.x(); ++i)
        if (mask(i, j, k)) {
          row += i;
          ++cnt;
        }
      if (!cnt) continue;
      sum += Eigen::Array3d(static_cast<double>(row), static_cast<double>(j) * cnt,
                            static_cast<double>(k) * cnt);
      n += static_cast<std::size_t>(cnt);
    }
  if (n == 0) throw Error("centre of volume of an empty mask");
  return g.voxel_to_world((sum / static_cast<double>(n)).matrix());
}

ColumnSpline::ColumnSpline(std::vector<Vec3> points) : points_(std::move(points)) {
  if (points_.empty()) throw Error("column spline needs at least one point");
  knots_.push_back(0.0);
  for (std::size_t i = 1; i < points_.size(); ++i) {
    const double d = (points_[i] - points_[i - 1]).norm();
    if (!(d > 1e-9)) throw Error("column spline points must be distinct");
    knots_.push_back(knots_.back() + d);
  }
  const std::size_t n = points_.size();
  second_.assign(n, Vec3::Zero());
  if (n < 3) return;
  // Natural end conditions; Thomas algorithm on the interior knots.
  const std::size_t m = n - 2;
  std::vector<double> a(m), b(m), c(m);
  std::vector<Vec3> r(m);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = knots_[i] - knots_[i - 1], h1 = knots_[i + 1] - knots_[i];
    a[i - 1] = h0 / 6.0;
    b[i - 1] = (h0 + h1) / 3.0;
    c[i - 1] = h1 / 6.0;
    r[i - 1] = (points_[i + 1] - points_[i]) / h1 - (points_[i] - points_[i - 1]) / h0;
  }
  for (std::size_t i = 1; i < m; ++i) {
    const double w = a[i] / b[i - 1];
    b[i] -= w * c[i - 1];
    r[i] -= w * r[i - 1];
  }
  std::vector<Vec3> x(m);
  x[m - 1] = r[m - 1] / b[m - 1];
  for (std::size_t i = m - 1; i-- > 0;) x[i] = (r[i] - c[i] * x[i + 1]) / b[i];
  for (std::size_t i = 0; i < m; ++i) second_[i + 1] = x[i];
}

std::size_t ColumnSpline::segment(double s) const {
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), s);
  const std::size_t i = it == knots_.begin() ? 0 : static_cast<std::size_t>(it - knots_.begin()) - 1;
  return std::min(i, knots_.size() - 2);
}

Vec3 ColumnSpline::point(double s) const {
  if (points_.size() == 1) return points_[0] + s * Vec3::UnitZ();
  s = std::clamp(s, 0.0, length());
  const std::size_t i = segment(s);
  const double h = knots_[i + 1] - knots_[i];
  const double A = (knots_[i + 1] - s) / h, B = (s - knots_[i]) / h;
  return A * points_[i] + B * points_[i + 1] +
         ((A * A * A - A) * second_[i] + (B * B * B - B) * second_[i + 1]) * (h * h / 6.0);
}

Vec3 ColumnSpline::derivative(double s) const {
  if (points_.size() == 1) return Vec3::UnitZ();
  s = std::clamp(s, 0.0, length());
  const std::size_t i = segment(s);
  const double h = knots_[i + 1] - knots_[i];
  const double A = (knots_[i + 1] - s) / h, B = (s - knots_[i]) / h;
  return (points_[i + 1] - points_[i]) / h -
         (3.0 * A * A - 1.0) * h / 6.0 * second_[i] + (3.0 * B * B - 1.0) * h / 6.0 * second_[i + 1];
}

Vec3 ColumnSpline::tangent(double s) const { return derivative(s).normalized(); }

double ColumnSpline::nearest_parameter(const Vec3& p) const {
  if (points_.size() == 1) return p.z() - points_[0].z();
  constexpr int kSamples = 1000;
  const double len = length();
  int best = 0;
  double best_d = (point(0.0) - p).squaredNorm();
  for (int i = 1; i <= kSamples; ++i) {
    const double d = (point(len * i / kSamples) - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  // Golden-section refinement inside the neighbouring sample interval.
  double lo = len * std::max(0, best - 1) / kSamples, hi = len * std::min(kSamples, best + 1) / kSamples;
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
  double fc = (point(c) - p).squaredNorm(), fd = (point(d) - p).squaredNorm();
  for (int it = 0; it < 60; ++it) {
    if (fc <= fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - gr * (hi - lo);
      fc = (point(c) - p).squaredNorm();
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + gr * (hi - lo);
      fd = (point(d) - p).squaredNorm();
    }
  }
  return 0.5 * (lo + hi);
}

VcsResult compute_vcs(const Vec3& m1, const CanalLine& canal, const ColumnSpline& spline,
                      const std::optional<Vec3>& m3, const std::optional<Vec3>& m4) {
  if (!m1.allFinite()) throw Error("M1 is not finite");
  const Vec3 z = spline.tangent(spline.nearest_parameter(m1));
  const auto m2 = canal.intersect(Plane::through(m1, z));
  if (!m2) throw Error("canal centerline does not cross the plane through M1");
  const Vec3 d = *m2 - m1;
  const Vec3 xp = d - d.dot(z) * z;
  if (!(xp.norm() > 1e-9)) throw Error("M2 coincides with M1");
  VcsResult r;
  r.landmarks = {m1, *m2, m3, m4};
  r.vcs.origin = m1;
  r.vcs.z = z;
  r.vcs.x = xp.normalized();
  r.vcs.y = r.vcs.z.cross(r.vcs.x);
  return r;
}

void VoiSpec::validate() const {
  if (!(radius_fraction > 0.0 && radius_fraction <= 1.0) ||
      !(height_fraction > 0.0 && height_fraction <= 1.0)) {
    throw Error("VOI fractions must lie in (0, 1]");
  }
}

namespace {

double wrap_angle(double a) {
  while (a <= -M_PI) a += 2.0 * M_PI;
  while (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

double axial_angle(const Vcs& vcs, const Vec3& p) {
  const Vec3 d = p - vcs.origin;
  return std::atan2(d.dot(vcs.y), d.dot(vcs.x));
}

// Sector [start, start + extent) in the axial plane, measured from +x.
struct Sector {
  double start;
  double extent;
  bool contains(double a) const { return wrap_angle(a - start) >= 0.0 && wrap_angle(a - start) <= extent; }
};

Sector posterior_sector(const Vcs& vcs, const Vec3& m3, const Vec3& m4) {
  const double a3 = axial_angle(vcs, m3), a4 = axial_angle(vcs, m4);
  // Arc from a3 counter-clockwise to a4, or the complementary one; keep the
  // one holding the +x (canal) direction.
  double ext = wrap_angle(a4 - a3);
  if (ext < 0.0) ext += 2.0 * M_PI;
  Sector s{a3, ext};
  if (!s.contains(0.0)) s = Sector{a4, 2.0 * M_PI - ext};
  return s;
}

}  // namespace

double pacman_sector(const Vcs& vcs, const Vec3& m3, const Vec3& m4) {
  return posterior_sector(vcs, m3, m4).extent;
}

Mask make_voi(const Vcs& vcs, const VoiSpec& spec, const Mask& body, const std::optional<Vec3>& m3,
              const std::optional<Vec3>& m4) {
  spec.validate();
  const Geometry& g = body.geometry();
  Index3 lo, hi;
  if (!bounding_box(body, lo, hi)) throw Error("VOI of an empty body mask");
  Eigen::Array3d mn = Eigen::Array3d::Constant(1e300), mx = Eigen::Array3d::Constant(-1e300);
  for (int k = lo.z(); k <= hi.z(); ++k)
    for (int j = lo.y(); j <= hi.y(); ++j)
      for (int i = lo.x(); i <= hi.x(); ++i) {
        if (!body(i, j, k)) continue;
        const Vec3 d = g.center(i, j, k) - vcs.origin;
        const Eigen::Array3d c(d.dot(vcs.x), d.dot(vcs.y), d.dot(vcs.z));
        mn = mn.min(c);
        mx = mx.max(c);
      }
  const double radius = spec.radius_fraction * 0.5 * std::min(mx.x() - mn.x(), mx.y() - mn.y());
  const double half_h = 0.5 * spec.height_fraction * (mx.z() - mn.z());

  std::optional<Sector> cut;
  if (spec.kind == VoiKind::pacman) {
    if (!m3 || !m4) throw Error("pacman VOI needs both pedicle landmarks");
    cut = posterior_sector(vcs, *m3, *m4);
    if (!(cut->extent > 0.0 && cut->extent < M_PI)) {
      throw Error("pacman sector must span between 0 and 180 degrees");
    }
  }
  Mask out(g, 0);
  std::size_t n = 0;
  for (int k = lo.z(); k <= hi.z(); ++k)
    for (int j = lo.y(); j <= hi.y(); ++j)
      for (int i = lo.x(); i <= hi.x(); ++i) {
        if (!body(i, j, k)) continue;
        const Vec3 d = g.center(i, j, k) - vcs.origin;
        const double h = d.dot(vcs.z);
        if (std::abs(h) > half_h) continue;
        const double px = d.dot(vcs.x), py = d.dot(vcs.y);
        if (px * px + py * py > radius * radius) continue;
        if (cut && cut->contains(std::atan2(py, px))) continue;
        out(i, j, k) = 1;
        ++n;
      }
  if (n == 0) throw Error("VOI is empty");
  return out;
}

json landmarks_json(const VcsResult& r) {
  auto vec = [](const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); };
  json lm = {{"M1", vec(r.landmarks.m1)}, {"M2", vec(r.landmarks.m2)}};
  lm["M3"] = r.landmarks.m3 ? vec(*r.landmarks.m3) : json(nullptr);
  lm["M4"] = r.landmarks.m4 ? vec(*r.landmarks.m4) : json(nullptr);
  return lm;
}

}  // namespace vqct
