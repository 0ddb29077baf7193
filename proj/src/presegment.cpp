#include "vqct/presegment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>

#include "vqct/morphology.hpp"

namespace vqct {

using nlohmann::json;

void SeedSet::validate() const {
  if (levels.empty()) throw Error("seed set is empty");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!levels[i].center.allFinite()) throw Error("seed " + levels[i].name + " is not finite");
    if (i > 0 && levels[i].center.z() <= levels[i - 1].center.z()) {
      throw Error("seeds must be sorted caudal to cranial by z");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if ((levels[i].center - levels[j].center).norm() <= kMinSeparationMm) {
        throw Error("seeds " + levels[j].name + " and " + levels[i].name + " are too close");
      }
    }
  }
}

void to_json(json& j, const SeedSet& s) {
  j = json{{"levels", json::array()}};
  for (const auto& l : s.levels) {
    j["levels"].push_back(
        {{"name", l.name}, {"center_mm", {l.center.x(), l.center.y(), l.center.z()}}});
  }
}

void from_json(const json& j, SeedSet& s) {
  s.levels.clear();
  for (const auto& l : j.at("levels")) {
    const auto c = l.at("center_mm").get<std::vector<double>>();
    if (c.size() != 3) throw Error("seed center_mm must have 3 entries");
    s.levels.push_back({l.value("name", "L" + std::to_string(s.levels.size() + 1)),
                        Vec3(c[0], c[1], c[2])});
  }
}

SeedSet SeedSet::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open seeds file " + path);
  try {
    return json::parse(in).get<SeedSet>();
  } catch (const json::exception& e) {
    throw Error("bad seeds file " + path + ": " + e.what());
  }
}

void SeedSet::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write seeds file " + path);
  out << json(*this).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// SearchRegion

SearchRegion::SearchRegion(const Vec3& axis_point, const Vec3& axis_dir, double radius,
                           double half_length, std::vector<HalfSpace> planes)
    : point_(axis_point),
      axis_(axis_dir.normalized()),
      radius_(radius),
      half_length_(half_length),
      planes_(std::move(planes)) {
  if (!(radius > 0.0) || !(half_length > 0.0)) throw Error("search cylinder must be non-empty");
}

bool SearchRegion::in_cylinder(const Vec3& p) const {
  const Vec3 q = p - point_;
  const double h = q.dot(axis_);
  if (std::abs(h) > half_length_) return false;
  return q.squaredNorm() - h * h <= radius_ * radius_;
}

bool SearchRegion::contains(const Vec3& p) const {
  if (!in_cylinder(p)) return false;
  for (const auto& hs : planes_)
    if (!hs.inside(p)) return false;
  return true;
}

double SearchRegion::outside_distance(const Vec3& p) const {
  const Vec3 q = p - point_;
  const double h = q.dot(axis_);
  const double rho = std::sqrt(std::max(0.0, q.squaredNorm() - h * h));
  double d = std::max({0.0, rho - radius_, std::abs(h) - half_length_});
  for (const auto& hs : planes_) d = std::max(d, hs.violation(p));
  return d;
}

bool SearchRegion::voxel_bounds(const Geometry& g, Index3& lo, Index3& hi) const {
  for (int a = 0; a < 3; ++a) {
    const double spread = radius_ * std::sqrt(std::max(0.0, 1.0 - axis_[a] * axis_[a]));
    const double e = half_length_ * std::abs(axis_[a]);
    const double wlo = point_[a] - e - spread, whi = point_[a] + e + spread;
    lo[a] = std::max(0, static_cast<int>(std::floor((wlo - g.origin[a]) / g.spacing[a])));
    hi[a] = std::min(g.dims[a] - 1, static_cast<int>(std::ceil((whi - g.origin[a]) / g.spacing[a])));
    if (lo[a] > hi[a]) return false;
  }
  return true;
}

std::vector<std::size_t> SearchRegion::voxels(const Geometry& g) const {
  std::vector<std::size_t> out;
  Index3 lo, hi;
  if (!voxel_bounds(g, lo, hi)) return out;
  for (int k = lo.z(); k <= hi.z(); ++k)
    for (int j = lo.y(); j <= hi.y(); ++j)
      for (int i = lo.x(); i <= hi.x(); ++i)
        if (contains(g.center(i, j, k))) out.push_back(g.linear(i, j, k));
  return out;
}

Mask SearchRegion::mask(const Geometry& g) const {
  Mask m(g, 0);
  for (auto idx : voxels(g)) m[idx] = 1;
  return m;
}

json SearchRegion::to_json() const {
  auto vec = [](const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); };
  json planes = json::array();
  for (const auto& hs : planes_) {
    planes.push_back({{"normal", vec(hs.plane.normal)},
                      {"offset_mm", hs.plane.offset},
                      {"keep_positive", hs.keep_positive}});
  }
  return {{"axis_point_mm", vec(point_)},
          {"axis", vec(axis_)},
          {"radius_mm", radius_},
          {"half_length_mm", half_length_},
          {"planes", planes}};
}

// ---------------------------------------------------------------------------
// Canal line

std::optional<Vec3> CanalLine::intersect(const Plane& plane) const {
  if (points.empty()) return std::nullopt;
  double prev = plane.signed_distance(points[0]);
  if (prev == 0.0) return points[0];
  for (std::size_t i = 1; i < points.size(); ++i) {
    const double d = plane.signed_distance(points[i]);
    if (d == 0.0) return points[i];
    if ((prev < 0.0) != (d < 0.0)) {
      const double t = prev / (prev - d);
      return Vec3(points[i - 1] + t * (points[i] - points[i - 1]));
    }
    prev = d;
  }
  return std::nullopt;
}

namespace {

template <typename F>
auto interpolate_z(const std::vector<Vec3>& pts, double z, F&& value) {
  if (pts.size() == 1 || z <= pts.front().z()) return value(0, 0, 0.0);
  if (z >= pts.back().z()) return value(pts.size() - 1, pts.size() - 1, 0.0);
  const auto it = std::upper_bound(pts.begin(), pts.end(), z,
                                   [](double zz, const Vec3& p) { return zz < p.z(); });
  const std::size_t hi = static_cast<std::size_t>(it - pts.begin());
  const std::size_t lo = hi - 1;
  const double t = (z - pts[lo].z()) / (pts[hi].z() - pts[lo].z());
  return value(lo, hi, t);
}

}  // namespace

Vec3 CanalLine::at_z(double z) const {
  if (points.empty()) throw Error("empty canal line");
  return interpolate_z(points, z, [&](std::size_t a, std::size_t b, double t) {
    return Vec3((1.0 - t) * points[a] + t * points[b]);
  });
}

double CanalLine::radius_at_z(double z) const {
  if (points.empty()) throw Error("empty canal line");
  return interpolate_z(points, z, [&](std::size_t a, std::size_t b, double t) {
    return (1.0 - t) * radii[a] + t * radii[b];
  });
}

json CanalLine::to_json() const {
  json pts = json::array();
  for (std::size_t i = 0; i < points.size(); ++i) {
    pts.push_back({{"point_mm", {points[i].x(), points[i].y(), points[i].z()}},
                   {"radius_mm", radii[i]},
                   {"detected", static_cast<bool>(detected[i])}});
  }
  return {{"points", pts}};
}

namespace {

Vec3 seed_center_at_z(const SeedSet& seeds, double z) {
  std::vector<Vec3> pts;
  for (const auto& s : seeds.levels) pts.push_back(s.center);
  return interpolate_z(pts, z, [&](std::size_t a, std::size_t b, double t) {
    return Vec3((1.0 - t) * pts[a] + t * pts[b]);
  });
}

struct CanalCandidate {
  Vec3 point;
  double radius;
};

// Enclosed dark components of one axial slice crop whose inscribed-circle
// center falls in the posterior window.
std::vector<CanalCandidate> slice_candidates(const Volume& vol, int k, const Vec3& body,
                                             const Vec3& post, const Vec3& lat,
                                             const CanalOptions& opt) {
  const Geometry& g = vol.geometry();
  const double reach_lat = 0.5 * opt.window_lateral_mm + 10.0;
  Vec3 wlo = Vec3::Constant(1e300), whi = Vec3::Constant(-1e300);
  for (double a : {-reach_lat, reach_lat})
    for (double b : {-10.0, opt.window_posterior_mm + 10.0}) {
      const Vec3 c = body + a * lat + b * post;
      wlo = wlo.cwiseMin(c);
      whi = whi.cwiseMax(c);
    }
  Index3 lo, hi;
  for (int a = 0; a < 2; ++a) {
    lo[a] = std::max(0, static_cast<int>(std::floor((wlo[a] - g.origin[a]) / g.spacing[a])));
    hi[a] = std::min(g.dims[a] - 1, static_cast<int>(std::ceil((whi[a] - g.origin[a]) / g.spacing[a])));
    if (lo[a] > hi[a]) return {};
  }
  lo[2] = hi[2] = k;
  const Volume slab = crop(vol, lo, hi);
  const Geometry& sg = slab.geometry();
  Mask bone(sg, 0);
  for (std::size_t i = 0; i < slab.size(); ++i) bone[i] = slab[i] > opt.bone_threshold ? 1 : 0;
  if (count(bone) == 0) return {};
  const DistanceField dist = edt(bone);
  LabelMap labels;
  std::vector<std::size_t> sizes;
  const int n = label_components(mask_not(bone), labels, 4, &sizes);
  std::vector<bool> touches(static_cast<std::size_t>(n) + 1, false);
  const int nx = sg.dims.x(), ny = sg.dims.y();
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      if (i == 0 || j == 0 || i == nx - 1 || j == ny - 1) touches[labels(i, j, 0)] = true;

  std::vector<double> best(static_cast<std::size_t>(n) + 1, -1.0);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const int l = labels[i];
    if (l > 0 && !touches[l]) best[l] = std::max(best[l], dist[i]);
  }
  std::vector<CanalCandidate> out;
  for (int l = 1; l <= n; ++l) {
    if (touches[l] || best[l] < opt.min_radius_mm) continue;
    // Plateau centroid keeps the center symmetric on ties.
    Vec3 sum = Vec3::Zero();
    double cnt = 0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
      if (labels[i] == l && dist[i] >= best[l] - 1e-9) {
        sum += sg.center(i);
        cnt += 1.0;
      }
    }
    const Vec3 c = sum / cnt;
    const double dl = (c - body).dot(lat), dp = (c - body).dot(post);
    if (std::abs(dl) > 0.5 * opt.window_lateral_mm || dp < 0.0 || dp > opt.window_posterior_mm) {
      continue;
    }
    out.push_back({c, best[l]});
  }
  return out;
}

// Least-squares line through points (x,y as functions of z).
Vec3 extrapolate(const std::vector<Vec3>& pts, double z) {
  if (pts.size() == 1) return Vec3(pts[0].x(), pts[0].y(), z);
  double mz = 0;
  Eigen::Vector2d mxy(0, 0);
  for (const auto& p : pts) {
    mz += p.z();
    mxy += p.head<2>();
  }
  mz /= pts.size();
  mxy /= static_cast<double>(pts.size());
  double szz = 0;
  Eigen::Vector2d sxy(0, 0);
  for (const auto& p : pts) {
    szz += (p.z() - mz) * (p.z() - mz);
    sxy += (p.z() - mz) * (p.head<2>() - mxy);
  }
  const Eigen::Vector2d slope = szz > 0 ? Eigen::Vector2d(sxy / szz) : Eigen::Vector2d(0, 0);
  const Eigen::Vector2d xy = mxy + (z - mz) * slope;
  return Vec3(xy.x(), xy.y(), z);
}

}  // namespace

CanalLine detect_canal(const Volume& vol, const SeedSet& seeds, const CanalOptions& opt) {
  seeds.validate();
  const Geometry& g = vol.geometry();
  Vec3 post = opt.posterior;
  post.z() = 0.0;
  if (post.norm() < 1e-9) throw Error("posterior direction must have an in-plane component");
  post.normalize();
  const Vec3 lat = Vec3::UnitZ().cross(post);

  const double z_lo = seeds.levels.front().center.z() - opt.extend_mm;
  const double z_hi = seeds.levels.back().center.z() + opt.extend_mm;
  const int k_lo = std::max(0, static_cast<int>(std::ceil((z_lo - g.origin.z()) / g.spacing.z())));
  const int k_hi =
      std::min(g.dims.z() - 1, static_cast<int>(std::floor((z_hi - g.origin.z()) / g.spacing.z())));
  if (k_lo > k_hi) throw Error("seeds do not span any slice of the volume");
  const int ns = k_hi - k_lo + 1;

  std::vector<std::vector<CanalCandidate>> cand(static_cast<std::size_t>(ns));
  int anchor = -1;
  std::size_t anchor_c = 0;
  for (int s = 0; s < ns; ++s) {
    const int k = k_lo + s;
    const double z = g.origin.z() + k * g.spacing.z();
    Vec3 body = seed_center_at_z(seeds, z);
    body.z() = z;
    cand[s] = slice_candidates(vol, k, body, post, lat, opt);
    for (std::size_t c = 0; c < cand[s].size(); ++c) {
      if (anchor < 0 || cand[s][c].radius > cand[anchor][anchor_c].radius) {
        anchor = s;
        anchor_c = c;
      }
    }
  }
  if (anchor < 0) throw Error("no canal-like maximum found in the posterior window");

  std::vector<int> chosen(static_cast<std::size_t>(ns), -1);
  chosen[anchor] = static_cast<int>(anchor_c);
  for (int dir : {1, -1}) {
    int last = anchor;
    for (int s = anchor + dir; s >= 0 && s < ns; s += dir) {
      const Vec3& ref = cand[last][chosen[last]].point;
      const double allow = opt.max_step_mm * std::abs(s - last);
      int pick = -1;
      double pick_d = 0.0;
      for (std::size_t c = 0; c < cand[s].size(); ++c) {
        const Eigen::Vector2d delta = (cand[s][c].point - ref).head<2>();
        const double d = delta.norm();
        if (d > allow) continue;
        if (pick < 0 || d < pick_d) {
          pick = static_cast<int>(c);
          pick_d = d;
        }
      }
      if (pick >= 0) {
        chosen[s] = pick;
        last = s;
      }
    }
  }

  std::vector<int> acc;
  for (int s = 0; s < ns; ++s)
    if (chosen[s] >= 0) acc.push_back(s);

  auto tail_points = [&](bool front) {
    std::vector<Vec3> pts;
    const Vec3& end = cand[front ? acc.front() : acc.back()][chosen[front ? acc.front() : acc.back()]].point;
    for (int s : acc) {
      const Vec3& p = cand[s][chosen[s]].point;
      if (std::abs(p.z() - end.z()) <= 20.0) pts.push_back(p);
    }
    return pts;
  };
  const std::vector<Vec3> head = tail_points(true), tail = tail_points(false);
  const double r_front = cand[acc.front()][chosen[acc.front()]].radius;
  const double r_back = cand[acc.back()][chosen[acc.back()]].radius;

  CanalLine line;
  std::size_t next = 0;
  for (int s = 0; s < ns; ++s) {
    const double z = g.origin.z() + (k_lo + s) * g.spacing.z();
    while (next < acc.size() && acc[next] < s) ++next;
    if (next < acc.size() && acc[next] == s) {
      line.points.push_back(cand[s][chosen[s]].point);
      line.radii.push_back(cand[s][chosen[s]].radius);
      line.detected.push_back(true);
    } else if (next == 0) {
      line.points.push_back(extrapolate(head, z));
      line.radii.push_back(r_front);
      line.detected.push_back(false);
    } else if (next == acc.size()) {
      line.points.push_back(extrapolate(tail, z));
      line.radii.push_back(r_back);
      line.detected.push_back(false);
    } else {
      const int a = acc[next - 1], b = acc[next];
      const double t = static_cast<double>(s - a) / (b - a);
      const auto& pa = cand[a][chosen[a]];
      const auto& pb = cand[b][chosen[b]];
      Vec3 p = (1.0 - t) * pa.point + t * pb.point;
      p.z() = z;
      line.points.push_back(p);
      line.radii.push_back((1.0 - t) * pa.radius + t * pb.radius);
      line.detected.push_back(false);
    }
  }
  return line;
}

double estimate_body_radius(const Volume& vol, const Vec3& seed, double bone_threshold,
                            double cap_mm, Eigen::Vector2d* half_extents) {
  const Geometry& g = vol.geometry();
  if (!g.contains_world(seed)) throw Error("seed lies outside the volume");
  const Index3 sv = g.nearest_voxel(seed);
  const int k = sv.z();
  // Start from the darkest voxel next to the seed so a single bright noise
  // sample does not block the flood.
  int si = -1, sj = -1;
  float darkest = std::numeric_limits<float>::infinity();
  for (int dj = -1; dj <= 1; ++dj)
    for (int di = -1; di <= 1; ++di) {
      const int i = sv.x() + di, j = sv.y() + dj;
      if (!g.in_bounds(i, j, k)) continue;
      if (vol(i, j, k) < darkest) {
        darkest = vol(i, j, k);
        si = i;
        sj = j;
      }
    }
  if (!(darkest < bone_threshold)) throw Error("seed lies in bright bone");

  const int nx = g.dims.x(), ny = g.dims.y();
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(nx) * ny, 0);
  std::queue<std::pair<int, int>> q;
  q.push({si, sj});
  seen[static_cast<std::size_t>(sj) * nx + si] = 1;
  const Vec3 c = g.center(si, sj, k);
  std::size_t n = 0;
  bool capped = false;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  while (!q.empty()) {
    const auto [i, j] = q.front();
    q.pop();
    ++n;
    const Vec3 p = g.center(i, j, k);
    xmin = std::min(xmin, p.x());
    xmax = std::max(xmax, p.x());
    ymin = std::min(ymin, p.y());
    ymax = std::max(ymax, p.y());
    const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
    for (int d = 0; d < 4; ++d) {
      const int a = i + di[d], b = j + dj[d];
      if (a < 0 || b < 0 || a >= nx || b >= ny) {
        capped = true;
        continue;
      }
      auto& s = seen[static_cast<std::size_t>(b) * nx + a];
      if (s || !(vol(a, b, k) < bone_threshold)) continue;
      if ((g.center(a, b, k) - c).head<2>().norm() > cap_mm) {
        capped = true;
        continue;
      }
      s = 1;
      q.push({a, b});
    }
  }
  const double hx = 0.5 * (xmax - xmin + g.spacing.x());
  const double hy = 0.5 * (ymax - ymin + g.spacing.y());
  if (half_extents) *half_extents = {std::min(hx, cap_mm), std::min(hy, cap_mm)};
  if (capped) return cap_mm;
  return std::min(cap_mm, std::sqrt(n * g.spacing.x() * g.spacing.y() / M_PI));
}

// ---------------------------------------------------------------------------
// Disk planes

double disk_objective(const Volume& vol, const Vec3& center, const Vec3& normal, double radius_mm,
                      const DiskPlaneOptions& opt) {
  const Eigen::Matrix3d f = frame_from_axis(normal);
  const Vec3 e1 = f.col(0), e2 = f.col(1), n = f.col(2);
  constexpr double ring_step = 1.5;
  double sum = 0.0, wsum = 0.0;
  for (double layer : opt.layers_mm) {
    const double wl = std::exp(-0.5 * layer * layer / (opt.layer_sigma_mm * opt.layer_sigma_mm));
    const Vec3 lc = center + layer * n;
    sum += wl * sample_trilinear(vol, lc);
    wsum += wl;
    for (double r = ring_step; r <= radius_mm + 1e-9; r += ring_step) {
      const int m = std::max(6, static_cast<int>(std::lround(2.0 * M_PI * r / ring_step)));
      for (int a = 0; a < m; ++a) {
        const double phi = 2.0 * M_PI * a / m;
        sum += wl * sample_trilinear(vol, lc + r * (std::cos(phi) * e1 + std::sin(phi) * e2));
        wsum += wl;
      }
    }
  }
  return sum / wsum;
}

namespace {

struct PlaneCandidate {
  double value;
  double s;      // mm along the seed line
  double alpha;  // degrees
  double beta;
};

Vec3 tilted_normal(const Vec3& d, const Vec3& e1, const Vec3& e2, double alpha, double beta) {
  return (d + std::tan(radians(alpha)) * e1 + std::tan(radians(beta)) * e2).normalized();
}

double tilt_of(double alpha, double beta) {
  const double ta = std::tan(radians(alpha)), tb = std::tan(radians(beta));
  return std::atan(std::sqrt(ta * ta + tb * tb));
}

// Ordering with tie-breaks: lower objective, then smaller tilt, then closer
// to the midpoint.
bool better(const PlaneCandidate& a, const PlaneCandidate& b, double mid) {
  const double eps = 1e-9 * std::max(1.0, std::abs(b.value));
  if (a.value < b.value - eps) return true;
  if (a.value > b.value + eps) return false;
  const double ta = tilt_of(a.alpha, a.beta), tb = tilt_of(b.alpha, b.beta);
  if (ta < tb - 1e-12) return true;
  if (ta > tb + 1e-12) return false;
  return std::abs(a.s - mid) < std::abs(b.s - mid) - 1e-12;
}

Plane fit_pair(const Volume& vol, const Vec3& a, const Vec3& b, double disk_radius,
               const DiskPlaneOptions& opt) {
  const double len = (b - a).norm();
  if (len < 1e-6) throw Error("coincident seeds");
  const Vec3 d = (b - a) / len;
  const Eigen::Matrix3d f = frame_from_axis(d);
  const Vec3 e1 = f.col(0), e2 = f.col(1);
  const double mid = 0.5 * len;
  auto eval = [&](double s, double al, double be) {
    return PlaneCandidate{
        disk_objective(vol, a + s * d, tilted_normal(d, e1, e2, al, be), disk_radius, opt), s, al,
        be};
  };

  const int ns = static_cast<int>(std::floor(mid / opt.offset_step_mm));
  const int nt = static_cast<int>(std::floor(opt.max_tilt_deg / opt.tilt_step_deg + 1e-9));
  std::optional<PlaneCandidate> best;
  for (int i = -ns; i <= ns; ++i) {
    const double s = mid + i * opt.offset_step_mm;
    for (int ia = -nt; ia <= nt; ++ia)
      for (int ib = -nt; ib <= nt; ++ib) {
        const PlaneCandidate c = eval(s, ia * opt.tilt_step_deg, ib * opt.tilt_step_deg);
        if (!best || better(c, *best, mid)) best = c;
      }
  }

  // Pattern search around the grid optimum.
  double ds = 0.5 * opt.offset_step_mm, dt = 0.5 * opt.tilt_step_deg;
  PlaneCandidate cur = *best;
  while (ds > 0.02 || dt > 0.02) {
    bool moved = false;
    const double steps[6][3] = {{ds, 0, 0}, {-ds, 0, 0}, {0, dt, 0},
                                {0, -dt, 0}, {0, 0, dt}, {0, 0, -dt}};
    for (const auto& st : steps) {
      const double s = cur.s + st[0], al = cur.alpha + st[1], be = cur.beta + st[2];
      if (s < 0.0 || s > len || std::abs(al) > opt.max_tilt_deg || std::abs(be) > opt.max_tilt_deg) {
        continue;
      }
      const PlaneCandidate c = eval(s, al, be);
      if (c.value < cur.value - 1e-9 * std::max(1.0, std::abs(cur.value))) {
        cur = c;
        moved = true;
      }
    }
    if (!moved) {
      ds *= 0.5;
      dt *= 0.5;
    }
  }
  return Plane::through(a + cur.s * d, tilted_normal(d, e1, e2, cur.alpha, cur.beta));
}

// End cap beyond an end seed. The tilt is the neighbouring plane's; the
// offset is searched out to twice the seed-to-plane distance, ties going to
// the mirror image of that plane. Mirroring alone would let a displaced seed
// drag the cap into its own body.
Plane fit_cap(const Volume& vol, const Vec3& seed, const Plane& neighbour, double side,
              double disk_radius, const DiskPlaneOptions& opt) {
  const Vec3 d = side * neighbour.normal;
  const double mirror = std::abs(neighbour.signed_distance(seed));
  auto eval = [&](double s) {
    return PlaneCandidate{disk_objective(vol, seed + s * d, neighbour.normal, disk_radius, opt), s, 0, 0};
  };
  std::optional<PlaneCandidate> best;
  const int n = static_cast<int>(std::floor(mirror / opt.offset_step_mm));
  for (int i = -n; i <= n; ++i) {
    const PlaneCandidate c = eval(mirror + i * opt.offset_step_mm);
    if (c.s > 0.0 && (!best || better(c, *best, mirror))) best = c;
  }
  PlaneCandidate cur = best ? *best : eval(mirror);
  for (double ds = 0.5 * opt.offset_step_mm; ds > 0.02;) {
    bool moved = false;
    for (double st : {ds, -ds}) {
      const double s = cur.s + st;
      if (s <= 0.0 || s > 2.0 * mirror) continue;
      const PlaneCandidate c = eval(s);
      if (c.value < cur.value - 1e-9 * std::max(1.0, std::abs(cur.value))) {
        cur = c;
        moved = true;
      }
    }
    if (!moved) ds *= 0.5;
  }
  return Plane::through(seed + cur.s * d, neighbour.normal);
}

}  // namespace

std::vector<Plane> fit_disk_planes(const Volume& vol, const SeedSet& seeds,
                                   const DiskPlaneOptions& opt) {
  seeds.validate();
  const auto& lv = seeds.levels;
  if (lv.size() == 1) {
    const Vec3& s = lv[0].center;
    return {Plane::through(s - opt.default_half_height_mm * Vec3::UnitZ(), Vec3::UnitZ()),
            Plane::through(s + opt.default_half_height_mm * Vec3::UnitZ(), Vec3::UnitZ())};
  }
  std::vector<double> radius;
  for (const auto& s : lv) radius.push_back(estimate_body_radius(vol, s.center, opt.bone_threshold));

  std::vector<Plane> inner;
  for (std::size_t i = 0; i + 1 < lv.size(); ++i) {
    const double r = opt.disk_radius_fraction * std::min(radius[i], radius[i + 1]);
    inner.push_back(fit_pair(vol, lv[i].center, lv[i + 1].center, r, opt));
  }
  std::vector<Plane> out;
  out.push_back(fit_cap(vol, lv.front().center, inner.front(), -1.0,
                        opt.disk_radius_fraction * radius.front(), opt));
  out.insert(out.end(), inner.begin(), inner.end());
  out.push_back(fit_cap(vol, lv.back().center, inner.back(), 1.0,
                        opt.disk_radius_fraction * radius.back(), opt));
  return out;
}

SearchRegion build_search_region(const Vec3& seed, const CanalLine& canal, const Plane& lower,
                                 const Plane& upper, const RegionOptions& opt) {
  if (!(lower.signed_distance(seed) > 0.0 && upper.signed_distance(seed) < 0.0)) {
    throw Error("seed lies outside the slab between its disk planes");
  }
  const Vec3 axis = (lower.normal + upper.normal).normalized();
  const Plane mid = Plane::through(seed, axis);
  const auto hit = canal.intersect(mid);
  const Vec3 cp = hit ? *hit : canal.at_z(seed.z());
  const Vec3 off = cp - seed;
  const double dist = (off - off.dot(axis) * axis).norm();
  const double radius = dist + canal.radius_at_z(cp.z()) + opt.margin_mm;
  double half = 0.0;
  for (const Plane* p : {&lower, &upper}) {
    const double c = std::abs(p->normal.dot(axis));
    const double tilt = std::acos(std::min(1.0, c));
    half = std::max(half, std::abs(p->signed_distance(seed)) / c + radius * std::tan(tilt));
  }
  return SearchRegion(seed, axis, radius, half + 1.0,
                      {HalfSpace{lower, true}, HalfSpace{upper, false}});
}

}  // namespace vqct
