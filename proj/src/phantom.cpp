#include "vqct/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace vqct {

using nlohmann::json;

PhantomSpec PhantomSpec::default_three_level() {
  PhantomSpec s;
  const char* names[] = {"L1", "L2", "L3"};
  const double bmd[] = {50.0, 100.0, 200.0};
  for (int i = 0; i < 3; ++i) {
    VertebraSpec v;
    v.name = names[i];
    v.trabecular_bmd = bmd[i];
    s.levels.push_back(v);
  }
  return s;
}

void PhantomSpec::validate() const {
  if (levels.empty()) throw Error("phantom needs at least one level");
  if (!(spacing > 0.0).all()) throw Error("phantom spacing must be positive");
  if (noise_sigma < 0.0) throw Error("phantom noise sigma must be non-negative");
  if (!(gap_mm > 0.0) || margin_mm < 0.0) throw Error("phantom gap/margin invalid");
  for (const auto& v : levels) {
    const std::string at = " (level " + v.name + ")";
    if (!(v.cortical_bmd > v.trabecular_bmd && v.trabecular_bmd > soft_tissue_value)) {
      throw Error("phantom requires cortical > trabecular > soft tissue BMD" + at);
    }
    for (double p : {v.body_radius_mm, v.body_aspect, v.body_height_mm, v.cortical_thickness_mm,
                     v.pedicle_radius_mm, v.canal_radius_mm, v.arch_radius_mm,
                     v.process_extent_mm}) {
      if (!(p > 0.0)) throw Error("phantom geometric parameters must be positive" + at);
    }
    if (v.cortical_thickness_mm >= v.body_depth_mm() ||
        2.0 * v.cortical_thickness_mm >= v.body_height_mm) {
      throw Error("cortical shell thicker than the body" + at);
    }
    if (v.arch_radius_mm > 0.5 * v.body_height_mm || v.pedicle_radius_mm > v.arch_radius_mm ||
        v.pedicle_lateral_mm() >= v.body_radius_mm) {
      throw Error("posterior elements do not fit the body" + at);
    }
  }
}

void to_json(json& j, const VertebraSpec& v) {
  j = json{{"name", v.name},
           {"trabecular_bmd", v.trabecular_bmd},
           {"body_radius_mm", v.body_radius_mm},
           {"body_aspect", v.body_aspect},
           {"body_height_mm", v.body_height_mm},
           {"cortical_thickness_mm", v.cortical_thickness_mm},
           {"cortical_bmd", v.cortical_bmd},
           {"pedicle_radius_mm", v.pedicle_radius_mm},
           {"canal_radius_mm", v.canal_radius_mm},
           {"arch_radius_mm", v.arch_radius_mm},
           {"process_extent_mm", v.process_extent_mm},
           {"tilt_deg", v.tilt_deg},
           {"offset_mm", {v.offset_mm.x(), v.offset_mm.y()}}};
}

void from_json(const json& j, VertebraSpec& v) {
  const VertebraSpec d;
  v.name = j.value("name", d.name);
  v.trabecular_bmd = j.value("trabecular_bmd", d.trabecular_bmd);
  v.body_radius_mm = j.value("body_radius_mm", d.body_radius_mm);
  v.body_aspect = j.value("body_aspect", d.body_aspect);
  v.body_height_mm = j.value("body_height_mm", d.body_height_mm);
  v.cortical_thickness_mm = j.value("cortical_thickness_mm", d.cortical_thickness_mm);
  v.cortical_bmd = j.value("cortical_bmd", d.cortical_bmd);
  v.pedicle_radius_mm = j.value("pedicle_radius_mm", d.pedicle_radius_mm);
  v.canal_radius_mm = j.value("canal_radius_mm", d.canal_radius_mm);
  v.arch_radius_mm = j.value("arch_radius_mm", d.arch_radius_mm);
  v.process_extent_mm = j.value("process_extent_mm", d.process_extent_mm);
  v.tilt_deg = j.value("tilt_deg", d.tilt_deg);
  if (j.contains("offset_mm")) {
    const auto o = j.at("offset_mm").get<std::vector<double>>();
    if (o.size() != 2) throw Error("offset_mm must have 2 entries");
    v.offset_mm = {o[0], o[1]};
  }
}

void to_json(json& j, const PhantomSpec& s) {
  j = json{{"levels", s.levels},
           {"soft_tissue_value", s.soft_tissue_value},
           {"spacing_mm", {s.spacing.x(), s.spacing.y(), s.spacing.z()}},
           {"noise_sigma", s.noise_sigma},
           {"rng_seed", s.rng_seed},
           {"gap_mm", s.gap_mm},
           {"margin_mm", s.margin_mm}};
}

void from_json(const json& j, PhantomSpec& s) {
  const PhantomSpec d = PhantomSpec::default_three_level();
  s.levels = j.contains("levels") ? j.at("levels").get<std::vector<VertebraSpec>>() : d.levels;
  s.soft_tissue_value = j.value("soft_tissue_value", d.soft_tissue_value);
  if (j.contains("spacing_mm")) {
    const auto sp = j.at("spacing_mm").get<std::vector<double>>();
    if (sp.size() != 3) throw Error("spacing_mm must have 3 entries");
    s.spacing = {sp[0], sp[1], sp[2]};
  }
  s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  s.rng_seed = j.value("rng_seed", d.rng_seed);
  s.gap_mm = j.value("gap_mm", d.gap_mm);
  s.margin_mm = j.value("margin_mm", d.margin_mm);
}

namespace {

struct PlacedLevel {
  const VertebraSpec* spec;
  Vec3 center;
  Eigen::Matrix3d frame;
  Vec3 box_lo, box_hi;  // world AABB
};

double lateral_extent(const VertebraSpec& v) {
  return std::max(v.body_radius_mm, v.canal_radius_mm + 2.0 * v.arch_radius_mm);
}

double posterior_extent(const VertebraSpec& v) {
  return v.canal_offset_mm() + v.canal_radius_mm + 2.0 * v.arch_radius_mm + v.process_extent_mm;
}

/// Tissue part at local coordinates, or -1 outside every primitive.
int classify_local(const VertebraSpec& s, const Vec3& q) {
  const double u = q.x(), v = q.y(), w = q.z();
  const double a = s.body_radius_mm, b = s.body_depth_mm(), h2 = 0.5 * s.body_height_mm;
  const double t = s.cortical_thickness_mm;
  const double eb = (u / a) * (u / a) + (v / b) * (v / b);
  // Half-open along w so a grid-aligned end face does not add a slice.
  if (eb <= 1.0 && w >= -h2 && w < h2) {
    const double ai = a - t, bi = b - t;
    const double et = (u / ai) * (u / ai) + (v / bi) * (v / bi);
    if (et <= 1.0 && w >= t - h2 && w < h2 - t) return static_cast<int>(TissuePart::trabecular);
    return static_cast<int>(TissuePart::shell);
  }
  const double yc = s.canal_offset_mm();
  const double rp = s.pedicle_radius_mm, ra = s.arch_radius_mm;
  const double uc = s.pedicle_lateral_mm();
  const double ring = s.canal_radius_mm + ra;
  if (v >= 0.0 && v <= yc) {
    for (double side : {-1.0, 1.0}) {
      const double du = u - side * uc;
      if (du * du + w * w <= rp * rp) return static_cast<int>(TissuePart::posterior);
    }
  }
  if (v >= yc) {
    const double rho = std::hypot(u, v - yc);
    const double dr = rho - ring;
    if (dr * dr + w * w <= ra * ra) return static_cast<int>(TissuePart::posterior);
    if (std::abs(u) <= ra && std::abs(w) <= ra && v >= yc + ring &&
        v <= yc + ring + ra + s.process_extent_mm) {
      return static_cast<int>(TissuePart::posterior);
    }
  }
  return -1;
}

std::vector<PlacedLevel> place_levels(const PhantomSpec& spec) {
  std::vector<PlacedLevel> out;
  Vec3 base = Vec3::Zero();
  Vec3 prev_axis;
  for (std::size_t i = 0; i < spec.levels.size(); ++i) {
    const VertebraSpec& v = spec.levels[i];
    const Eigen::Matrix3d frame =
        Eigen::AngleAxisd(radians(v.tilt_deg), Vec3::UnitX()).toRotationMatrix();
    const Vec3 axis = frame.col(2);
    if (i > 0) {
      const Vec3 mid = (prev_axis + axis).normalized();
      base += (0.5 * spec.levels[i - 1].body_height_mm + spec.gap_mm + 0.5 * v.body_height_mm) * mid;
    }
    prev_axis = axis;
    PlacedLevel p;
    p.spec = &v;
    p.center = base + Vec3(v.offset_mm.x(), v.offset_mm.y(), 0.0);
    p.frame = frame;
    const double lat = lateral_extent(v);
    const double lo[3] = {-lat, -v.body_depth_mm(), -0.5 * v.body_height_mm};
    const double hi[3] = {lat, posterior_extent(v), 0.5 * v.body_height_mm};
    p.box_lo = Vec3::Constant(1e300);
    p.box_hi = Vec3::Constant(-1e300);
    for (int c = 0; c < 8; ++c) {
      const Vec3 q(c & 1 ? hi[0] : lo[0], c & 2 ? hi[1] : lo[1], c & 4 ? hi[2] : lo[2]);
      const Vec3 wpt = p.center + frame * q;
      p.box_lo = p.box_lo.cwiseMin(wpt);
      p.box_hi = p.box_hi.cwiseMax(wpt);
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace

Vec3 LevelTruth::canal_center_at_z(double z) const {
  const Vec3 a = axis();
  const double t = (z - canal_point.z()) / a.z();
  return canal_point + t * a;
}

Mask PhantomTruth::part_mask(std::size_t level, std::initializer_list<TissuePart> parts) const {
  if (level >= levels.size()) throw Error("phantom level index out of range");
  bool want[3] = {false, false, false};
  for (auto p : parts) want[static_cast<int>(p)] = true;
  Mask m(tissue.geometry());
  const int lo = 1 + 3 * static_cast<int>(level);
  for (std::size_t i = 0; i < tissue.size(); ++i) {
    const int code = tissue[i] - lo;
    m[i] = (code >= 0 && code < 3 && want[code]) ? 1 : 0;
  }
  return m;
}

Mask PhantomTruth::body_mask(std::size_t level) const {
  return part_mask(level, {TissuePart::trabecular, TissuePart::shell});
}
Mask PhantomTruth::trabecular_mask(std::size_t level) const {
  return part_mask(level, {TissuePart::trabecular});
}
Mask PhantomTruth::vertebra_mask(std::size_t level) const {
  return part_mask(level, {TissuePart::trabecular, TissuePart::shell, TissuePart::posterior});
}

json PhantomTruth::to_json() const {
  auto vec = [](const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); };
  json j;
  j["levels"] = json::array();
  for (const auto& l : levels) {
    j["levels"].push_back({{"name", l.name},
                           {"center_mm", vec(l.center)},
                           {"axis", vec(l.axis())},
                           {"nominal_bmd", l.nominal_bmd},
                           {"body_volume_mm3", l.body_volume_mm3},
                           {"trabecular_volume_mm3", l.trabecular_volume_mm3},
                           {"body_height_mm", l.body_height_mm},
                           {"canal_point_mm", vec(l.canal_point)},
                           {"pedicle_midpoints_mm",
                            {vec(l.pedicle_midpoints[0]), vec(l.pedicle_midpoints[1])}}});
  }
  j["disk_planes"] = json::array();
  for (const auto& p : disk_planes) {
    j["disk_planes"].push_back({{"normal", vec(p.normal)}, {"offset_mm", p.offset}});
  }
  return j;
}

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const std::vector<PlacedLevel> placed = place_levels(spec);

  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (const auto& p : placed) {
    lo = lo.cwiseMin(p.box_lo);
    hi = hi.cwiseMax(p.box_hi);
  }
  lo.array() -= spec.margin_mm;
  hi.array() += spec.margin_mm;
  Index3 dims;
  for (int a = 0; a < 3; ++a) {
    dims[a] = static_cast<int>(std::ceil((hi[a] - lo[a]) / spec.spacing[a])) + 1;
  }
  const Geometry geom(dims, spec.spacing, lo);

  Phantom out;
  out.volume = Volume(geom, static_cast<float>(spec.soft_tissue_value));
  out.truth.tissue = Grid<std::uint8_t>(geom, 0);

  for (std::size_t li = 0; li < placed.size(); ++li) {
    const PlacedLevel& p = placed[li];
    const VertebraSpec& s = *p.spec;
    const Index3 vlo = geom.nearest_voxel(p.box_lo).max(Index3::Zero());
    const Index3 vhi = geom.nearest_voxel(p.box_hi).min(dims - 1);
    const Eigen::Matrix3d rt = p.frame.transpose();
    for (int k = vlo.z(); k <= vhi.z(); ++k)
      for (int j = vlo.y(); j <= vhi.y(); ++j)
        for (int i = vlo.x(); i <= vhi.x(); ++i) {
          const Vec3 q = rt * (geom.center(i, j, k) - p.center);
          const int part = classify_local(s, q);
          if (part < 0) continue;
          const std::size_t idx = geom.linear(i, j, k);
          out.truth.tissue[idx] = static_cast<std::uint8_t>(1 + 3 * li + part);
          out.volume[idx] = static_cast<float>(
              part == static_cast<int>(TissuePart::trabecular) ? s.trabecular_bmd : s.cortical_bmd);
        }

    LevelTruth t;
    t.name = s.name;
    t.center = p.center;
    t.frame = p.frame;
    t.nominal_bmd = s.trabecular_bmd;
    const double a = s.body_radius_mm, b = s.body_depth_mm(), h = s.body_height_mm;
    const double c = s.cortical_thickness_mm;
    t.body_volume_mm3 = M_PI * a * b * h;
    t.trabecular_volume_mm3 = M_PI * (a - c) * (b - c) * (h - 2.0 * c);
    t.body_height_mm = h;
    t.canal_point = p.center + p.frame * Vec3(0.0, s.canal_offset_mm(), 0.0);
    const double uc = s.pedicle_lateral_mm();
    const double v_surface = b * std::sqrt(1.0 - (uc / a) * (uc / a));
    const double v_mid = 0.5 * (v_surface + s.canal_offset_mm());
    t.pedicle_midpoints = {p.center + p.frame * Vec3(-uc, v_mid, 0.0),
                           p.center + p.frame * Vec3(uc, v_mid, 0.0)};
    out.truth.levels.push_back(t);
  }

  for (std::size_t li = 0; li + 1 < placed.size(); ++li) {
    const PlacedLevel& a = placed[li];
    const PlacedLevel& b = placed[li + 1];
    const Vec3 top = a.center + 0.5 * a.spec->body_height_mm * a.frame.col(2);
    const Vec3 bottom = b.center - 0.5 * b.spec->body_height_mm * b.frame.col(2);
    const Vec3 n = (a.frame.col(2) + b.frame.col(2)).normalized();
    out.truth.disk_planes.push_back(Plane::through(0.5 * (top + bottom), n));
  }

  if (spec.noise_sigma > 0.0) out.volume = add_noise(out.volume, spec.noise_sigma, spec.rng_seed);
  return out;
}

Volume add_noise(const Volume& vol, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw Error("noise sigma must be non-negative");
  if (sigma == 0.0) return vol;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<float> data(vol.values().begin(), vol.values().end());
  for (auto& v : data) v = static_cast<float>(v + dist(rng));
  return Volume(vol.geometry(), std::move(data));
}

}  // namespace vqct
