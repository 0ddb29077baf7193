#include "vqct/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include "vqct/mesh.hpp"
#include "vqct/morphology.hpp"
#include "vqct/volume_io.hpp"

namespace vqct {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json canal_json(const CanalOptions& o) {
  return {{"bone_threshold", o.bone_threshold},   {"window_lateral_mm", o.window_lateral_mm},
          {"window_posterior_mm", o.window_posterior_mm}, {"min_radius_mm", o.min_radius_mm},
          {"max_step_mm", o.max_step_mm},         {"extend_mm", o.extend_mm},
          {"posterior", vec_json(o.posterior)}};
}

void canal_from(const json& j, CanalOptions& o) {
  o.bone_threshold = j.value("bone_threshold", o.bone_threshold);
  o.window_lateral_mm = j.value("window_lateral_mm", o.window_lateral_mm);
  o.window_posterior_mm = j.value("window_posterior_mm", o.window_posterior_mm);
  o.min_radius_mm = j.value("min_radius_mm", o.min_radius_mm);
  o.max_step_mm = j.value("max_step_mm", o.max_step_mm);
  o.extend_mm = j.value("extend_mm", o.extend_mm);
  if (j.contains("posterior")) o.posterior = vec_from(j["posterior"]);
}

json disk_json(const DiskPlaneOptions& o) {
  return {{"max_tilt_deg", o.max_tilt_deg},
          {"tilt_step_deg", o.tilt_step_deg},
          {"offset_step_mm", o.offset_step_mm},
          {"disk_radius_fraction", o.disk_radius_fraction},
          {"layer_sigma_mm", o.layer_sigma_mm},
          {"layers_mm", o.layers_mm},
          {"default_half_height_mm", o.default_half_height_mm},
          {"bone_threshold", o.bone_threshold}};
}

void disk_from(const json& j, DiskPlaneOptions& o) {
  o.max_tilt_deg = j.value("max_tilt_deg", o.max_tilt_deg);
  o.tilt_step_deg = j.value("tilt_step_deg", o.tilt_step_deg);
  o.offset_step_mm = j.value("offset_step_mm", o.offset_step_mm);
  o.disk_radius_fraction = j.value("disk_radius_fraction", o.disk_radius_fraction);
  o.layer_sigma_mm = j.value("layer_sigma_mm", o.layer_sigma_mm);
  o.layers_mm = j.value("layers_mm", o.layers_mm);
  o.default_half_height_mm = j.value("default_half_height_mm", o.default_half_height_mm);
  o.bone_threshold = j.value("bone_threshold", o.bone_threshold);
}

json em_json(const EmOptions& o) {
  return {{"tolerance", o.tolerance},
          {"max_iterations", o.max_iterations},
          {"sigma_floor_fraction", o.sigma_floor_fraction},
          {"histogram_bins", o.histogram_bins}};
}

void em_from(const json& j, EmOptions& o) {
  o.tolerance = j.value("tolerance", o.tolerance);
  o.max_iterations = j.value("max_iterations", o.max_iterations);
  o.sigma_floor_fraction = j.value("sigma_floor_fraction", o.sigma_floor_fraction);
  o.histogram_bins = j.value("histogram_bins", o.histogram_bins);
}

json voi_json(const VoiSpec& v) {
  return {{"radius_fraction", v.radius_fraction}, {"height_fraction", v.height_fraction}};
}

void voi_from(const json& j, VoiSpec& v) {
  v.radius_fraction = j.value("radius_fraction", v.radius_fraction);
  v.height_fraction = j.value("height_fraction", v.height_fraction);
}

// The parameters that influence results; paths, dump flags and thread count
// are excluded so the report does not depend on them.
json parameters_json(const PipelineConfig& c) {
  json b;
  to_json(b, c.balloon);
  return {{"canal", canal_json(c.canal)},
          {"disk_planes", disk_json(c.disk)},
          {"region", {{"margin_mm", c.region.margin_mm}}},
          {"balloon", b},
          {"balloon_init_fraction", c.balloon_init_fraction},
          {"em", em_json(c.em)},
          {"band", {{"delta_minus", c.band_delta_minus}, {"delta_plus", c.band_delta_plus}}},
          {"neighborhood_radius", c.neighborhood_radius},
          {"closing_radius_mm", c.closing_radius_mm},
          {"peel_depth_mm", c.peel_depth_mm},
          {"crop_padding_mm", c.crop_padding_mm},
          {"cylinder", voi_json(c.cylinder)},
          {"pacman", voi_json(c.pacman)},
          {"master_seed", c.master_seed}};
}

}  // namespace

void PipelineConfig::validate() const {
  balloon.validate();
  cylinder.validate();
  pacman.validate();
  if (!(balloon_init_fraction > 0.0 && balloon_init_fraction < 1.0)) {
    throw Error("balloon_init_fraction must lie in (0, 1)");
  }
  if (neighborhood_radius < 0) throw Error("neighborhood_radius must be non-negative");
  if (!(closing_radius_mm >= 0.0) || !(peel_depth_mm >= 0.0) || !(crop_padding_mm >= 0.0)) {
    throw Error("closing radius, peel depth and crop padding must be non-negative");
  }
  if (!(region.margin_mm >= 0.0)) throw Error("region margin must be non-negative");
  if (!(canal.min_radius_mm > 0.0) || !(canal.window_lateral_mm > 0.0) ||
      !(canal.window_posterior_mm > 0.0) || !(canal.max_step_mm > 0.0)) {
    throw Error("canal window parameters must be positive");
  }
  if (!(disk.max_tilt_deg >= 0.0 && disk.max_tilt_deg < 60.0) || !(disk.tilt_step_deg > 0.0) ||
      !(disk.offset_step_mm > 0.0)) {
    throw Error("disk plane search parameters out of range");
  }
  if (em.max_iterations <= 0 || !(em.tolerance > 0.0)) throw Error("EM options out of range");
  if (threads < 1) throw Error("threads must be at least 1");
}

void to_json(json& j, const PipelineConfig& c) {
  j = parameters_json(c);
  j["volume"] = c.volume_path.string();
  j["seeds"] = c.seeds_path.string();
  j["output_dir"] = c.output_dir.string();
  j["dump"] = {{"masks", c.dump.masks}, {"meshes", c.dump.meshes}, {"fits", c.dump.fits}};
  j["threads"] = c.threads;
}

void from_json(const json& j, PipelineConfig& c) {
  if (!j.is_object()) throw Error("pipeline config must be a JSON object");
  if (j.contains("volume")) c.volume_path = j["volume"].get<std::string>();
  if (j.contains("seeds")) c.seeds_path = j["seeds"].get<std::string>();
  if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
  if (j.contains("canal")) canal_from(j["canal"], c.canal);
  if (j.contains("disk_planes")) disk_from(j["disk_planes"], c.disk);
  if (j.contains("region")) c.region.margin_mm = j["region"].value("margin_mm", c.region.margin_mm);
  if (j.contains("balloon")) {
    json merged;
    to_json(merged, c.balloon);
    merged.update(j["balloon"]);
    from_json(merged, c.balloon);
  }
  c.balloon_init_fraction = j.value("balloon_init_fraction", c.balloon_init_fraction);
  if (j.contains("em")) em_from(j["em"], c.em);
  if (j.contains("band")) {
    c.band_delta_minus = j["band"].value("delta_minus", c.band_delta_minus);
    c.band_delta_plus = j["band"].value("delta_plus", c.band_delta_plus);
  }
  c.neighborhood_radius = j.value("neighborhood_radius", c.neighborhood_radius);
  c.closing_radius_mm = j.value("closing_radius_mm", c.closing_radius_mm);
  c.peel_depth_mm = j.value("peel_depth_mm", c.peel_depth_mm);
  c.crop_padding_mm = j.value("crop_padding_mm", c.crop_padding_mm);
  if (j.contains("cylinder")) voi_from(j["cylinder"], c.cylinder);
  if (j.contains("pacman")) voi_from(j["pacman"], c.pacman);
  if (j.contains("dump")) {
    c.dump.masks = j["dump"].value("masks", c.dump.masks);
    c.dump.meshes = j["dump"].value("meshes", c.dump.meshes);
    c.dump.fits = j["dump"].value("fits", c.dump.fits);
  }
  c.master_seed = j.value("master_seed", c.master_seed);
  c.threads = j.value("threads", c.threads);
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  PipelineConfig c;
  try {
    from_json(json::parse(in), c);
  } catch (const json::exception& e) {
    throw Error("malformed config " + path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

bool PipelineResult::all_ok() const {
  return std::all_of(levels.begin(), levels.end(), [](const LevelResult& l) { return l.ok(); });
}

const LevelResult* PipelineResult::level(const std::string& name) const {
  for (const auto& l : levels)
    if (l.name == name) return &l;
  return nullptr;
}

Mask PipelineResult::assemble_mask(const std::string& name, const Geometry& full) const {
  Mask out(full, 0);
  for (const auto& l : levels) {
    const auto it = l.masks.find(name);
    if (it == l.masks.end()) continue;
    const Mask& part = it->second;
    const Geometry& pg = part.geometry();
    for (int k = 0; k < pg.dims.z(); ++k)
      for (int j = 0; j < pg.dims.y(); ++j)
        for (int i = 0; i < pg.dims.x(); ++i) {
          if (!part(i, j, k)) continue;
          const Index3 v = l.crop_lo + Index3(i, j, k);
          if (full.in_bounds(v.x(), v.y(), v.z())) out(v.x(), v.y(), v.z()) = 1;
        }
  }
  return out;
}

namespace {

constexpr int kLevelStages = 7;

class Progress {
 public:
  Progress(const ProgressFn& fn, int total) : fn_(fn), total_(std::max(total, 1)) {}
  void step(const std::string& stage) {
    if (!fn_) return;
    std::lock_guard<std::mutex> lock(mu_);
    ++done_;
    fn_(stage, std::min(100.0, 100.0 * done_ / total_));
  }

 private:
  const ProgressFn& fn_;
  int total_;
  int done_ = 0;
  std::mutex mu_;
};

// Everything from the search region to the trabecular peel, on a crop.
void segment_level(const Volume& vol, const Seed& seed, const CanalLine& canal, const Plane& lower,
                   const Plane& upper, const PipelineConfig& cfg, LevelResult& out,
                   Progress& progress) {
  const Geometry& g = vol.geometry();
  const SearchRegion region = build_search_region(seed.center, canal, lower, upper, cfg.region);
  Index3 lo, hi;
  if (!region.voxel_bounds(g, lo, hi)) throw Error("search region lies outside the volume");
  const Eigen::Array3i pad = (cfg.crop_padding_mm / g.spacing).ceil().cast<int>();
  lo = (lo - pad).max(Index3::Zero());
  hi = (hi + pad).min(g.dims - 1);
  const Volume sub = crop(vol, lo, hi);
  out.crop_lo = lo;
  const Geometry& sg = sub.geometry();
  const Mask region_mask = region.mask(sg);
  progress.step(out.name + ": search region");

  const GaussianPair fit = fit_two_gaussians(sub, region, cfg.em);
  const ThresholdBand band = make_band(fit, cfg.band_delta_minus, cfg.band_delta_plus);
  out.fit = fit_report(fit, band);
  progress.step(out.name + ": classification");

  BalloonParams bp = cfg.balloon;
  if (bp.initial_radius_mm <= 0.0) {
    Eigen::Vector2d half;
    estimate_body_radius(vol, seed.center, cfg.canal.bone_threshold, 35.0, &half);
    const double room = std::min({half.minCoeff(), std::abs(lower.signed_distance(seed.center)),
                                  std::abs(upper.signed_distance(seed.center))});
    bp.initial_radius_mm = cfg.balloon_init_fraction * room;
  }
  const BalloonResult balloon = run_balloon(sub, region, seed.center, bp);
  out.fit["balloon"] = balloon.summary();
  if (!balloon.converged) out.warnings.push_back("balloon stopped at the iteration limit");
  out.mesh = balloon.mesh;
  progress.step(out.name + ": balloon");

  const MeshRaster raster = voxelize_closed_mesh(balloon.mesh, sg);
  std::vector<std::size_t> grow_seeds;
  for (std::size_t i = 0; i < raster.surface.size(); ++i) {
    if (!raster.surface[i] || !region_mask[i]) continue;
    const Index3 v = sg.unlinear(i);
    if (classify_voxel(sub, v, band, cfg.neighborhood_radius) == TissueClass::bone) {
      grow_seeds.push_back(i);
    }
  }
  if (grow_seeds.empty()) throw Error("balloon surface touches no bone voxels");
  Mask vertebra = volume_grow(sub, grow_seeds, band, region, cfg.neighborhood_radius);
  vertebra = mask_or(vertebra, mask_and(raster.interior, region_mask));
  vertebra = largest_component(close_and_fill(vertebra, cfg.closing_radius_mm), 6);
  progress.step(out.name + ": region growing");

  DissectionResult cut = pedicle_cut(vertebra);
  for (auto& w : cut.warnings) out.warnings.push_back(w);
  out.fit["pedicle_split_mm"] = cut.split_threshold_mm;
  progress.step(out.name + ": pedicle cut");

  Mask trab = trabecular_peel(cut.body, sub, band, cfg.peel_depth_mm);
  progress.step(out.name + ": trabecular peel");

  out.body_volume_mm3 = static_cast<double>(count(cut.body)) * sg.voxel_volume();
  out.vois["total_trabecular"] = measure_voi(sub, trab, "total_trabecular");
  out.masks["vertebra"] = std::move(vertebra);
  out.masks["body"] = std::move(cut.body);
  out.masks["process"] = std::move(cut.process);
  out.masks["cut"] = std::move(cut.cut);
  out.masks["trabecular"] = std::move(trab);
  out.fit["cut_centers"] = json::array();
  for (const auto& c : cut.cut_centers) out.fit["cut_centers"].push_back(vec_json(c));
  // M3/M4 stay in the fit record until the VCS stage reads them back.
  out.fit["region"] = region.to_json();
}

double extent_along(const Mask& m, const Vec3& origin, const Vec3& axis) {
  const Geometry& g = m.geometry();
  double mn = 1e300, mx = -1e300;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i]) continue;
    const double t = (g.center(i) - origin).dot(axis);
    mn = std::min(mn, t);
    mx = std::max(mx, t);
  }
  return mx >= mn ? mx - mn + g.spacing.minCoeff() : 0.0;
}

// VCS, VOIs and their measurement, after all COVs are known.
void finish_level(const Volume& vol, const CanalLine& canal, const ColumnSpline& spline,
                  const Vec3& m1, const PipelineConfig& cfg, LevelResult& out) {
  std::optional<Vec3> m3, m4;
  const json& centers = out.fit["cut_centers"];
  if (centers.size() >= 2) {
    m3 = vec_from(centers[0]);
    m4 = vec_from(centers[1]);
  }
  out.vcs = compute_vcs(m1, canal, spline, m3, m4);
  const Vcs& vcs = out.vcs->vcs;
  const Mask& body = out.masks.at("body");
  const Mask& trab = out.masks.at("trabecular");
  const Volume sub = crop(vol, out.crop_lo, out.crop_lo + body.dims() - 1);
  out.body_height_mm = extent_along(body, vcs.origin, vcs.z);

  Mask cyl = mask_and(make_voi(vcs, cfg.cylinder, body), trab);
  out.vois["cylinder"] = measure_voi(sub, cyl, "cylinder");
  out.masks["cylinder"] = std::move(cyl);
  if (!m3) throw Error("pacman VOI needs two pedicle dissection areas, found " +
                       std::to_string(centers.size()));
  Mask pac = mask_and(make_voi(vcs, cfg.pacman, body, m3, m4), trab);
  out.vois["pacman"] = measure_voi(sub, pac, "pacman");
  out.masks["pacman"] = std::move(pac);
}

json level_json(const LevelResult& l, const Seed& seed) {
  json j;
  j["seed_mm"] = vec_json(seed.center);
  if (l.error) {
    j["error"] = *l.error;
    return j;
  }
  const Vcs& v = l.vcs->vcs;
  j["landmarks"] = landmarks_json(*l.vcs);
  j["vcs_axes"] = {{"origin", vec_json(v.origin)}, {"x", vec_json(v.x)}, {"y", vec_json(v.y)},
                   {"z", vec_json(v.z)}};
  j["vois"] = json::object();
  for (const auto& [name, s] : l.vois) j["vois"][name] = s;
  j["body_volume_mm3"] = l.body_volume_mm3;
  j["body_height_mm"] = l.body_height_mm;
  json fit = l.fit;
  fit.erase("region");
  fit.erase("cut_centers");
  j["segmentation"] = fit;
  j["warnings"] = l.warnings;
  return j;
}

}  // namespace

PipelineResult run_pipeline(const Volume& vol, const SeedSet& seeds_in, const PipelineConfig& cfg,
                            const ProgressFn& progress_fn) {
  cfg.validate();
  seeds_in.validate();
  const Geometry& g = vol.geometry();
  const std::size_t n = seeds_in.levels.size();
  PipelineResult res;
  res.levels.resize(n);
  Progress progress(progress_fn, static_cast<int>(n) * kLevelStages + 2);

  // Seeds outside the lattice fail on their own; the rest carry on.
  SeedSet usable;
  std::vector<std::size_t> usable_index;
  for (std::size_t i = 0; i < n; ++i) {
    res.levels[i].name = seeds_in.levels[i].name;
    if (!g.contains_world(seeds_in.levels[i].center)) {
      res.levels[i].error = "seed lies outside the volume";
      continue;
    }
    usable.levels.push_back(seeds_in.levels[i]);
    usable_index.push_back(i);
  }

  try {
    if (usable.levels.empty()) throw Error("no seed inside the volume");
    res.canal = detect_canal(vol, usable, cfg.canal);
    res.planes = fit_disk_planes(vol, usable, cfg.disk);
  } catch (const std::exception& e) {
    for (std::size_t i : usable_index) res.levels[i].error = std::string("constraints: ") + e.what();
    usable_index.clear();
  }
  progress.step("constraints");

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t u; (u = next.fetch_add(1)) < usable_index.size();) {
      LevelResult& out = res.levels[usable_index[u]];
      try {
        segment_level(vol, usable.levels[u], *res.canal, res.planes[u], res.planes[u + 1], cfg, out,
                      progress);
      } catch (const std::exception& e) {
        out.error = e.what();
        out.masks.clear();
      }
    }
  };
  const int nthreads = std::min<int>(cfg.threads, static_cast<int>(std::max<std::size_t>(usable_index.size(), 1)));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Barrier: the column spline needs every body's centre of volume.
  std::vector<std::size_t> done;
  std::vector<Vec3> covs;
  for (std::size_t i : usable_index) {
    if (!res.levels[i].ok()) continue;
    const LevelResult& l = res.levels[i];
    const Mask& body = l.masks.at("body");
    done.push_back(i);
    covs.push_back(centre_of_volume(body));
  }
  if (!done.empty()) {
    const ColumnSpline spline(covs);
    for (std::size_t d = 0; d < done.size(); ++d) {
      LevelResult& l = res.levels[done[d]];
      try {
        finish_level(vol, *res.canal, spline, covs[d], cfg, l);
      } catch (const std::exception& e) {
        l.error = std::string("anatomy: ") + e.what();
      }
    }
  }
  progress.step("report");

  json levels = json::object();
  std::size_t failed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    levels[res.levels[i].name] = level_json(res.levels[i], seeds_in.levels[i]);
    if (!res.levels[i].ok()) ++failed;
  }
  res.report = {{"levels", levels},
                {"metadata",
                 {{"sd_convention", "sample (n-1)"},
                  {"bmd_unit", "mg/cm3"},
                  {"levels_total", n},
                  {"levels_failed", failed},
                  {"volume",
                   {{"dims", {g.dims.x(), g.dims.y(), g.dims.z()}},
                    {"spacing_mm", {g.spacing.x(), g.spacing.y(), g.spacing.z()}},
                    {"origin_mm", vec_json(g.origin)}}},
                  {"parameters", parameters_json(cfg)}}}};
  return res;
}

void write_outputs(const PipelineResult& res, const Geometry& full, const PipelineConfig& cfg) {
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw Error("cannot write " + (dir / "report.json").string());
    out << res.report.dump(2) << '\n';
  }
  for (const auto& l : res.levels) {
    if (!l.ok()) continue;
    if (cfg.dump.masks) {
      for (const auto& [name, m] : l.masks) {
        Mask whole(full, 0);
        paste(whole, m, l.crop_lo);
        write_mask(dir / (l.name + "_" + name + ".vqh"), whole);
      }
    }
    if (cfg.dump.meshes && l.mesh) write_triangle_soup(*l.mesh, (dir / (l.name + "_balloon.tri")).string());
    if (cfg.dump.fits) {
      std::ofstream out(dir / (l.name + "_fit.json"));
      out << l.fit.dump(2) << '\n';
    }
  }
  if (cfg.dump.fits && res.canal) {
    std::ofstream out(dir / "canal.json");
    json planes = json::array();
    for (const auto& p : res.planes) planes.push_back({{"normal", vec_json(p.normal)}, {"offset", p.offset}});
    out << json{{"canal", res.canal->to_json()}, {"disk_planes", planes}}.dump(2) << '\n';
  }
}

int run_from_config(const PipelineConfig& cfg, const ProgressFn& progress) {
  if (!fs::exists(cfg.volume_path)) throw Error("volume not found: " + cfg.volume_path.string());
  if (!fs::exists(cfg.seeds_path)) throw Error("seeds not found: " + cfg.seeds_path.string());
  if (cfg.output_dir.empty()) throw Error("no output directory given");
  const Volume vol = load_volume(cfg.volume_path);
  const SeedSet seeds = SeedSet::load(cfg.seeds_path.string());
  const PipelineResult res = run_pipeline(vol, seeds, cfg, progress);
  write_outputs(res, vol.geometry(), cfg);
  return res.all_ok() ? 0 : 1;
}

}  // namespace vqct
