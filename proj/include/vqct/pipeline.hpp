#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqct/anatomy.hpp"
#include "vqct/balloon.hpp"
#include "vqct/classify.hpp"
#include "vqct/presegment.hpp"
#include "vqct/report.hpp"

namespace vqct {

struct DumpFlags {
  bool masks = false;
  bool meshes = false;
  bool fits = false;
};

struct PipelineConfig {
  std::filesystem::path volume_path;
  std::filesystem::path seeds_path;
  std::filesystem::path output_dir;

  CanalOptions canal;
  DiskPlaneOptions disk;
  RegionOptions region;
  BalloonParams balloon;
  double balloon_init_fraction = 0.75;  ///< of the free room around the seed
  EmOptions em;
  double band_delta_minus = -1.0;  ///< negative: default half the smaller σ
  double band_delta_plus = -1.0;
  int neighborhood_radius = 1;
  double closing_radius_mm = 2.0;
  double peel_depth_mm = 2.0;
  double crop_padding_mm = 3.0;
  VoiSpec cylinder{VoiKind::cylinder};
  VoiSpec pacman{VoiKind::pacman};
  DumpFlags dump;
  std::uint64_t master_seed = 20050101;
  int threads = 1;  ///< concurrent levels; output does not depend on it

  void validate() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);
PipelineConfig load_config(const std::filesystem::path& path);

/// Per-level artifacts. Masks live on a crop of the input lattice whose voxel
/// (0,0,0) is `crop_lo` of the full volume.
struct LevelResult {
  std::string name;
  std::optional<std::string> error;
  Index3 crop_lo{0, 0, 0};
  std::map<std::string, Mask> masks;  ///< vertebra, body, process, cut, trabecular, cylinder, pacman
  std::optional<BalloonMesh> mesh;
  nlohmann::json fit;
  std::optional<VcsResult> vcs;
  std::map<std::string, VoiStats> vois;  ///< total_trabecular, cylinder, pacman
  double body_volume_mm3 = 0.0;
  double body_height_mm = 0.0;  ///< body extent along the VCS z axis
  std::vector<std::string> warnings;

  bool ok() const { return !error; }
};

struct PipelineResult {
  std::vector<LevelResult> levels;
  std::optional<CanalLine> canal;
  std::vector<Plane> planes;
  nlohmann::json report;

  bool all_ok() const;
  const LevelResult* level(const std::string& name) const;
  /// Union of the named per-level mask on the full lattice.
  Mask assemble_mask(const std::string& name, const Geometry& full) const;
};

/// stage name, percent complete. Called from worker threads under a lock.
using ProgressFn = std::function<void(const std::string&, double)>;

/// Runs the whole segmentation for every seed. Level failures are recorded
/// in the result and the report; they never abort the other levels.
PipelineResult run_pipeline(const Volume& vol, const SeedSet& seeds, const PipelineConfig& cfg,
                            const ProgressFn& progress = {});

/// Writes report.json and the flagged artifacts into cfg.output_dir.
void write_outputs(const PipelineResult& res, const Geometry& full, const PipelineConfig& cfg);

/// Loads inputs from the config paths, runs, writes outputs. Returns the
/// process exit status: 0 iff every level succeeded.
int run_from_config(const PipelineConfig& cfg, const ProgressFn& progress = {});

}  // namespace vqct
