#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "vqct/grid.hpp"

namespace vqct {

struct VoiStats {
  std::string name;
  std::size_t count = 0;
  double volume_mm3 = 0.0;
  double mean = 0.0;
  double sd = 0.0;  ///< sample (n − 1); 0 for a single voxel
};

void to_json(nlohmann::json& j, const VoiStats& s);

/// Mean and SD of the volume values under `voi`, with compensated sums.
VoiStats measure_voi(const Volume& vol, const Mask& voi, const std::string& name);

/// 100·|measured − nominal| / nominal.
double accuracy_error(double measured, double nominal);

/// Error-compensated running sum (Neumaier).
class CompensatedSum {
 public:
  void add(double x);
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double sample_mean(const std::vector<double>& v);
double sample_sd(const std::vector<double>& v);

struct PrecisionSummary {
  double cv_rms_percent = 0.0;
  double cv_sd = 0.0;  ///< sample SD of the per-subject %CVs
  std::vector<double> subject_cv;
};

void to_json(nlohmann::json& j, const PrecisionSummary& s);

/// values[subject][repeat][level]. Levels are averaged per repeat, the %CV
/// over repeats is taken per subject, then RMS-averaged over subjects.
PrecisionSummary precision_cv(const std::vector<std::vector<std::vector<double>>>& values);

/// Landmark precision: per subject and level, the RMS distance of the
/// repeated positions from their mean, as % of `scale[subject][level]`;
/// RMS-averaged over levels and subjects.
/// positions[subject][repeat][level].
PrecisionSummary landmark_cv(const std::vector<std::vector<std::vector<Vec3>>>& positions,
                             const std::vector<std::vector<double>>& scale);

}  // namespace vqct
