#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqct/phantom.hpp"
#include "vqct/pipeline.hpp"
#include "vqct/report.hpp"

namespace vqct {

/// Noise standard deviation of one unit of noise factor (mg/cm³).
inline constexpr double kSigma0 = 15.0;

/// Deterministic 64-bit stream derived from a master seed and a path of
/// indices (SplitMix64 mixing).
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

/// Seeds at the true body centers of a phantom.
SeedSet phantom_seeds(const PhantomTruth& truth);

struct AccuracyOptions {
  std::vector<double> noise_factors{0.0, 1.0, 2.0, 4.0};
  int repeats = 1;
  /// Reuse the same noise draw for every repeat instead of distinct ones.
  bool identical_noise = false;
};

struct AccuracyRow {
  std::string level;
  std::string quantity;  ///< BMD1 total, BMD2 cylinder, BMD3 pacman, Vol. body volume
  double nominal = 0.0;
  std::vector<double> measured;  ///< one per noise factor, mean over repeats
  std::vector<double> error_percent;
};

struct AccuracyTable {
  std::vector<double> noise_factors;
  std::vector<AccuracyRow> rows;
  std::vector<std::string> failures;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

AccuracyTable run_accuracy_study(const PhantomSpec& spec, const PipelineConfig& cfg,
                                 const AccuracyOptions& opt);

struct PrecisionOptions {
  int instances = 5;
  int analyses = 3;
  double jitter_mm = 2.0;
  double noise_factor = 1.0;
};

struct PrecisionStudy {
  /// Keys: bmd_total, bmd_cylinder, bmd_pacman, body_volume, M1..M4.
  std::map<std::string, PrecisionSummary> quantities;
  std::vector<std::string> failures;

  nlohmann::json to_json() const;
};

/// A uniformly distributed point in the ball of radius r around c.
Vec3 jitter_in_ball(const Vec3& c, double r, std::uint64_t seed);

PrecisionStudy run_precision_study(const PhantomSpec& spec, const PipelineConfig& cfg,
                                   const PrecisionOptions& opt);

}  // namespace vqct
