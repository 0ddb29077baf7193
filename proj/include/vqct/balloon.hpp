#pragma once

#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "vqct/mesh.hpp"

namespace vqct {

class SearchRegion;

/// Gains and numerics of the reduced equation of motion m·p̈ = f_smg + f_img.
struct BalloonParams {
  double mass = 1.0;
  double k_smg = 0.5;
  double k_img = 0.3;
  double dt = 0.5;
  double profile_length_mm = 24.0;  ///< symmetric about the surface
  double profile_step_mm = 0.25;
  double edge_floor = 150.0;  ///< minimum |derivative|, mg/cm³ per mm
  /// The floor is raised to this multiple of the profile's robust derivative
  /// noise, so noise peaks are not mistaken for edges.
  double noise_floor_factor = 4.0;
  double max_edge_mm = 1.5;
  double convergence_mm = 0.005;  ///< mean |Δp| per step
  int max_iterations = 400;
  int subdivisions = 3;
  double initial_radius_mm = 0.0;  ///< 0: half the distance to the region boundary

  /// Throws unless all positive and dt ≤ sqrt(m / k_smg).
  void validate() const;
};

void to_json(nlohmann::json& j, const BalloonParams& p);
void from_json(const nlohmann::json& j, BalloonParams& p);

BalloonMesh init_balloon(const Vec3& center, double radius, int subdivisions);

/// Samples at vertex + t·normal, t = −L/2 .. L/2.
std::vector<double> sample_profile(const Volume& vol, const Vec3& vertex, const Vec3& normal,
                                   const BalloonParams& p);

/// Offset t* (mm, relative to the profile center) of the periosteal edge:
/// the strongest falling edge if it lies outward of the strongest rising
/// edge, otherwise the rising edge. Parabolic sub-sample refinement.
std::optional<double> find_edge_target(std::span<const double> samples, const BalloonParams& p);

Vec3 smoothing_force(const BalloonMesh& mesh, int vertex, double k_smg);
double spring_energy(const BalloonMesh& mesh, double k_smg);
/// Spring energy plus the image wells k_img/2·|target − p|² of the targets
/// currently stored on the mesh.
double total_energy(const BalloonMesh& mesh, const BalloonParams& p);

struct StepInfo {
  double mean_step = 0.0;  ///< mean |Δp| (mm)
  double energy_before = 0.0;
  double energy_after = 0.0;  ///< same targets
};

/// One explicit position-Verlet step started from rest, using the targets
/// stored on the mesh. Forces are read from the old state before any vertex
/// moves.
StepInfo step_dynamics(BalloonMesh& mesh, const BalloonParams& p);

struct BalloonResult {
  BalloonMesh mesh;
  bool converged = false;
  int iterations = 0;
  double last_mean_step = 0.0;
  int descent_violations = 0;  ///< steps whose total energy rose

  nlohmann::json summary() const;
};

BalloonResult run_balloon(const Volume& vol, const SearchRegion& region, const Vec3& seed,
                          const BalloonParams& p);

}  // namespace vqct
