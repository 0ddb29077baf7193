#include "vqct/balloon.hpp"

#include <algorithm>
#include <cmath>

#include "vqct/presegment.hpp"

namespace vqct {

using nlohmann::json;

void BalloonParams::validate() const {
  for (double v : {mass, k_smg, k_img, dt, profile_length_mm, profile_step_mm, edge_floor,
                   max_edge_mm, convergence_mm}) {
    if (!(v > 0.0)) throw Error("balloon parameters must be positive");
  }
  if (max_iterations <= 0) throw Error("balloon max_iterations must be positive");
  if (noise_floor_factor < 0.0 || initial_radius_mm < 0.0 || subdivisions < 0) {
    throw Error("balloon parameters must be non-negative");
  }
  if (profile_length_mm < 2.0 * profile_step_mm) throw Error("balloon profile too short");
  if (dt > std::sqrt(mass / k_smg)) {
    throw Error("balloon time step violates the stability bound dt <= sqrt(m/k_smg)");
  }
}

void to_json(json& j, const BalloonParams& p) {
  j = json{{"mass", p.mass},
           {"k_smg", p.k_smg},
           {"k_img", p.k_img},
           {"dt", p.dt},
           {"profile_length_mm", p.profile_length_mm},
           {"profile_step_mm", p.profile_step_mm},
           {"edge_floor", p.edge_floor},
           {"noise_floor_factor", p.noise_floor_factor},
           {"max_edge_mm", p.max_edge_mm},
           {"convergence_mm", p.convergence_mm},
           {"max_iterations", p.max_iterations},
           {"subdivisions", p.subdivisions},
           {"initial_radius_mm", p.initial_radius_mm}};
}

void from_json(const json& j, BalloonParams& p) {
  const BalloonParams d;
  p.mass = j.value("mass", d.mass);
  p.k_smg = j.value("k_smg", d.k_smg);
  p.k_img = j.value("k_img", d.k_img);
  p.dt = j.value("dt", d.dt);
  p.profile_length_mm = j.value("profile_length_mm", d.profile_length_mm);
  p.profile_step_mm = j.value("profile_step_mm", d.profile_step_mm);
  p.edge_floor = j.value("edge_floor", d.edge_floor);
  p.noise_floor_factor = j.value("noise_floor_factor", d.noise_floor_factor);
  p.max_edge_mm = j.value("max_edge_mm", d.max_edge_mm);
  p.convergence_mm = j.value("convergence_mm", d.convergence_mm);
  p.max_iterations = j.value("max_iterations", d.max_iterations);
  p.subdivisions = j.value("subdivisions", d.subdivisions);
  p.initial_radius_mm = j.value("initial_radius_mm", d.initial_radius_mm);
}

BalloonMesh init_balloon(const Vec3& center, double radius, int subdivisions) {
  return make_icosphere(center, radius, subdivisions);
}

std::vector<double> sample_profile(const Volume& vol, const Vec3& vertex, const Vec3& normal,
                                   const BalloonParams& p) {
  const int n = static_cast<int>(std::lround(p.profile_length_mm / p.profile_step_mm)) + 1;
  const double t0 = -0.5 * p.profile_length_mm;
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[i] = sample_trilinear(vol, vertex + (t0 + i * p.profile_step_mm) * normal);
  return out;
}

namespace {

double median(std::vector<double> v) {
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  double hi = v[m];
  if (v.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m)));
}

// Sub-sample offset of an extremum at index i of g (parabola through 3 points).
double parabolic(const std::vector<double>& g, std::size_t i) {
  if (i == 0 || i + 1 >= g.size()) return 0.0;
  const double den = g[i - 1] - 2.0 * g[i] + g[i + 1];
  if (den == 0.0) return 0.0;
  return std::clamp(0.5 * (g[i - 1] - g[i + 1]) / den, -0.5, 0.5);
}

}  // namespace

std::optional<double> find_edge_target(std::span<const double> samples, const BalloonParams& p) {
  const std::size_t n = samples.size();
  if (n < 3) throw Error("edge search needs at least 3 profile samples");
  std::vector<double> sm(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double l = samples[i == 0 ? 0 : i - 1], r = samples[i + 1 < n ? i + 1 : n - 1];
    sm[i] = 0.25 * (l + 2.0 * samples[i] + r);
  }
  const double h = p.profile_step_mm;
  std::vector<double> g(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) g[i] = (sm[i + 1] - sm[i]) / h;

  double floor = p.edge_floor;
  if (p.noise_floor_factor > 0.0) {
    const double med = median(g);
    std::vector<double> dev(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) dev[i] = std::abs(g[i] - med);
    floor = std::max(floor, p.noise_floor_factor * 1.4826 * median(dev));
  }

  std::size_t rise = 0, fall = 0;
  for (std::size_t i = 1; i < g.size(); ++i) {
    if (g[i] > g[rise]) rise = i;
    if (g[i] < g[fall]) fall = i;
  }
  const bool has_rise = g[rise] >= floor;
  const bool has_fall = -g[fall] >= floor;
  const double t0 = -0.5 * p.profile_length_mm;
  auto where = [&](std::size_t i) { return t0 + (i + 0.5 + parabolic(g, i)) * h; };
  if (has_fall && (!has_rise || fall > rise)) return where(fall);
  if (has_rise) return where(rise);
  return std::nullopt;
}

Vec3 smoothing_force(const BalloonMesh& mesh, int vertex, double k_smg) {
  Vec3 f = Vec3::Zero();
  const Vec3& pi = mesh.positions[vertex];
  for (int j : mesh.adjacency[vertex]) f += mesh.positions[j] - pi;
  return k_smg * f;
}

double spring_energy(const BalloonMesh& mesh, double k_smg) {
  double e = 0.0;
  for (std::size_t i = 0; i < mesh.adjacency.size(); ++i)
    for (int j : mesh.adjacency[i])
      if (static_cast<std::size_t>(j) > i) e += (mesh.positions[j] - mesh.positions[i]).squaredNorm();
  return 0.5 * k_smg * e;
}

double total_energy(const BalloonMesh& mesh, const BalloonParams& p) {
  double e = spring_energy(mesh, p.k_smg);
  for (std::size_t i = 0; i < mesh.positions.size(); ++i) {
    if (mesh.targets[i]) e += 0.5 * p.k_img * (*mesh.targets[i] - mesh.positions[i]).squaredNorm();
  }
  return e;
}

StepInfo step_dynamics(BalloonMesh& mesh, const BalloonParams& p) {
  const std::size_t n = mesh.positions.size();
  if (mesh.adjacency.size() != n) mesh.rebuild_adjacency();
  StepInfo info;
  info.energy_before = total_energy(mesh, p);
  std::vector<Vec3> force(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 f = smoothing_force(mesh, static_cast<int>(i), p.k_smg);
    if (mesh.targets[i]) f += p.k_img * (*mesh.targets[i] - mesh.positions[i]);
    if (!f.allFinite()) throw Error("non-finite balloon force");
    force[i] = f;
  }
  // Position Verlet from rest: half drift (zero), kick, half drift.
  const double c = 0.5 * p.dt * p.dt / p.mass;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 dp = c * force[i];
    mesh.positions[i] += dp;
    mesh.velocities[i] = dp;
    sum += dp.norm();
  }
  info.mean_step = n ? sum / static_cast<double>(n) : 0.0;
  info.energy_after = total_energy(mesh, p);
  return info;
}

json BalloonResult::summary() const {
  return {{"vertices", mesh.vertex_count()},
          {"faces", mesh.face_count()},
          {"converged", converged},
          {"iterations", iterations}};
}

BalloonResult run_balloon(const Volume& vol, const SearchRegion& region, const Vec3& seed,
                          const BalloonParams& p) {
  p.validate();
  if (!region.contains(seed)) throw Error("balloon seed lies outside its search region");
  double radius = p.initial_radius_mm;
  if (radius <= 0.0) {
    const Vec3 q = seed - region.axis_point();
    const double h = q.dot(region.axis());
    double room = std::min(region.radius() - std::sqrt(std::max(0.0, q.squaredNorm() - h * h)),
                           region.half_length() - std::abs(h));
    for (const auto& hs : region.planes()) room = std::min(room, std::abs(hs.plane.signed_distance(seed)));
    radius = 0.5 * room;
  }
  if (!(radius > 0.0)) throw Error("balloon seed touches the region boundary");

  BalloonResult res;
  res.mesh = init_balloon(seed, radius, p.subdivisions);
  BalloonMesh& mesh = res.mesh;
  const int ns = static_cast<int>(std::lround(p.profile_length_mm / p.profile_step_mm)) + 1;
  const double t0 = -0.5 * p.profile_length_mm;
  for (int it = 1; it <= p.max_iterations; ++it) {
    const std::vector<Vec3> normals = mesh.vertex_normals();
    for (std::size_t i = 0; i < mesh.positions.size(); ++i) {
      const Vec3& x = mesh.positions[i];
      std::vector<double> prof = sample_profile(vol, x, normals[i], p);
      // Cut the profile where it leaves the region: edges beyond the
      // constraint box must not attract the surface.
      std::size_t valid = prof.size();
      for (int s = ns / 2; s < ns; ++s) {
        if (!region.contains(x + (t0 + s * p.profile_step_mm) * normals[i])) {
          valid = static_cast<std::size_t>(s);
          break;
        }
      }
      mesh.targets[i].reset();
      if (valid < 3) continue;
      const auto t = find_edge_target(std::span<const double>(prof.data(), valid), p);
      if (!t) continue;
      const Vec3 target = x + *t * normals[i];
      if (region.contains(target)) mesh.targets[i] = target;
    }
    const StepInfo info = step_dynamics(mesh, p);
    if (info.energy_after > info.energy_before + 1e-9 * std::max(1.0, info.energy_before)) {
      ++res.descent_violations;
    }
    for (const auto& x : mesh.positions) {
      if (region.outside_distance(x) > 0.5 * p.profile_length_mm) {
        throw Error("balloon leaked out of its search region");
      }
    }
    refine_mesh(mesh, p.max_edge_mm);
    res.iterations = it;
    res.last_mean_step = info.mean_step;
    if (info.mean_step < p.convergence_mm) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace vqct
