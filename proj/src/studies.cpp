#include "vqct/studies.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

namespace vqct {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t s = mix(master);
  for (std::uint64_t p : path) s = mix(s ^ mix(p + 1));
  return s;
}

SeedSet phantom_seeds(const PhantomTruth& truth) {
  SeedSet s;
  for (const auto& l : truth.levels) s.levels.push_back({l.name, l.center});
  return s;
}

Vec3 jitter_in_ball(const Vec3& c, double r, std::uint64_t seed) {
  if (!(r >= 0.0)) throw Error("jitter radius must be non-negative");
  if (r == 0.0) return c;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (;;) {
    const Vec3 d(u(rng), u(rng), u(rng));
    if (d.squaredNorm() <= 1.0) return c + r * d;
  }
}

namespace {

const char* const kQuantities[] = {"BMD1", "BMD2", "BMD3", "Vol."};
const char* const kVois[] = {"total_trabecular", "cylinder", "pacman"};

double quantity_of(const LevelResult& l, int q) {
  return q < 3 ? l.vois.at(kVois[q]).mean : l.body_volume_mm3;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json AccuracyTable::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    json m = json::array(), e = json::array();
    for (double v : r.measured) m.push_back(number_or_null(v));
    for (double v : r.error_percent) e.push_back(number_or_null(v));
    rows_j.push_back({{"level", r.level}, {"quantity", r.quantity}, {"nominal", r.nominal},
                      {"measured", m}, {"error_percent", e}});
  }
  return {{"noise_factors", noise_factors}, {"rows", rows_j}, {"failures", failures}};
}

std::string AccuracyTable::to_csv() const {
  std::ostringstream out;
  out << "level,quantity";
  for (double f : noise_factors) out << ",error_pct_noise" << f;
  out << '\n' << std::fixed << std::setprecision(3);
  for (const auto& r : rows) {
    out << r.level << ',' << r.quantity;
    for (double e : r.error_percent) {
      out << ',';
      if (std::isfinite(e)) out << e;
    }
    out << '\n';
  }
  return out.str();
}

AccuracyTable run_accuracy_study(const PhantomSpec& spec, const PipelineConfig& cfg,
                                 const AccuracyOptions& opt) {
  if (opt.repeats < 1) throw Error("accuracy study needs at least one repeat");
  if (opt.noise_factors.empty()) throw Error("accuracy study needs at least one noise factor");
  PhantomSpec clean = spec;
  clean.noise_sigma = 0.0;
  const Phantom base = generate_phantom(clean);
  const SeedSet seeds = phantom_seeds(base.truth);
  const std::size_t nl = base.truth.levels.size(), nf = opt.noise_factors.size();

  AccuracyTable table;
  table.noise_factors = opt.noise_factors;
  // sums[level][quantity][factor], with the count of successful repeats.
  std::vector<std::vector<std::vector<double>>> sums(nl, std::vector<std::vector<double>>(4, std::vector<double>(nf, 0.0)));
  std::vector<std::vector<int>> hits(nl, std::vector<int>(nf, 0));
  for (std::size_t f = 0; f < nf; ++f) {
    const double factor = opt.noise_factors[f];
    if (!(factor >= 0.0)) throw Error("noise factors must be non-negative");
    for (int r = 0; r < opt.repeats; ++r) {
      const std::uint64_t noise_seed =
          opt.identical_noise ? derive_seed(cfg.master_seed, {f})
                              : derive_seed(cfg.master_seed, {f, static_cast<std::uint64_t>(r)});
      const Volume vol = factor > 0.0 ? add_noise(base.volume, kSigma0 * factor, noise_seed) : base.volume;
      const PipelineResult res = run_pipeline(vol, seeds, cfg);
      for (std::size_t l = 0; l < nl; ++l) {
        const LevelResult& lr = res.levels[l];
        if (!lr.ok()) {
          table.failures.push_back(lr.name + " noise " + std::to_string(factor) + " repeat " +
                                   std::to_string(r) + ": " + *lr.error);
          continue;
        }
        for (int q = 0; q < 4; ++q) sums[l][q][f] += quantity_of(lr, q);
        ++hits[l][f];
      }
    }
  }
  for (std::size_t l = 0; l < nl; ++l) {
    const LevelTruth& t = base.truth.levels[l];
    for (int q = 0; q < 4; ++q) {
      AccuracyRow row;
      row.level = t.name;
      row.quantity = kQuantities[q];
      row.nominal = q < 3 ? t.nominal_bmd : t.body_volume_mm3;
      for (std::size_t f = 0; f < nf; ++f) {
        const double m = hits[l][f] ? sums[l][q][f] / hits[l][f] : std::numeric_limits<double>::quiet_NaN();
        row.measured.push_back(m);
        row.error_percent.push_back(std::isfinite(m) ? accuracy_error(m, row.nominal) : m);
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

json PrecisionStudy::to_json() const {
  json q = json::object();
  for (const auto& [name, s] : quantities) q[name] = s;
  return {{"quantities", q}, {"failures", failures}};
}

PrecisionStudy run_precision_study(const PhantomSpec& spec, const PipelineConfig& cfg,
                                   const PrecisionOptions& opt) {
  if (opt.instances < 1 || opt.analyses < 2) {
    throw Error("precision study needs at least one instance and two analyses");
  }
  if (!(opt.jitter_mm >= 0.0) || !(opt.noise_factor >= 0.0)) {
    throw Error("jitter and noise factor must be non-negative");
  }
  PhantomSpec clean = spec;
  clean.noise_sigma = 0.0;
  const Phantom base = generate_phantom(clean);
  const SeedSet truth_seeds = phantom_seeds(base.truth);
  const std::size_t nl = base.truth.levels.size();
  static const char* const kScalar[] = {"bmd_total", "bmd_cylinder", "bmd_pacman", "body_volume"};
  static const char* const kMarks[] = {"M1", "M2", "M3", "M4"};

  PrecisionStudy study;
  std::vector<std::vector<std::vector<std::vector<double>>>> scalar(4);  // [q][subject][analysis][level]
  std::vector<std::vector<std::vector<std::vector<Vec3>>>> marks(4);
  std::vector<std::vector<double>> scale;
  for (int s = 0; s < opt.instances; ++s) {
    const auto si = static_cast<std::uint64_t>(s);
    const Volume vol = opt.noise_factor > 0.0
                           ? add_noise(base.volume, kSigma0 * opt.noise_factor,
                                       derive_seed(cfg.master_seed, {1000, si}))
                           : base.volume;
    std::vector<std::vector<std::vector<double>>> sv(4);
    std::vector<std::vector<std::vector<Vec3>>> mv(4);
    bool complete = true;
    for (int a = 0; a < opt.analyses && complete; ++a) {
      SeedSet seeds = truth_seeds;
      for (std::size_t l = 0; l < nl; ++l) {
        seeds.levels[l].center = jitter_in_ball(
            truth_seeds.levels[l].center, opt.jitter_mm,
            derive_seed(cfg.master_seed, {2000, si, static_cast<std::uint64_t>(a), l}));
      }
      const PipelineResult res = run_pipeline(vol, seeds, cfg);
      std::vector<std::vector<double>> row(4);
      std::vector<std::vector<Vec3>> mrow(4);
      for (const auto& lr : res.levels) {
        if (!lr.ok() || !lr.vcs->landmarks.m3) {
          study.failures.push_back("instance " + std::to_string(s) + " analysis " + std::to_string(a) +
                                   " " + lr.name + ": " + (lr.error ? *lr.error : "missing M3/M4"));
          complete = false;
          break;
        }
        for (int q = 0; q < 4; ++q) row[q].push_back(quantity_of(lr, q));
        const Landmarks& lm = lr.vcs->landmarks;
        mrow[0].push_back(lm.m1);
        mrow[1].push_back(lm.m2);
        mrow[2].push_back(*lm.m3);
        mrow[3].push_back(*lm.m4);
      }
      if (!complete) break;
      for (int q = 0; q < 4; ++q) {
        sv[q].push_back(std::move(row[q]));
        mv[q].push_back(std::move(mrow[q]));
      }
    }
    if (!complete) continue;
    for (int q = 0; q < 4; ++q) {
      scalar[q].push_back(std::move(sv[q]));
      marks[q].push_back(std::move(mv[q]));
    }
    std::vector<double> heights;
    for (const auto& t : base.truth.levels) heights.push_back(t.body_height_mm);
    scale.push_back(std::move(heights));
  }
  if (scale.empty()) {
    throw Error("precision study: no instance completed" +
                (study.failures.empty() ? std::string() : "; first failure: " + study.failures.front()));
  }
  for (int q = 0; q < 4; ++q) {
    study.quantities[kScalar[q]] = precision_cv(scalar[q]);
    study.quantities[kMarks[q]] = landmark_cv(marks[q], scale);
  }
  return study;
}

}  // namespace vqct
