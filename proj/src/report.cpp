#include "vqct/report.hpp"

#include <cmath>

namespace vqct {

using nlohmann::json;

void to_json(json& j, const VoiStats& s) {
  j = json{{"name", s.name},
           {"voxels", s.count},
           {"volume_mm3", s.volume_mm3},
           {"bmd_mean", s.mean},
           {"bmd_sd", s.sd}};
}

void CompensatedSum::add(double x) {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x))
    comp_ += (sum_ - t) + x;
  else
    comp_ += (x - t) + sum_;
  sum_ = t;
}

VoiStats measure_voi(const Volume& vol, const Mask& voi, const std::string& name) {
  require_same_geometry(vol.geometry(), voi.geometry(), "measure_voi");
  CompensatedSum sum;
  std::size_t n = 0;
  for (std::size_t i = 0; i < voi.size(); ++i) {
    if (!voi[i]) continue;
    sum.add(vol[i]);
    ++n;
  }
  if (n == 0) throw Error("VOI '" + name + "' is empty");
  VoiStats s;
  s.name = name;
  s.count = n;
  s.volume_mm3 = static_cast<double>(n) * vol.geometry().voxel_volume();
  s.mean = sum.value() / static_cast<double>(n);
  if (n > 1) {
    CompensatedSum sq;
    for (std::size_t i = 0; i < voi.size(); ++i)
      if (voi[i]) sq.add((vol[i] - s.mean) * (vol[i] - s.mean));
    s.sd = std::sqrt(sq.value() / static_cast<double>(n - 1));
  }
  return s;
}

double accuracy_error(double measured, double nominal) {
  if (nominal == 0.0) throw Error("accuracy error against a zero nominal value");
  return 100.0 * std::abs(measured - nominal) / std::abs(nominal);
}

double sample_mean(const std::vector<double>& v) {
  if (v.empty()) throw Error("mean of an empty sample");
  CompensatedSum s;
  for (double x : v) s.add(x);
  return s.value() / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) throw Error("sample SD needs at least two values");
  const double m = sample_mean(v);
  CompensatedSum s;
  for (double x : v) s.add((x - m) * (x - m));
  return std::sqrt(s.value() / static_cast<double>(v.size() - 1));
}

void to_json(json& j, const PrecisionSummary& s) {
  j = json{{"cv_rms_percent", s.cv_rms_percent}, {"cv_sd", s.cv_sd}};
}

namespace {

PrecisionSummary summarize(std::vector<double> cvs) {
  PrecisionSummary out;
  CompensatedSum sq;
  for (double c : cvs) sq.add(c * c);
  out.cv_rms_percent = std::sqrt(sq.value() / static_cast<double>(cvs.size()));
  out.cv_sd = cvs.size() > 1 ? sample_sd(cvs) : 0.0;
  out.subject_cv = std::move(cvs);
  return out;
}

}  // namespace

PrecisionSummary precision_cv(const std::vector<std::vector<std::vector<double>>>& values) {
  if (values.empty()) throw Error("precision needs at least one subject");
  std::vector<double> cvs;
  for (const auto& subject : values) {
    if (subject.size() < 2) throw Error("precision needs at least two repeats per subject");
    std::vector<double> per_repeat;
    for (const auto& levels : subject) per_repeat.push_back(sample_mean(levels));
    const double m = sample_mean(per_repeat);
    if (m == 0.0) throw Error("precision of a zero-mean quantity");
    cvs.push_back(100.0 * sample_sd(per_repeat) / std::abs(m));
  }
  return summarize(std::move(cvs));
}

PrecisionSummary landmark_cv(const std::vector<std::vector<std::vector<Vec3>>>& positions,
                             const std::vector<std::vector<double>>& scale) {
  if (positions.empty() || positions.size() != scale.size()) {
    throw Error("landmark precision needs one scale row per subject");
  }
  std::vector<double> cvs;
  for (std::size_t s = 0; s < positions.size(); ++s) {
    const auto& reps = positions[s];
    if (reps.size() < 2) throw Error("precision needs at least two repeats per subject");
    const std::size_t nl = reps[0].size();
    if (nl == 0 || scale[s].size() != nl) throw Error("landmark precision level count mismatch");
    CompensatedSum level_sq;
    for (std::size_t l = 0; l < nl; ++l) {
      Vec3 mean = Vec3::Zero();
      for (const auto& r : reps) mean += r.at(l);
      mean /= static_cast<double>(reps.size());
      CompensatedSum d2;
      for (const auto& r : reps) d2.add((r[l] - mean).squaredNorm());
      const double sd = std::sqrt(d2.value() / static_cast<double>(reps.size() - 1));
      if (!(scale[s][l] > 0.0)) throw Error("landmark precision needs a positive scale");
      const double cv = 100.0 * sd / scale[s][l];
      level_sq.add(cv * cv);
    }
    cvs.push_back(std::sqrt(level_sq.value() / static_cast<double>(nl)));
  }
  return summarize(std::move(cvs));
}

}  // namespace vqct
