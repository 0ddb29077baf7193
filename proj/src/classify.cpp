#include "vqct/classify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vqct/presegment.hpp"

namespace vqct {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

struct WeightedValue {
  double x;
  double count;
};

std::vector<WeightedValue> compress(std::span<const float> values) {
  std::vector<float> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<WeightedValue> out;
  for (float v : sorted) {
    if (!out.empty() && out.back().x == static_cast<double>(v)) {
      out.back().count += 1.0;
    } else {
      out.push_back({static_cast<double>(v), 1.0});
    }
  }
  return out;
}

double log_density(double w, double mu, double sigma, double x) {
  const double z = (x - mu) / sigma;
  return std::log(w) - std::log(sigma) - kHalfLog2Pi - 0.5 * z * z;
}

}  // namespace

void GaussianPair::validate() const {
  for (int c = 0; c < 2; ++c) {
    if (!(weight[c] > 0.0 && weight[c] < 1.0)) throw Error("gaussian weight outside (0,1)");
    if (!(sigma[c] > 0.0)) throw Error("gaussian sigma must be positive");
  }
  if (std::abs(weight[0] + weight[1] - 1.0) > 1e-9) throw Error("gaussian weights must sum to 1");
  if (!(mean[0] < mean[1])) throw Error("gaussian components must be ordered by mean");
}

double GaussianPair::density(int c, double x) const {
  return std::exp(log_density(weight[c], mean[c], sigma[c], x));
}

double otsu_threshold(std::span<const float> values, int bins) {
  if (values.empty()) throw Error("otsu threshold of an empty sample");
  const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const double mn = *mn_it, mx = *mx_it;
  if (!(mx > mn)) return mn;
  std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
  const double scale = bins / (mx - mn);
  for (float v : values) {
    const int b = std::min(bins - 1, static_cast<int>((v - mn) * scale));
    hist[static_cast<std::size_t>(b)] += 1.0;
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int b = 0; b < bins; ++b) sum_all += (b + 0.5) * hist[static_cast<std::size_t>(b)];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int b = 0; b < bins - 1; ++b) {
    w0 += hist[static_cast<std::size_t>(b)];
    sum0 += (b + 0.5) * hist[static_cast<std::size_t>(b)];
    const double w1 = total - w0;
    if (w0 <= 0.0 || w1 <= 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  return mn + (best_bin + 1) / scale;
}

GaussianPair fit_two_gaussians(std::span<const float> values, const EmOptions& opt,
                               EmTrace* trace) {
  if (values.size() < 2) throw Error("two-gaussian fit needs data");
  const std::vector<WeightedValue> data = compress(values);
  const double range = data.back().x - data.front().x;
  if (!(range > 0.0)) throw Error("degenerate two-gaussian fit: constant input (not bimodal)");
  const double total = static_cast<double>(values.size());
  const double floor_sigma = opt.sigma_floor_fraction * range;
  const double collapse = 1e-6 * range;

  // Otsu split initializes both components.
  const double split = otsu_threshold(values, opt.histogram_bins);
  GaussianPair g;
  {
    double n[2] = {0, 0}, s[2] = {0, 0}, ss[2] = {0, 0};
    for (const auto& d : data) {
      const int c = d.x < split ? 0 : 1;
      n[c] += d.count;
      s[c] += d.count * d.x;
    }
    if (n[0] <= 0.0 || n[1] <= 0.0) throw Error("degenerate two-gaussian fit: empty Otsu class");
    for (int c = 0; c < 2; ++c) g.mean[c] = s[c] / n[c];
    for (const auto& d : data) {
      const int c = d.x < split ? 0 : 1;
      ss[c] += d.count * (d.x - g.mean[c]) * (d.x - g.mean[c]);
    }
    for (int c = 0; c < 2; ++c) {
      g.weight[c] = n[c] / total;
      g.sigma[c] = std::max(std::sqrt(ss[c] / n[c]), floor_sigma);
    }
  }

  EmTrace local;
  EmTrace& tr = trace ? *trace : local;
  tr = EmTrace{};
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.max_iterations; ++it) {
    double n[2] = {0, 0}, s[2] = {0, 0}, ll = 0.0;
    std::vector<double> resp(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double x = data[i].x;
      const double l0 = log_density(g.weight[0], g.mean[0], g.sigma[0], x);
      const double l1 = log_density(g.weight[1], g.mean[1], g.sigma[1], x);
      const double m = std::max(l0, l1);
      const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
      const double r1 = std::exp(l1 - lse);
      resp[i] = r1;
      ll += data[i].count * lse;
      n[0] += data[i].count * (1.0 - r1);
      n[1] += data[i].count * r1;
      s[0] += data[i].count * (1.0 - r1) * x;
      s[1] += data[i].count * r1 * x;
    }
    ll /= total;
    tr.log_likelihood.push_back(ll);
    tr.iterations = it + 1;
    if (n[0] <= 0.0 || n[1] <= 0.0) throw Error("degenerate two-gaussian fit: component vanished");

    GaussianPair next;
    double ss[2] = {0, 0};
    for (int c = 0; c < 2; ++c) next.mean[c] = s[c] / n[c];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double r[2] = {1.0 - resp[i], resp[i]};
      for (int c = 0; c < 2; ++c) {
        const double d = data[i].x - next.mean[c];
        ss[c] += data[i].count * r[c] * d * d;
      }
    }
    for (int c = 0; c < 2; ++c) {
      next.weight[c] = n[c] / total;
      const double sd = std::sqrt(ss[c] / n[c]);
      if (floor_sigma <= 0.0 && sd < collapse) {
        throw Error("degenerate two-gaussian fit: sigma collapsed (not bimodal)");
      }
      next.sigma[c] = std::max(sd, floor_sigma);
    }
    g = next;
    if (ll - prev_ll < opt.tolerance) {
      tr.converged = true;
      break;
    }
    prev_ll = ll;
  }

  if (g.mean[0] > g.mean[1]) {
    std::swap(g.weight[0], g.weight[1]);
    std::swap(g.mean[0], g.mean[1]);
    std::swap(g.sigma[0], g.sigma[1]);
  }
  if (!(g.mean[1] - g.mean[0] > collapse)) {
    throw Error("degenerate two-gaussian fit: components coincide (not bimodal)");
  }
  g.weight[1] = 1.0 - g.weight[0];
  return g;
}

GaussianPair fit_two_gaussians(const Volume& vol, const SearchRegion& region, const EmOptions& opt,
                               EmTrace* trace) {
  const std::vector<std::size_t> idx = region.voxels(vol.geometry());
  if (idx.size() < 1000) {
    throw Error("search region holds " + std::to_string(idx.size()) +
                " voxels; at least 1000 are needed for the histogram fit");
  }
  std::vector<float> values;
  values.reserve(idx.size());
  for (auto i : idx) values.push_back(vol[i]);
  return fit_two_gaussians(values, opt, trace);
}

double gaussian_intersection(const GaussianPair& g) {
  g.validate();
  const double s0 = g.sigma[0], s1 = g.sigma[1], m0 = g.mean[0], m1 = g.mean[1];
  const double a = 0.5 / (s1 * s1) - 0.5 / (s0 * s0);
  const double b = m0 / (s0 * s0) - m1 / (s1 * s1);
  const double c = 0.5 * m1 * m1 / (s1 * s1) - 0.5 * m0 * m0 / (s0 * s0) +
                   std::log(g.weight[0] * s1 / (g.weight[1] * s0));
  auto inside = [&](double x) { return x > m0 && x < m1; };
  const double scale = 0.5 / (s0 * s0) + 0.5 / (s1 * s1);
  if (std::abs(a) <= 1e-14 * scale) {
    const double x = -c / b;
    if (!inside(x)) throw Error("gaussian intersection lies outside the means");
    return x;
  }
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) throw Error("gaussians do not intersect");
  const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
  const double r1 = q / a;
  const double r2 = q != 0.0 ? c / q : r1;
  if (inside(r1) && inside(r2)) return std::abs(r1 - 0.5 * (m0 + m1)) <= std::abs(r2 - 0.5 * (m0 + m1)) ? r1 : r2;
  if (inside(r1)) return r1;
  if (inside(r2)) return r2;
  throw Error("no gaussian intersection between the means");
}

ThresholdBand make_band(const GaussianPair& g, double delta_minus, double delta_plus) {
  const double def = 0.5 * std::min(g.sigma[0], g.sigma[1]);
  ThresholdBand band;
  band.x_star = gaussian_intersection(g);
  band.low = band.x_star - (delta_minus < 0.0 ? def : delta_minus);
  band.high = band.x_star + (delta_plus < 0.0 ? def : delta_plus);
  if (!(g.mean[0] < band.low && band.high < g.mean[1])) {
    throw Error("threshold offsets cross the gaussian modes");
  }
  return band;
}

TissueClass classify_voxel(const Volume& vol, int i, int j, int k, const ThresholdBand& band,
                           int r) {
  const double v = vol(i, j, k);
  if (v < band.low) return TissueClass::soft;
  if (v > band.high) return TissueClass::bone;
  double sum = 0.0;
  int n = 0;
  for (int dk = -r; dk <= r; ++dk)
    for (int dj = -r; dj <= r; ++dj)
      for (int di = -r; di <= r; ++di) {
        sum += vol.clamped(i + di, j + dj, k + dk);
        ++n;
      }
  return sum / n > band.x_star ? TissueClass::bone : TissueClass::soft;
}

nlohmann::json fit_report(const GaussianPair& g, const ThresholdBand& band) {
  return {{"w", {g.weight[0], g.weight[1]}},
          {"mu", {g.mean[0], g.mean[1]}},
          {"sigma", {g.sigma[0], g.sigma[1]}},
          {"x_star", band.x_star},
          {"low", band.low},
          {"high", band.high}};
}

}  // namespace vqct
