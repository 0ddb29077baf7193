#include "vqct/morphology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <tuple>

#include "vqct/presegment.hpp"

namespace vqct {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas f(p) + w·(q−p)² (Felzenszwalb & Huttenlocher).
void edt_1d(const double* f, double* d, int n, double w, std::vector<int>& v,
            std::vector<double>& z) {
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n) + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + w * q * q) - (f[p] + w * p * p)) / (2.0 * w * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates everywhere.
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) d[q] = kInf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    d[q] = f[v[j]] + w * dq * dq;
  }
}

struct Crop {
  Mask mask;
  Index3 lo;
};

// Foreground bounding box grown by `pad` voxels on every side; the padding
// may extend past the source lattice.
Crop padded_crop(const Mask& m, int pad) {
  Index3 lo, hi;
  if (!bounding_box(m, lo, hi)) throw Error("empty mask");
  lo -= pad;
  hi += pad;
  return {crop(m, lo, hi, std::uint8_t{0}), lo};
}

template <typename T>
Grid<T> uncrop(const Grid<T>& part, const Geometry& g, const Index3& lo, T fill = T{}) {
  Grid<T> out(g, fill);
  paste(out, part, lo);
  return out;
}

std::vector<Index3> neighbour_offsets(int connectivity) {
  std::vector<Index3> out;
  for (int dk = -1; dk <= 1; ++dk)
    for (int dj = -1; dj <= 1; ++dj)
      for (int di = -1; di <= 1; ++di) {
        const int l1 = std::abs(di) + std::abs(dj) + std::abs(dk);
        if (l1 == 0) continue;
        if ((connectivity == 6 || connectivity == 4) && l1 > 1) continue;
        if (connectivity == 18 && l1 > 2) continue;
        out.push_back({di, dj, dk});
      }
  return out;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t a) {
    while (parent_[a] != a) {
      parent_[a] = parent_[parent_[a]];
      a = parent_[a];
    }
    return a;
  }
  /// Returns the surviving root.
  std::size_t unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (size_[a] < size_[b] || (size_[a] == size_[b] && b < a)) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return a;
  }
  std::size_t size(std::size_t root) const { return size_[root]; }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

}  // namespace

DistanceField edt_squared(const Mask& foreground) {
  const Geometry& g = foreground.geometry();
  DistanceField d(g, kInf);
  for (std::size_t i = 0; i < d.size(); ++i)
    if (foreground[i]) d[i] = 0.0;
  const int n[3] = {g.dims.x(), g.dims.y(), g.dims.z()};
  const std::size_t stride[3] = {1, static_cast<std::size_t>(n[0]),
                                 static_cast<std::size_t>(n[0]) * n[1]};
  std::vector<double> f, out;
  std::vector<int> v;
  std::vector<double> z;
  for (int axis = 0; axis < 3; ++axis) {
    const int len = n[axis];
    if (len == 1) continue;
    const double w = g.spacing[axis] * g.spacing[axis];
    f.resize(static_cast<std::size_t>(len));
    out.resize(static_cast<std::size_t>(len));
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    for (int c2 = 0; c2 < n[a2]; ++c2)
      for (int c1 = 0; c1 < n[a1]; ++c1) {
        const std::size_t base = c1 * stride[a1] + c2 * stride[a2];
        for (int q = 0; q < len; ++q) f[q] = d[base + q * stride[axis]];
        edt_1d(f.data(), out.data(), len, w, v, z);
        for (int q = 0; q < len; ++q) d[base + q * stride[axis]] = out[q];
      }
  }
  return d;
}

DistanceField edt(const Mask& foreground) {
  if (count(foreground) == 0) throw Error("distance transform of an empty mask");
  DistanceField d = edt_squared(foreground);
  for (auto& x : d.values()) x = std::sqrt(x);
  return d;
}

int label_components(const Mask& m, LabelMap& labels, int connectivity,
                     std::vector<std::size_t>* sizes) {
  if (connectivity != 4 && connectivity != 6 && connectivity != 18 && connectivity != 26) {
    throw Error("connectivity must be 4, 6, 18 or 26");
  }
  const Geometry& g = m.geometry();
  labels = LabelMap(g, 0);
  if (sizes) sizes->assign(1, 0);
  const auto offs = neighbour_offsets(connectivity);
  int n = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < m.size(); ++s) {
    if (!m[s] || labels[s]) continue;
    ++n;
    std::size_t cnt = 0;
    labels[s] = n;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      ++cnt;
      const Index3 c = g.unlinear(cur);
      for (const auto& o : offs) {
        const Index3 q = c + o;
        if (!g.in_bounds(q.x(), q.y(), q.z())) continue;
        const std::size_t qi = g.linear(q.x(), q.y(), q.z());
        if (m[qi] && !labels[qi]) {
          labels[qi] = n;
          stack.push_back(qi);
        }
      }
    }
    if (sizes) sizes->push_back(cnt);
  }
  return n;
}

Mask largest_component(const Mask& m, int connectivity) {
  LabelMap labels;
  std::vector<std::size_t> sizes;
  const int n = label_components(m, labels, connectivity, &sizes);
  Mask out(m.geometry(), 0);
  if (n == 0) return out;
  int best = 1;
  for (int l = 2; l <= n; ++l)
    if (sizes[l] > sizes[best]) best = l;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = labels[i] == best ? 1 : 0;
  return out;
}

Mask volume_grow(const Volume& vol, const std::vector<std::size_t>& seeds,
                 const ThresholdBand& band, const SearchRegion& region, int neighborhood_radius) {
  if (seeds.empty()) throw Error("volume growing needs at least one seed");
  const Geometry& g = vol.geometry();
  // 0 unknown, 1 grown, 2 rejected
  std::vector<std::uint8_t> state(g.size(), 0);
  auto accept = [&](std::size_t idx) {
    const Index3 v = g.unlinear(idx);
    return region.contains(g.center(idx)) &&
           classify_voxel(vol, v, band, neighborhood_radius) == TissueClass::bone;
  };
  std::vector<std::size_t> stack;
  for (auto s : seeds) {
    if (s >= g.size()) throw Error("growing seed outside the volume");
    if (state[s] == 1) continue;
    if (!accept(s)) throw Error("growing seed does not classify as bone inside the region");
    state[s] = 1;
    stack.push_back(s);
  }
  const auto offs = neighbour_offsets(6);
  while (!stack.empty()) {
    const std::size_t cur = stack.back();
    stack.pop_back();
    const Index3 c = g.unlinear(cur);
    for (const auto& o : offs) {
      const Index3 q = c + o;
      if (!g.in_bounds(q.x(), q.y(), q.z())) continue;
      const std::size_t qi = g.linear(q.x(), q.y(), q.z());
      if (state[qi]) continue;
      if (accept(qi)) {
        state[qi] = 1;
        stack.push_back(qi);
      } else {
        state[qi] = 2;
      }
    }
  }
  Mask out(g, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = state[i] == 1 ? 1 : 0;
  return out;
}

Mask close_ball(const Mask& m, double radius_mm) {
  if (radius_mm < 0.0) throw Error("closing radius must be non-negative");
  if (count(m) == 0 || radius_mm == 0.0) return m;
  const double smin = m.geometry().spacing.minCoeff();
  const int pad = static_cast<int>(std::ceil(2.0 * radius_mm / smin)) + 2;
  Crop c = padded_crop(m, pad);
  const double r2 = radius_mm * radius_mm;
  const DistanceField to_fg = edt_squared(c.mask);
  Mask dilated(c.mask.geometry(), 0);
  for (std::size_t i = 0; i < dilated.size(); ++i) dilated[i] = to_fg[i] <= r2 ? 1 : 0;
  const DistanceField to_bg = edt_squared(mask_not(dilated));
  Mask closed(c.mask.geometry(), 0);
  for (std::size_t i = 0; i < closed.size(); ++i) closed[i] = to_bg[i] > r2 ? 1 : 0;
  // Closing is extensive; the crop must not lose the original voxels.
  return mask_or(m, uncrop(closed, m.geometry(), c.lo, std::uint8_t{0}));
}

Mask fill_holes(const Mask& m) {
  const Geometry& g = m.geometry();
  std::vector<std::uint8_t> outside(g.size(), 0);
  std::vector<std::size_t> stack;
  const int nx = g.dims.x(), ny = g.dims.y(), nz = g.dims.z();
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        if (i != 0 && j != 0 && k != 0 && i != nx - 1 && j != ny - 1 && k != nz - 1) continue;
        const std::size_t idx = g.linear(i, j, k);
        if (!m[idx] && !outside[idx]) {
          outside[idx] = 1;
          stack.push_back(idx);
        }
      }
  const auto offs = neighbour_offsets(26);
  while (!stack.empty()) {
    const std::size_t cur = stack.back();
    stack.pop_back();
    const Index3 c = g.unlinear(cur);
    for (const auto& o : offs) {
      const Index3 q = c + o;
      if (!g.in_bounds(q.x(), q.y(), q.z())) continue;
      const std::size_t qi = g.linear(q.x(), q.y(), q.z());
      if (!m[qi] && !outside[qi]) {
        outside[qi] = 1;
        stack.push_back(qi);
      }
    }
  }
  Mask out(g, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = outside[i] ? 0 : 1;
  return out;
}

Mask close_and_fill(const Mask& m, double radius_mm) {
  return fill_holes(close_ball(m, radius_mm));
}

ErosionResult ultimate_erode(const Mask& m, int expected) {
  if (expected < 2) throw Error("ultimate erosion needs at least 2 expected components");
  Crop c = padded_crop(m, 1);
  const Geometry& cg = c.mask.geometry();
  const DistanceField depth = edt(mask_not(c.mask));

  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < c.mask.size(); ++i)
    if (c.mask[i]) fg.push_back(i);
  std::sort(fg.begin(), fg.end(), [&](std::size_t a, std::size_t b) {
    return depth[a] != depth[b] ? depth[a] > depth[b] : a < b;
  });
  const std::size_t min_size =
      std::max<std::size_t>(27, static_cast<std::size_t>(std::ceil(1e-3 * fg.size())));

  UnionFind uf(cg.size());
  std::vector<std::uint8_t> on(cg.size(), 0);
  const auto offs = neighbour_offsets(6);
  int significant = 0;
  auto sig = [&](std::size_t root) { return uf.size(root) >= min_size ? 1 : 0; };
  bool found = false;
  double split_level = 0.0;
  std::size_t pos = 0;
  while (pos < fg.size()) {
    const double level = depth[fg[pos]];
    std::size_t end = pos;
    while (end < fg.size() && depth[fg[end]] == level) ++end;
    for (std::size_t t = pos; t < end; ++t) {
      const std::size_t idx = fg[t];
      on[idx] = 1;
      significant += sig(idx);
      const Index3 v = cg.unlinear(idx);
      for (const auto& o : offs) {
        const Index3 q = v + o;
        if (!cg.in_bounds(q.x(), q.y(), q.z())) continue;
        const std::size_t qi = cg.linear(q.x(), q.y(), q.z());
        if (!on[qi]) continue;
        const std::size_t ra = uf.find(idx), rb = uf.find(qi);
        if (ra == rb) continue;
        significant -= sig(ra) + sig(rb);
        significant += sig(uf.unite(ra, rb));
      }
    }
    if (significant >= expected) {
      found = true;
      split_level = level;
    }
    pos = end;
  }
  if (!found) throw Error("no waist found: the shape never splits under erosion");

  Mask core(cg, 0);
  double below = 0.0;  // next lower distance value: the erosion threshold
  for (std::size_t i = 0; i < cg.size(); ++i) {
    if (!c.mask[i]) continue;
    if (depth[i] >= split_level) {
      core[i] = 1;
    } else {
      below = std::max(below, depth[i]);
    }
  }
  LabelMap labels;
  std::vector<std::size_t> sizes;
  const int n = label_components(core, labels, 6, &sizes);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 1);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sizes[a] > sizes[b]; });
  std::vector<int> rank(static_cast<std::size_t>(n) + 1, 0);
  for (int r = 0; r < std::min(n, expected); ++r) rank[order[r]] = r + 1;

  LabelMap res(cg, 0);
  for (std::size_t i = 0; i < cg.size(); ++i)
    if (labels[i]) res[i] = rank[labels[i]];
  ErosionResult out;
  out.residuals = uncrop(res, m.geometry(), c.lo, 0);
  out.threshold_mm = below;
  out.components = std::min(n, expected);
  return out;
}

SkizResult skiz_partition(const LabelMap& residuals, const Mask& within) {
  require_same_geometry(residuals.geometry(), within.geometry(), "skiz partition");
  const Geometry& g = within.geometry();
  using Key = std::tuple<std::int64_t, std::int32_t, std::size_t>;
  std::priority_queue<Key, std::vector<Key>, std::greater<Key>> heap;
  std::vector<std::int64_t> dist(g.size(), std::numeric_limits<std::int64_t>::max());
  SkizResult out{LabelMap(g, 0), Mask(g, 0)};
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (residuals[i] == 0) continue;
    if (!within[i]) throw Error("residual voxel outside the partition domain");
    dist[i] = 0;
    heap.push({0, residuals[i], i});
  }
  // Integer chamfer weights (0.01 mm units) over the 26-neighbourhood.
  const auto offs = neighbour_offsets(26);
  std::vector<std::int64_t> weight;
  for (const auto& o : offs) {
    weight.push_back(std::llround(100.0 * (o.cast<double>() * g.spacing).matrix().norm()));
  }
  std::vector<std::uint8_t> done(g.size(), 0);
  while (!heap.empty()) {
    const auto [d, label, idx] = heap.top();
    heap.pop();
    if (done[idx]) continue;
    done[idx] = 1;
    dist[idx] = d;
    out.labels[idx] = label;
    const Index3 v = g.unlinear(idx);
    for (std::size_t n = 0; n < offs.size(); ++n) {
      const Index3 q = v + offs[n];
      if (!g.in_bounds(q.x(), q.y(), q.z())) continue;
      const std::size_t qi = g.linear(q.x(), q.y(), q.z());
      if (!within[qi] || done[qi]) continue;
      const std::int64_t nd = d + weight[n];
      if (nd <= dist[qi]) {
        dist[qi] = nd;
        heap.push({nd, label, qi});
      }
    }
  }
  // Where two zones touch, the voxel reached later (larger key) is contact.
  const auto face = neighbour_offsets(6);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const int li = out.labels[i];
    if (!li) continue;
    const Index3 v = g.unlinear(i);
    for (const auto& o : face) {
      const Index3 q = v + o;
      if (!g.in_bounds(q.x(), q.y(), q.z())) continue;
      const std::size_t qi = g.linear(q.x(), q.y(), q.z());
      const int lq = out.labels[qi];
      if (!lq || lq == li) continue;
      const Key ki{dist[i], li, i}, kq{dist[qi], lq, qi};
      out.contact[ki > kq ? i : qi] = 1;
    }
  }
  return out;
}

DissectionResult pedicle_cut(const Mask& vertebra) {
  const ErosionResult er = ultimate_erode(vertebra, 2);
  const SkizResult sk = skiz_partition(er.residuals, vertebra);
  const Geometry& g = vertebra.geometry();
  DissectionResult out{Mask(g, 0), Mask(g, 0), Mask(g, 0), {}, er.threshold_mm, {}};
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!vertebra[i]) continue;
    if (sk.contact[i]) {
      out.cut[i] = 1;
    } else if (sk.labels[i] == 1) {
      out.body[i] = 1;
    } else {
      out.process[i] = 1;
    }
  }
  LabelMap labels;
  std::vector<std::size_t> sizes;
  const int n = label_components(out.cut, labels, 26, &sizes);
  if (n != 2) {
    out.warnings.push_back("pedicle cut produced " + std::to_string(n) +
                           " dissection areas, expected 2");
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 1);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sizes[a] > sizes[b]; });
  const int keep = std::min(n, 2);
  std::vector<Vec3> sum(static_cast<std::size_t>(keep), Vec3::Zero());
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (int r = 0; r < keep; ++r)
      if (labels[i] == order[r]) sum[r] += g.center(i);
  }
  for (int r = 0; r < keep; ++r) out.cut_centers.push_back(sum[r] / static_cast<double>(sizes[order[r]]));
  std::sort(out.cut_centers.begin(), out.cut_centers.end(),
            [](const Vec3& a, const Vec3& b) { return a.x() < b.x(); });
  return out;
}

Mask trabecular_peel(const Mask& body, const Volume& vol, const ThresholdBand& band,
                     double depth_mm) {
  require_same_geometry(body.geometry(), vol.geometry(), "trabecular peel");
  if (depth_mm < 0.0) throw Error("peel depth must be non-negative");
  const Geometry& g = body.geometry();
  Mask kept = body;
  std::vector<std::size_t> stack;
  std::vector<std::uint8_t> queued(g.size(), 0);
  const auto face = neighbour_offsets(6);
  auto exposed = [&](std::size_t idx) {
    const Index3 v = g.unlinear(idx);
    for (const auto& o : face) {
      const Index3 q = v + o;
      if (!g.in_bounds(q.x(), q.y(), q.z())) return true;
      if (!kept[g.linear(q.x(), q.y(), q.z())]) return true;
    }
    return false;
  };
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (kept[i] && vol[i] > band.high && exposed(i)) {
      queued[i] = 1;
      stack.push_back(i);
    }
  }
  // Phase 1: strip bright voxels from the outside in.
  while (!stack.empty()) {
    const std::size_t cur = stack.back();
    stack.pop_back();
    kept[cur] = 0;
    const Index3 v = g.unlinear(cur);
    for (const auto& o : face) {
      const Index3 q = v + o;
      if (!g.in_bounds(q.x(), q.y(), q.z())) continue;
      const std::size_t qi = g.linear(q.x(), q.y(), q.z());
      if (kept[qi] && !queued[qi] && vol[qi] > band.high) {
        queued[qi] = 1;
        stack.push_back(qi);
      }
    }
  }
  if (count(kept) == 0) throw Error("trabecular peel removed the whole body");
  // Phase 2: homogeneous erosion by the peel depth.
  Crop c = padded_crop(kept, 1);
  const DistanceField to_bg = edt(mask_not(c.mask));
  Mask eroded(c.mask.geometry(), 0);
  for (std::size_t i = 0; i < eroded.size(); ++i) {
    eroded[i] = c.mask[i] && to_bg[i] > depth_mm ? 1 : 0;
  }
  Mask out = uncrop(eroded, g, c.lo, std::uint8_t{0});
  if (count(out) == 0) throw Error("trabecular compartment is empty after peeling");
  return out;
}

}  // namespace vqct
