#pragma once

// Heuristic stand-ins for point cloud segmentation networks, the vehicle IoU
// metric, and the point-wise attack baseline.
//
// Pipeline: drop points near the ground plane, single-linkage Euclidean
// clustering on a uniform grid hash, fit an oriented box (2-D PCA in the xy
// plane + z extent) per cluster, and label the cluster "vehicle" when the
// extents fall inside the victim's dimension bounds.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "scg/lidar.hpp"
#include "scg/rng.hpp"

namespace scg::victim {

struct SegmenterParams {
  std::string name = "V1";
  double ground_tol = 0.30;     // points with z below this are ground
  double linkage_radius = 1.2;  // single-linkage distance
  int min_cluster = 10;
  double ext_hi = 5.3;   // max allowed major xy extent
  double ext_lo = 0.5;   // min allowed major xy extent
  double wid_hi = 2.6;   // minor xy extent bounds
  double wid_lo = 0.15;
  double hgt_hi = 2.3;   // z extent bounds
  double hgt_lo = 0.55;
};

inline std::vector<SegmenterParams> default_victims() {
  SegmenterParams v1;
  v1.name = "V1";
  SegmenterParams v2;
  v2.name = "V2";
  v2.ground_tol = 0.25;
  v2.linkage_radius = 0.9;
  v2.min_cluster = 16;
  v2.ext_hi = 5.0;
  v2.ext_lo = 0.6;
  v2.wid_hi = 2.4;
  v2.hgt_hi = 2.1;
  v2.hgt_lo = 0.65;
  SegmenterParams v3;
  v3.name = "V3";
  v3.ground_tol = 0.35;
  v3.linkage_radius = 1.6;
  v3.min_cluster = 6;
  v3.ext_hi = 5.6;
  v3.ext_lo = 0.4;
  v3.wid_hi = 2.8;
  v3.hgt_hi = 2.4;
  v3.hgt_lo = 0.45;
  SegmenterParams v4;
  v4.name = "V4";
  v4.ground_tol = 0.30;
  v4.linkage_radius = 1.1;
  v4.min_cluster = 12;
  v4.ext_hi = 5.15;
  v4.ext_lo = 0.5;
  v4.wid_hi = 2.5;
  v4.hgt_hi = 2.2;
  v4.hgt_lo = 0.6;
  return {v1, v2, v3, v4};
}

inline nlohmann::json victim_to_json(const SegmenterParams& p) {
  return {{"name", p.name},           {"ground_tol", p.ground_tol},
          {"linkage_radius", p.linkage_radius}, {"min_cluster", p.min_cluster},
          {"ext_hi", p.ext_hi},       {"ext_lo", p.ext_lo},
          {"wid_hi", p.wid_hi},       {"wid_lo", p.wid_lo},
          {"hgt_hi", p.hgt_hi},       {"hgt_lo", p.hgt_lo}};
}

inline SegmenterParams victim_from_json(const nlohmann::json& j) {
  SegmenterParams p;
  p.name = j.at("name").get<std::string>();
  p.ground_tol = j.at("ground_tol").get<double>();
  p.linkage_radius = j.at("linkage_radius").get<double>();
  p.min_cluster = j.at("min_cluster").get<int>();
  p.ext_hi = j.at("ext_hi").get<double>();
  p.ext_lo = j.at("ext_lo").get<double>();
  p.wid_hi = j.at("wid_hi").get<double>();
  p.wid_lo = j.at("wid_lo").get<double>();
  p.hgt_hi = j.at("hgt_hi").get<double>();
  p.hgt_lo = j.at("hgt_lo").get<double>();
  if (p.linkage_radius <= 0 || p.min_cluster <= 0)
    throw std::runtime_error("victim: non-positive clustering parameters");
  return p;
}

struct SegmentationResult {
  std::vector<int> labels;  // per point, PointLabel values
  double vehicle_iou = 1.0; // filled by evaluate()
};

namespace detail {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace detail

// Per-point vehicle/background prediction. Deterministic and equivariant to
// point order (the clustering result does not depend on insertion order).
inline std::vector<int> segment(const std::vector<lidar::Vec3>& points, const SegmenterParams& p) {
  const int n = static_cast<int>(points.size());
  std::vector<int> labels(n, lidar::kBackgroundPoint);
  std::vector<int> above;  // indices above ground
  for (int i = 0; i < n; ++i)
    if (points[i][2] > p.ground_tol) above.push_back(i);
  if (above.empty()) return labels;

  // uniform grid hash, cell = linkage radius; single linkage within 27 cells
  const double cell = p.linkage_radius;
  auto key_of = [&](const lidar::Vec3& v) {
    return std::tuple<int64_t, int64_t, int64_t>{static_cast<int64_t>(std::floor(v[0] / cell)),
                                                 static_cast<int64_t>(std::floor(v[1] / cell)),
                                                 static_cast<int64_t>(std::floor(v[2] / cell))};
  };
  std::map<std::tuple<int64_t, int64_t, int64_t>, std::vector<int>> grid;
  for (int k = 0; k < static_cast<int>(above.size()); ++k)
    grid[key_of(points[above[k]])].push_back(k);

  detail::UnionFind uf(static_cast<int>(above.size()));
  const double r2 = p.linkage_radius * p.linkage_radius;
  for (const auto& [key, cellpts] : grid) {
    auto [gx, gy, gz] = key;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = grid.find({gx + dx, gy + dy, gz + dz});
          if (it == grid.end()) continue;
          for (int a : cellpts)
            for (int b : it->second) {
              if (b <= a) continue;
              const lidar::Vec3& pa = points[above[a]];
              const lidar::Vec3& pb = points[above[b]];
              double d2 = (pa[0] - pb[0]) * (pa[0] - pb[0]) + (pa[1] - pb[1]) * (pa[1] - pb[1]) +
                          (pa[2] - pb[2]) * (pa[2] - pb[2]);
              if (d2 <= r2) uf.unite(a, b);
            }
        }
  }

  std::map<int, std::vector<int>> clusters;
  for (int k = 0; k < static_cast<int>(above.size()); ++k) clusters[uf.find(k)].push_back(k);

  for (const auto& [root, members] : clusters) {
    if (static_cast<int>(members.size()) < p.min_cluster) continue;
    // oriented xy box via 2-D PCA + z extent
    double mx = 0, my = 0;
    for (int k : members) {
      mx += points[above[k]][0];
      my += points[above[k]][1];
    }
    mx /= members.size();
    my /= members.size();
    double sxx = 0, sxy = 0, syy = 0, zhi = -1e300;
    for (int k : members) {
      const lidar::Vec3& q = points[above[k]];
      double dx = q[0] - mx, dy = q[1] - my;
      sxx += dx * dx;
      sxy += dx * dy;
      syy += dy * dy;
      zhi = std::max(zhi, q[2]);
    }
    double tr = sxx + syy, det = sxx * syy - sxy * sxy;
    double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    double l1 = tr / 2.0 + disc;
    double ex, ey;  // principal axis
    if (std::abs(sxy) > 1e-12) {
      ex = l1 - syy;
      ey = sxy;
    } else {
      ex = sxx >= syy ? 1.0 : 0.0;
      ey = sxx >= syy ? 0.0 : 1.0;
    }
    double norm = std::hypot(ex, ey);
    ex /= norm;
    ey /= norm;
    double alo = 1e300, ahi = -1e300, blo = 1e300, bhi = -1e300;
    for (int k : members) {
      const lidar::Vec3& q = points[above[k]];
      double a = (q[0] - mx) * ex + (q[1] - my) * ey;
      double b = -(q[0] - mx) * ey + (q[1] - my) * ex;
      alo = std::min(alo, a);
      ahi = std::max(ahi, a);
      blo = std::min(blo, b);
      bhi = std::max(bhi, b);
    }
    double major = std::max(ahi - alo, bhi - blo);
    double minor = std::min(ahi - alo, bhi - blo);
    // cluster sits above the ground cut; measure height from the ground plane
    double height = zhi;
    bool is_vehicle = major >= p.ext_lo && major <= p.ext_hi && minor >= p.wid_lo &&
                      minor <= p.wid_hi && height >= p.hgt_lo && height <= p.hgt_hi;
    if (is_vehicle)
      for (int k : members) labels[above[k]] = lidar::kVehiclePoint;
  }
  return labels;
}

// |pred ∩ true| / |pred ∪ true| for the class; 1.0 when the union is empty.
inline double iou(const std::vector<int>& pred, const std::vector<int>& truth, int cls) {
  if (pred.size() != truth.size()) throw std::invalid_argument("iou: length mismatch");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    bool a = pred[i] == cls, b = truth[i] == cls;
    inter += a && b ? 1 : 0;
    uni += a || b ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double vehicle_iou(const lidar::LabeledPointCloud& cloud, const SegmenterParams& p) {
  if (cloud.size() == 0) return 1.0;
  return iou(segment(cloud.points, p), cloud.labels, lidar::kVehiclePoint);
}

// --- point attack -----------------------------------------------------------------------

struct PointAttackResult {
  lidar::LabeledPointCloud cloud;
  std::vector<double> iou_curve;      // per evaluation
  double best_iou = 1.0;
  int evals = 0;
};

// SimBA directly on point coordinates: random coordinate order, +/- eps trial
// steps, keep what lowers the vehicle IoU against the original true labels.
inline PointAttackResult point_attack(const lidar::LabeledPointCloud& cloud,
                                      const SegmenterParams& victim, int budget, double eps,
                                      uint64_t seed) {
  PointAttackResult res;
  res.cloud = cloud;
  if (cloud.size() == 0 || budget <= 0) {
    res.best_iou = vehicle_iou(cloud, victim);
    return res;
  }
  Rng rng = Rng::substream(seed, "point_attack");
  auto eval = [&](const std::vector<lidar::Vec3>& pts) {
    ++res.evals;
    double v = iou(segment(pts, victim), cloud.labels, lidar::kVehiclePoint);
    res.iou_curve.push_back(v);
    return v;
  };
  double cur = eval(res.cloud.points);
  res.best_iou = cur;

  const int64_t coords = static_cast<int64_t>(cloud.size()) * 3;
  std::vector<int64_t> order(coords);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  size_t cursor = 0;
  while (res.evals < budget) {
    if (cursor >= order.size()) {
      rng.shuffle(order);
      cursor = 0;
    }
    int64_t c = order[cursor++];
    size_t pt = static_cast<size_t>(c / 3);
    int axis = static_cast<int>(c % 3);
    for (double sign : {+1.0, -1.0}) {
      if (res.evals >= budget) break;
      double keep = res.cloud.points[pt][axis];
      res.cloud.points[pt][axis] = keep + sign * eps;
      double v = eval(res.cloud.points);
      if (v < cur) {
        cur = v;
        res.best_iou = std::min(res.best_iou, v);
        break;
      }
      res.cloud.points[pt][axis] = keep;
    }
    res.best_iou = std::min(res.best_iou, cur);
  }
  return res;
}

}  // namespace scg::victim
