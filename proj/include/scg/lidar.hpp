#pragma once

// LiDAR model: cast a fixed beam pattern against vehicle box meshes and
// composite the hits with a background range image into a labeled point cloud.
//
// Rays are Moller-Trumbore against mesh triangles with per-mesh AABB
// rejection; at desk scale (tens of thousands of rays, a dozen boxes) brute
// force is plenty. The background is a per-ray range aligned 1:1 with the
// pattern; nearest return wins at composite time.

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "scg/rng.hpp"
#include "scg/traffic.hpp"

namespace scg::lidar {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Vec3 = std::array<double, 3>;

inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator*(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross3(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

// --- beam pattern ----------------------------------------------------------------------

struct BeamPattern {
  int channels = 32;
  double elev_lo = -15.0 * traffic::kPi / 180.0;
  double elev_hi = 5.0 * traffic::kPi / 180.0;
  double azimuth_step = 0.5 * traffic::kPi / 180.0;
  double max_range = 80.0;
  double origin_height = 1.8;

  int azimuth_steps() const {
    return static_cast<int>(std::round(2.0 * traffic::kPi / azimuth_step));
  }
  int ray_count() const { return channels * azimuth_steps(); }

  Vec3 origin() const { return {0.0, 0.0, origin_height}; }

  Vec3 direction(int ray) const {
    int steps = azimuth_steps();
    int ch = ray / steps;
    int az = ray % steps;
    double elev = channels == 1 ? elev_lo : elev_lo + (elev_hi - elev_lo) * ch / (channels - 1);
    double a = az * azimuth_step;
    double ce = std::cos(elev);
    return {ce * std::cos(a), ce * std::sin(a), std::sin(elev)};
  }
};

// --- meshes ---------------------------------------------------------------------------

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  int label = 0;  // semantic label carried to points
  Vec3 aabb_lo{kInf, kInf, kInf}, aabb_hi{-kInf, -kInf, -kInf};

  void finalize() {
    for (const auto& v : vertices)
      for (int k = 0; k < 3; ++k) {
        aabb_lo[k] = std::min(aabb_lo[k], v[k]);
        aabb_hi[k] = std::max(aabb_hi[k], v[k]);
      }
    for (const auto& t : triangles)
      for (int i : t)
        if (i < 0 || i >= static_cast<int>(vertices.size()))
          throw std::invalid_argument("mesh: triangle index out of range");
  }
};

// Oriented box sitting on the ground plane; 12 triangles.
inline TriangleMesh box_mesh(double cx, double cy, double yaw, double length, double width,
                             double height, int label) {
  TriangleMesh m;
  m.label = label;
  double c = std::cos(yaw), s = std::sin(yaw);
  for (int k = 0; k < 8; ++k) {
    double lx = (k & 1 ? 0.5 : -0.5) * length;
    double ly = (k & 2 ? 0.5 : -0.5) * width;
    double lz = (k & 4 ? 1.0 : 0.0) * height;
    m.vertices.push_back({cx + c * lx - s * ly, cy + s * lx + c * ly, lz});
  }
  const int faces[6][4] = {{0, 1, 3, 2}, {4, 6, 7, 5}, {0, 4, 5, 1},
                           {2, 3, 7, 6}, {0, 2, 6, 4}, {1, 5, 7, 3}};
  for (const auto& f : faces) {
    m.triangles.push_back({f[0], f[1], f[2]});
    m.triangles.push_back({f[0], f[2], f[3]});
  }
  m.finalize();
  return m;
}

inline TriangleMesh vehicle_mesh(const traffic::VehicleInstance& v, int label) {
  return box_mesh(v.x, v.y, v.theta, v.length, v.width, v.height, label);
}

// --- intersection ----------------------------------------------------------------------

// Moller-Trumbore; returns the hit distance t when t > eps and the barycentric
// coordinates land in the triangle. Degenerate triangles miss.
inline std::optional<double> ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a,
                                          const Vec3& b, const Vec3& c, double eps_t = 1e-6) {
  Vec3 e1 = b - a;
  Vec3 e2 = c - a;
  Vec3 p = cross3(dir, e2);
  double det = dot3(e1, p);
  if (std::abs(det) < 1e-12) return std::nullopt;
  double inv = 1.0 / det;
  Vec3 t = origin - a;
  double u = dot3(t, p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  Vec3 q = cross3(t, e1);
  double v = dot3(dir, q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  double dist = dot3(e2, q) * inv;
  if (dist <= eps_t) return std::nullopt;
  return dist;
}

inline bool ray_hits_aabb(const Vec3& origin, const Vec3& dir, const Vec3& lo, const Vec3& hi,
                          double tmax) {
  double t0 = 0.0, t1 = tmax;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(dir[k]) < 1e-15) {
      if (origin[k] < lo[k] || origin[k] > hi[k]) return false;
      continue;
    }
    double inv = 1.0 / dir[k];
    double a = (lo[k] - origin[k]) * inv;
    double b = (hi[k] - origin[k]) * inv;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return false;
  }
  return true;
}

struct RayHit {
  double t = kInf;
  int mesh = -1;
  bool valid() const { return mesh >= 0; }
};

// Nearest hit per ray over all meshes.
inline std::vector<RayHit> raycast(const std::vector<TriangleMesh>& meshes,
                                   const BeamPattern& pattern) {
  std::vector<RayHit> hits(pattern.ray_count());
  Vec3 origin = pattern.origin();
  for (int r = 0; r < pattern.ray_count(); ++r) {
    Vec3 dir = pattern.direction(r);
    RayHit best;
    best.t = pattern.max_range;
    for (size_t m = 0; m < meshes.size(); ++m) {
      const TriangleMesh& mesh = meshes[m];
      if (!ray_hits_aabb(origin, dir, mesh.aabb_lo, mesh.aabb_hi, best.t)) continue;
      for (const auto& tri : mesh.triangles) {
        auto t = ray_triangle(origin, dir, mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                              mesh.vertices[tri[2]]);
        if (t && *t < best.t) {
          best.t = *t;
          best.mesh = static_cast<int>(m);
        }
      }
    }
    if (best.valid()) hits[r] = best;
  }
  return hits;
}

// --- background -----------------------------------------------------------------------

struct BackgroundRangeImage {
  int channels = 0;
  int azimuth_steps = 0;
  std::vector<double> ranges;  // kInf = no return

  bool aligned_with(const BeamPattern& p) const {
    return channels == p.channels && azimuth_steps == p.azimuth_steps() &&
           static_cast<int>(ranges.size()) == p.ray_count();
  }
};

// Ground plane at z=0 plus randomized roadside boxes (buildings).
inline BackgroundRangeImage make_background(const traffic::RoadLayout& layout,
                                            const BeamPattern& pattern, uint64_t seed) {
  Rng rng = Rng::substream(seed, "background");
  std::vector<TriangleMesh> buildings;
  for (const auto& road : layout.roads) {
    int per_side = 4 + static_cast<int>(rng.uniform_int(3));
    for (int side = -1; side <= 1; side += 2) {
      for (int b = 0; b < per_side; ++b) {
        double along = rng.uniform(-road.length / 2.0, road.length / 2.0);
        double lat = side * (road.width / 2.0 + rng.uniform(6.0, 14.0));
        double cx = road.ox + std::cos(road.heading) * along - std::sin(road.heading) * lat;
        double cy = road.oy + std::sin(road.heading) * along + std::cos(road.heading) * lat;
        buildings.push_back(box_mesh(cx, cy, road.heading, rng.uniform(8.0, 16.0),
                                     rng.uniform(6.0, 12.0), rng.uniform(4.0, 10.0), 0));
      }
    }
  }
  auto hits = raycast(buildings, pattern);
  BackgroundRangeImage bg;
  bg.channels = pattern.channels;
  bg.azimuth_steps = pattern.azimuth_steps();
  bg.ranges.assign(pattern.ray_count(), kInf);
  Vec3 origin = pattern.origin();
  for (int r = 0; r < pattern.ray_count(); ++r) {
    double t = hits[r].valid() ? hits[r].t : kInf;
    Vec3 dir = pattern.direction(r);
    if (dir[2] < -1e-12) {
      double tg = -origin[2] / dir[2];  // ground plane z = 0
      t = std::min(t, tg);
    }
    if (t <= pattern.max_range) bg.ranges[r] = t;
  }
  return bg;
}

// binary array file with a small text header
inline void save_background(const BackgroundRangeImage& bg, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("background: cannot open " + path);
  f << "scg-range-image 1\n" << bg.channels << " " << bg.azimuth_steps << "\n";
  // infinities stored as the IEEE payload they are
  f.write(reinterpret_cast<const char*>(bg.ranges.data()), bg.ranges.size() * sizeof(double));
}

inline BackgroundRangeImage load_background(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("background: cannot open " + path);
  std::string tag;
  int version = 0;
  BackgroundRangeImage bg;
  f >> tag >> version >> bg.channels >> bg.azimuth_steps;
  if (tag != "scg-range-image" || version != 1)
    throw std::runtime_error("background: bad header in " + path);
  f.get();
  bg.ranges.resize(static_cast<size_t>(bg.channels) * bg.azimuth_steps);
  f.read(reinterpret_cast<char*>(bg.ranges.data()), bg.ranges.size() * sizeof(double));
  if (!f) throw std::runtime_error("background: truncated file " + path);
  return bg;
}

// --- composite ------------------------------------------------------------------------

enum PointLabel : int { kBackgroundPoint = 0, kVehiclePoint = 1 };

struct LabeledPointCloud {
  std::vector<Vec3> points;
  std::vector<int> labels;
  std::vector<int> ray_index;

  size_t size() const { return points.size(); }
};

// Per ray: nearest of (vehicle hit, background range) wins; rays with neither
// return are dropped.
inline LabeledPointCloud composite(const BackgroundRangeImage& bg, const std::vector<RayHit>& hits,
                                   const BeamPattern& pattern) {
  if (!bg.aligned_with(pattern) || static_cast<int>(hits.size()) != pattern.ray_count())
    throw std::invalid_argument("composite: misaligned inputs");
  LabeledPointCloud cloud;
  Vec3 origin = pattern.origin();
  for (int r = 0; r < pattern.ray_count(); ++r) {
    double tv = hits[r].valid() ? hits[r].t : kInf;
    double tb = bg.ranges[r];
    double t;
    int label;
    if (tv <= pattern.max_range && tv < tb) {
      t = tv;
      label = kVehiclePoint;
    } else if (tb <= pattern.max_range) {
      t = tb;
      label = kBackgroundPoint;
    } else {
      continue;
    }
    cloud.points.push_back(origin + pattern.direction(r) * t);
    cloud.labels.push_back(label);
    cloud.ray_index.push_back(r);
  }
  return cloud;
}

// Vehicle scene -> labeled cloud over a fixed background.
inline LabeledPointCloud render_scene(const std::vector<traffic::VehicleInstance>& vehicles,
                                      const BackgroundRangeImage& bg, const BeamPattern& pattern) {
  std::vector<TriangleMesh> meshes;
  meshes.reserve(vehicles.size());
  for (const auto& v : vehicles) meshes.push_back(vehicle_mesh(v, kVehiclePoint));
  return composite(bg, raycast(meshes, pattern), pattern);
}

// --- PLY ------------------------------------------------------------------------------

inline void save_ply(const LabeledPointCloud& cloud, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("ply: cannot open " + path);
  f << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n"
    << "property double x\nproperty double y\nproperty double z\n"
    << "property int label\nproperty int ray\nend_header\n";
  f.precision(17);
  for (size_t i = 0; i < cloud.size(); ++i)
    f << cloud.points[i][0] << " " << cloud.points[i][1] << " " << cloud.points[i][2] << " "
      << cloud.labels[i] << " " << cloud.ray_index[i] << "\n";
}

inline LabeledPointCloud load_ply(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("ply: cannot open " + path);
  std::string line;
  size_t count = 0;
  while (std::getline(f, line)) {
    if (line.rfind("element vertex", 0) == 0) count = std::stoul(line.substr(15));
    if (line == "end_header") break;
  }
  LabeledPointCloud cloud;
  for (size_t i = 0; i < count; ++i) {
    Vec3 p;
    int label = 0, ray = 0;
    f >> p[0] >> p[1] >> p[2] >> label >> ray;
    cloud.points.push_back(p);
    cloud.labels.push_back(label);
    cloud.ray_index.push_back(ray);
  }
  if (!f) throw std::runtime_error("ply: truncated file " + path);
  return cloud;
}

}  // namespace scg::lidar
