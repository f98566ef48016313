#include <catch2/catch_amalgamated.hpp>

#include "scg/victim.hpp"

using namespace scg;
using namespace scg::victim;
using lidar::Vec3;

namespace {

// Synthetic box-shaped cluster: points sprinkled on the visible faces of a
// vehicle-sized box.
std::vector<Vec3> box_cluster(double cx, double cy, double l, double w, double h, int n,
                              uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) {
    int face = static_cast<int>(rng.uniform_int(3));
    double x = rng.uniform(-l / 2, l / 2), y = rng.uniform(-w / 2, w / 2), z = rng.uniform(0.35, h);
    if (face == 0) x = l / 2;       // front face
    else if (face == 1) y = -w / 2; // side face
    else z = h;                     // roof
    pts.push_back({cx + x, cy + y, z});
  }
  return pts;
}

lidar::LabeledPointCloud cloud_of(const std::vector<Vec3>& pts, int label) {
  lidar::LabeledPointCloud c;
  c.points = pts;
  c.labels.assign(pts.size(), label);
  c.ray_index.resize(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) c.ray_index[i] = static_cast<int>(i);
  return c;
}

std::vector<Vec3> ground_patch(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) pts.push_back({rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(0.0, 0.05)});
  return pts;
}

}  // namespace

TEST_CASE("iou arithmetic") {
  CHECK(iou({1, 1, 0}, {1, 1, 0}, 1) == 1.0);
  CHECK(iou({1, 0, 0}, {0, 1, 1}, 1) == 0.0);
  CHECK(iou({1, 0, 0, 0}, {1, 1, 0, 0}, 1) == 0.5);
  CHECK(iou({0, 0}, {0, 0}, 1) == 1.0);  // empty union
  CHECK_THROWS_AS(iou({1}, {1, 0}, 1), std::invalid_argument);
  // symmetry
  Rng rng(3);
  std::vector<int> a(50), b(50);
  for (int i = 0; i < 50; ++i) {
    a[i] = rng.uniform_int(2);
    b[i] = rng.uniform_int(2);
  }
  CHECK(iou(a, b, 1) == iou(b, a, 1));
}

TEST_CASE("ground-only clouds produce no vehicle predictions") {
  auto pts = ground_patch(500, 5);
  for (const auto& v : default_victims()) {
    auto labels = segment(pts, v);
    for (int l : labels) CHECK(l == lidar::kBackgroundPoint);
  }
}

TEST_CASE("an isolated vehicle-sized cluster is labeled vehicle by the default victim") {
  auto pts = box_cluster(10, 0, 4.5, 1.8, 1.5, 200, 7);
  auto ground = ground_patch(300, 8);
  pts.insert(pts.end(), ground.begin(), ground.end());
  SegmenterParams v = default_victims()[0];
  auto labels = segment(pts, v);
  for (int i = 0; i < 200; ++i) CHECK(labels[i] == lidar::kVehiclePoint);
  for (size_t i = 200; i < pts.size(); ++i) CHECK(labels[i] == lidar::kBackgroundPoint);
}

TEST_CASE("an oversized cluster is rejected by the dimension gate") {
  auto pts = box_cluster(10, 0, 9.0, 2.0, 1.5, 300, 9);  // too long for any victim
  SegmenterParams v = default_victims()[0];
  auto labels = segment(pts, v);
  for (int l : labels) CHECK(l == lidar::kBackgroundPoint);
}

TEST_CASE("a point bridge narrower than the linkage radius merges two vehicles") {
  SegmenterParams v = default_victims()[0];
  auto a = box_cluster(10, 0, 4.5, 1.8, 1.5, 150, 11);
  auto b = box_cluster(10, 6.0, 4.5, 1.8, 1.5, 150, 12);
  std::vector<Vec3> bridge;
  for (int i = 0; i <= 6; ++i) bridge.push_back({10.0 - 0.0, i * 1.0, 1.0});
  // separated: both clusters pass the gate
  std::vector<Vec3> separated = a;
  separated.insert(separated.end(), b.begin(), b.end());
  auto labels_sep = segment(separated, v);
  int vehicle_sep = 0;
  for (int l : labels_sep) vehicle_sep += l == lidar::kVehiclePoint ? 1 : 0;
  CHECK(vehicle_sep == 300);
  // bridged: the merged cluster exceeds the dimension bounds and is dropped
  std::vector<Vec3> bridged = separated;
  bridged.insert(bridged.end(), bridge.begin(), bridge.end());
  auto labels_br = segment(bridged, v);
  int vehicle_br = 0;
  for (int l : labels_br) vehicle_br += l == lidar::kVehiclePoint ? 1 : 0;
  CHECK(vehicle_br == 0);  // the failure mode the attack exploits
}

TEST_CASE("segmentation is permutation-equivariant") {
  auto pts = box_cluster(8, -2, 4.5, 1.8, 1.5, 120, 13);
  auto ground = ground_patch(200, 14);
  pts.insert(pts.end(), ground.begin(), ground.end());
  SegmenterParams v = default_victims()[1];
  auto labels = segment(pts, v);

  std::vector<size_t> perm(pts.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(15);
  rng.shuffle(perm);
  std::vector<Vec3> shuffled(pts.size());
  for (size_t i = 0; i < perm.size(); ++i) shuffled[i] = pts[perm[i]];
  auto labels2 = segment(shuffled, v);
  for (size_t i = 0; i < perm.size(); ++i) CHECK(labels2[i] == labels[perm[i]]);
}

TEST_CASE("victims disagree on at least one fixture") {
  // a cluster sized to split the victim population: major extent 5.05 m sits
  // between V2's 5.0 limit and V1's 5.3 limit
  auto pts = box_cluster(12, 0, 5.05, 1.9, 1.5, 250, 16);
  auto victims = default_victims();
  std::vector<int> verdicts;
  for (const auto& v : victims) {
    auto labels = segment(pts, v);
    int count = 0;
    for (int l : labels) count += l == lidar::kVehiclePoint ? 1 : 0;
    verdicts.push_back(count > 0 ? 1 : 0);
  }
  bool all_same = true;
  for (int v : verdicts) all_same = all_same && v == verdicts[0];
  CHECK_FALSE(all_same);
}

TEST_CASE("victim parameter files round-trip") {
  for (const auto& v : default_victims()) {
    SegmenterParams back = victim_from_json(victim_to_json(v));
    CHECK(back.name == v.name);
    CHECK(back.linkage_radius == v.linkage_radius);
    CHECK(back.ext_hi == v.ext_hi);
    CHECK(back.min_cluster == v.min_cluster);
  }
  nlohmann::json bad = victim_to_json(default_victims()[0]);
  bad["min_cluster"] = 0;
  CHECK_THROWS(victim_from_json(bad));
}

TEST_CASE("point attack with zero budget leaves the cloud unchanged") {
  auto pts = box_cluster(10, 0, 4.5, 1.8, 1.5, 100, 21);
  auto cloud = cloud_of(pts, lidar::kVehiclePoint);
  auto res = point_attack(cloud, default_victims()[0], 0, 0.05, 3);
  CHECK(res.evals == 0);
  for (size_t i = 0; i < cloud.size(); ++i) CHECK(res.cloud.points[i] == cloud.points[i]);
}

TEST_CASE("point attack best-so-far IoU is non-increasing and tracks the curve") {
  auto pts = box_cluster(9, 1, 5.2, 1.9, 1.5, 150, 22);  // near the V1 gate edge
  auto ground = ground_patch(200, 23);
  pts.insert(pts.end(), ground.begin(), ground.end());
  lidar::LabeledPointCloud cloud;
  cloud.points = pts;
  cloud.labels.assign(pts.size(), lidar::kBackgroundPoint);
  for (int i = 0; i < 150; ++i) cloud.labels[i] = lidar::kVehiclePoint;
  cloud.ray_index.resize(pts.size());
  auto res = point_attack(cloud, default_victims()[0], 120, 0.05, 5);
  CHECK(res.evals == 120);
  double best = 1e300;
  for (double v : res.iou_curve) best = std::min(best, v);
  CHECK(res.best_iou == best);
}
