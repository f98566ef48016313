#include <catch2/catch_amalgamated.hpp>

#include "scg/lidar.hpp"

using namespace scg;
using namespace scg::lidar;

TEST_CASE("ray-triangle: textbook hit and parallel miss") {
  Vec3 a{-1, -1, -1}, b{1, -1, -1}, c{0, 1, -1};
  auto t = ray_triangle({0, 0, 0}, {0, 0, -1}, a, b, c);
  REQUIRE(t.has_value());
  CHECK(*t == Catch::Approx(1.0).epsilon(1e-14));

  // ray parallel to the triangle plane
  CHECK_FALSE(ray_triangle({0, 0, 0}, {1, 0, 0}, a, b, c).has_value());
  // behind the origin
  CHECK_FALSE(ray_triangle({0, 0, -2}, {0, 0, -1}, a, b, c).has_value());
}

// Independent oracle: plane intersection + barycentric coordinates via signed
// areas, no shared code with the Moller-Trumbore implementation.
static std::optional<double> brute_force_hit(const Vec3& o, const Vec3& d, const Vec3& a,
                                             const Vec3& b, const Vec3& c) {
  Vec3 n = cross3(b - a, c - a);
  double denom = dot3(n, d);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  double t = dot3(n, a - o) / denom;
  if (t <= 1e-6) return std::nullopt;
  Vec3 p = o + d * t;
  double area = dot3(n, n);
  double w0 = dot3(cross3(b - p, c - p), n) / area;
  double w1 = dot3(cross3(c - p, a - p), n) / area;
  double w2 = dot3(cross3(a - p, b - p), n) / area;
  if (w0 < 0 || w1 < 0 || w2 < 0) return std::nullopt;
  return t;
}

TEST_CASE("10^4 random ray/triangle pairs agree with the brute-force oracle") {
  Rng rng(123);
  auto rand_vec = [&](double s) { return Vec3{rng.uniform(-s, s), rng.uniform(-s, s), rng.uniform(-s, s)}; };
  int checked = 0, agreements = 0;
  while (checked < 10000) {
    Vec3 a = rand_vec(3), b = rand_vec(3), c = rand_vec(3);
    Vec3 o = rand_vec(5);
    Vec3 d = rand_vec(1);
    double n = std::sqrt(dot3(d, d));
    if (n < 1e-6) continue;
    d = d * (1.0 / n);
    // borderline filter: skip nearly degenerate configurations
    Vec3 e1 = b - a, e2 = c - a;
    if (std::abs(dot3(e1, cross3(d, e2))) < 1e-9) continue;
    ++checked;
    auto mt = ray_triangle(o, d, a, b, c);
    auto bf = brute_force_hit(o, d, a, b, c);
    bool agree = mt.has_value() == bf.has_value() &&
                 (!mt || std::abs(*mt - *bf) < 1e-6 * std::max(1.0, *bf));
    agreements += agree ? 1 : 0;
  }
  CHECK(agreements == checked);
}

TEST_CASE("raycast with no meshes misses everywhere") {
  BeamPattern p;
  p.channels = 4;
  p.azimuth_step = 10.0 * traffic::kPi / 180.0;
  auto hits = raycast({}, p);
  for (const auto& h : hits) CHECK_FALSE(h.valid());
}

TEST_CASE("a box ahead is hit at a distance bounded by its extent") {
  BeamPattern p;
  p.channels = 8;
  p.elev_lo = -5.0 * traffic::kPi / 180.0;
  p.elev_hi = 2.0 * traffic::kPi / 180.0;
  p.azimuth_step = 1.0 * traffic::kPi / 180.0;
  auto box = box_mesh(10.0, 0.0, 0.0, 4.5, 1.8, 1.5, 1);
  auto hits = raycast({box}, p);
  bool any = false;
  for (int r = 0; r < p.ray_count(); ++r) {
    if (!hits[r].valid()) continue;
    any = true;
    CHECK(hits[r].t >= 10.0 - 2.25);
    CHECK(hits[r].t <= 10.0 + 2.25 + 1.0);
  }
  CHECK(any);
}

TEST_CASE("nested boxes report the outer surface") {
  BeamPattern p;
  p.channels = 4;
  p.elev_lo = -3.0 * traffic::kPi / 180.0;
  p.elev_hi = 0.0;
  p.azimuth_step = 2.0 * traffic::kPi / 180.0;
  auto outer = box_mesh(12.0, 0.0, 0.0, 6.0, 3.0, 2.0, 1);
  auto inner = box_mesh(12.0, 0.0, 0.0, 2.0, 1.0, 1.0, 1);
  auto both = raycast({inner, outer}, p);
  auto only_outer = raycast({outer}, p);
  for (int r = 0; r < p.ray_count(); ++r) {
    CHECK(both[r].valid() == only_outer[r].valid());
    if (both[r].valid()) CHECK(both[r].t == only_outer[r].t);
  }
}

TEST_CASE("composite obeys nearest-return occlusion and conservation") {
  BeamPattern p;
  p.channels = 16;
  p.azimuth_step = 2.0 * traffic::kPi / 180.0;
  traffic::RoadLayout layout = traffic::intersection_layout();
  BackgroundRangeImage bg = make_background(layout, p, 5);

  SECTION("no vehicles reproduces the background cloud") {
    auto cloud = composite(bg, std::vector<RayHit>(p.ray_count()), p);
    for (size_t i = 0; i < cloud.size(); ++i) {
      CHECK(cloud.labels[i] == kBackgroundPoint);
      CHECK(bg.ranges[cloud.ray_index[i]] <= p.max_range);
    }
    int finite = 0;
    for (double r : bg.ranges) finite += r <= p.max_range ? 1 : 0;
    CHECK(static_cast<int>(cloud.size()) == finite);
  }

  SECTION("vehicle behind the background surface stays occluded") {
    // vehicle far behind the first building wall on some rays: composite must
    // keep whichever return is nearer, so no vehicle point may be farther
    // than its ray's background range
    traffic::VehicleInstance v;
    v.x = 30.0;
    v.y = 0.0;
    v.theta = 0.0;
    auto cloud = render_scene({v}, bg, p);
    for (size_t i = 0; i < cloud.size(); ++i) {
      double range = std::sqrt(dot3(cloud.points[i] - p.origin(), cloud.points[i] - p.origin()));
      if (cloud.labels[i] == kVehiclePoint) CHECK(range <= bg.ranges[cloud.ray_index[i]] + 1e-9);
    }
  }

  SECTION("conservation: emitted points + dropped rays = total rays") {
    traffic::VehicleInstance v;
    v.x = 15.0;
    auto cloud = render_scene({v}, bg, p);
    int dropped = 0;
    std::vector<bool> seen(p.ray_count(), false);
    for (int idx : cloud.ray_index) seen[idx] = true;
    for (int r = 0; r < p.ray_count(); ++r) dropped += seen[r] ? 0 : 1;
    CHECK(static_cast<int>(cloud.size()) + dropped == p.ray_count());
  }
}

TEST_CASE("vehicle point count approximates the angular-footprint estimate") {
  BeamPattern p;  // default 32 x 720 pattern
  BackgroundRangeImage bg;
  bg.channels = p.channels;
  bg.azimuth_steps = p.azimuth_steps();
  bg.ranges.assign(p.ray_count(), kInf);  // empty background, vehicle only
  traffic::VehicleInstance v;
  v.x = 10.0;
  v.y = 0.0;
  v.theta = traffic::kPi / 2.0;  // broadside: width faces the sensor
  v.length = 4.5;
  v.width = 1.8;
  v.height = 1.5;
  auto cloud = render_scene({v}, bg, p);
  int vehicle_points = 0;
  for (int l : cloud.labels) vehicle_points += l == kVehiclePoint ? 1 : 0;

  // analytic estimate: azimuth span of the facing side over the azimuth step,
  // times the number of channels whose elevation hits the box face
  double near_face = 10.0 - 1.8 / 2.0;
  double az_span = 2.0 * std::atan((4.5 / 2.0) / near_face);
  double expected_az = az_span / p.azimuth_step;
  int elev_hits = 0;
  for (int ch = 0; ch < p.channels; ++ch) {
    double elev = p.elev_lo + (p.elev_hi - p.elev_lo) * ch / (p.channels - 1);
    double z = p.origin_height + near_face * std::tan(elev);
    if (z >= 0.0 && z <= 1.5) ++elev_hits;
  }
  double estimate = expected_az * elev_hits;
  INFO("points " << vehicle_points << " estimate " << estimate);
  CHECK(vehicle_points >= estimate * 0.9);
  CHECK(vehicle_points <= estimate * 1.1);
}

TEST_CASE("identical inputs give bit-identical clouds, and range gates apply") {
  BeamPattern p;
  p.channels = 8;
  p.azimuth_step = 3.0 * traffic::kPi / 180.0;
  traffic::RoadLayout layout = traffic::highway_layout();
  BackgroundRangeImage bg = make_background(layout, p, 9);
  traffic::VehicleInstance v;
  v.x = 20.0;
  auto a = render_scene({v}, bg, p);
  auto b = render_scene({v}, bg, p);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a.points[i] == b.points[i]);
    CHECK(a.labels[i] == b.labels[i]);
  }

  // moving the vehicle beyond max range removes its points
  traffic::VehicleInstance far = v;
  far.x = p.max_range + 50.0;
  auto c = render_scene({far}, bg, p);
  for (int l : c.labels) CHECK(l == kBackgroundPoint);
}

TEST_CASE("every vehicle point lies on the box surface") {
  BeamPattern p;
  p.channels = 16;
  p.azimuth_step = 1.0 * traffic::kPi / 180.0;
  BackgroundRangeImage bg;
  bg.channels = p.channels;
  bg.azimuth_steps = p.azimuth_steps();
  bg.ranges.assign(p.ray_count(), kInf);
  traffic::VehicleInstance v;
  v.x = 12.0;
  v.y = 3.0;
  v.theta = 0.7;
  auto cloud = render_scene({v}, bg, p);
  REQUIRE(cloud.size() > 0);
  // point-to-box-surface distance oracle in the box frame
  double c = std::cos(v.theta), s = std::sin(v.theta);
  for (size_t i = 0; i < cloud.size(); ++i) {
    double dx = cloud.points[i][0] - v.x, dy = cloud.points[i][1] - v.y;
    double lx = c * dx + s * dy, ly = -s * dx + c * dy, lz = cloud.points[i][2];
    double ax = std::abs(lx) - v.length / 2.0;
    double ay = std::abs(ly) - v.width / 2.0;
    double az = std::max(-lz, lz - v.height);
    double outside = std::max({ax, ay, az});
    CHECK(std::abs(outside) < 1e-6);
  }
}

TEST_CASE("background range image and PLY files round-trip") {
  BeamPattern p;
  p.channels = 6;
  p.azimuth_step = 6.0 * traffic::kPi / 180.0;
  BackgroundRangeImage bg = make_background(traffic::intersection_layout(), p, 17);
  save_background(bg, "bg_rt.bin");
  BackgroundRangeImage back = load_background("bg_rt.bin");
  REQUIRE(back.ranges.size() == bg.ranges.size());
  for (size_t i = 0; i < bg.ranges.size(); ++i) {
    if (std::isinf(bg.ranges[i]))
      CHECK(std::isinf(back.ranges[i]));
    else
      CHECK(back.ranges[i] == bg.ranges[i]);
  }
  std::remove("bg_rt.bin");

  traffic::VehicleInstance v;
  v.x = 14.0;
  auto cloud = render_scene({v}, bg, p);
  save_ply(cloud, "cloud_rt.ply");
  auto back_cloud = load_ply("cloud_rt.ply");
  REQUIRE(back_cloud.size() == cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    CHECK(back_cloud.points[i] == cloud.points[i]);
    CHECK(back_cloud.labels[i] == cloud.labels[i]);
    CHECK(back_cloud.ray_index[i] == cloud.ray_index[i]);
  }
  std::remove("cloud_rt.ply");
}

TEST_CASE("composite rejects misaligned inputs") {
  BeamPattern p;
  p.channels = 4;
  p.azimuth_step = 10.0 * traffic::kPi / 180.0;
  BackgroundRangeImage bg;
  bg.channels = 3;  // wrong
  bg.azimuth_steps = p.azimuth_steps();
  bg.ranges.assign(static_cast<size_t>(3) * p.azimuth_steps(), kInf);
  CHECK_THROWS_AS(composite(bg, std::vector<RayHit>(p.ray_count()), p),
                  std::invalid_argument);
}
