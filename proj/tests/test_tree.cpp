#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "scg/schema.hpp"
#include "scg/synthetic.hpp"

using namespace scg;

TEST_CASE("scene trees round-trip through the file format bit-exactly") {
  NodeSchema s = synthetic::box_schema();
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    SceneTree t = synthetic::gen_scene(rng);
    // salt some awkward doubles into the properties
    t.root.children[0].props.empty() ? void() : void(t.root.children[0].props[0] = 0.1 + 1e-17);
    nlohmann::json j = tree_to_json(t, s);
    std::string text = j.dump();
    SceneTree back = tree_from_json(nlohmann::json::parse(text), s);
    REQUIRE(back.node_count() == t.node_count());
    bool equal = true;
    walk(t, [&](const TreeNode& n, const std::vector<int>& path) {
      const TreeNode* o = back.at_path(path);
      if (!o || o->type != n.type || o->props != n.props) equal = false;
    });
    CHECK(equal);
  }
}

TEST_CASE("schema mismatch and malformed trees are rejected") {
  NodeSchema s = synthetic::box_schema();
  SceneTree t;
  t.schema_name = "box_scene";
  t.root.type = synthetic::kRoot;
  SECTION("arity mismatch") {
    // Root wants exactly one child
    CHECK_THROWS_AS(validate(t, s), std::invalid_argument);
  }
  SECTION("split ratio bounds") {
    TreeNode split{synthetic::kSplit, {0.0, 0.1}, {}};
    split.children.push_back({synthetic::kStop, {}, {}});
    split.children.push_back({synthetic::kStop, {}, {}});
    t.root.children.push_back(split);
    CHECK_THROWS_AS(validate(t, s), std::invalid_argument);
  }
  SECTION("unit slot bounds") {
    TreeNode plate{synthetic::kPlate, {0.5, 0.5, 1.4, 0.2}, {}};
    plate.children.push_back({synthetic::kStop, {}, {}});
    t.root.children.push_back(plate);
    CHECK_THROWS_AS(validate(t, s), std::invalid_argument);
  }
  SECTION("wrong schema name in file") {
    t.root.children.push_back({synthetic::kStop, {}, {}});
    nlohmann::json j = tree_to_json(t, s);
    j["schema"] = "other";
    CHECK_THROWS(tree_from_json(j, s));
  }
}

// Slicing the leaf-cell partition along any axis-aligned line must recover the
// full root extent: the 1-D stick-breaking conservation, applied per axis.
static void check_cell_conservation(const SceneTree& t, const NodeSchema& s, Rng& rng) {
  auto cells = leaf_cells(t, s);
  double area = 0.0;
  for (const auto& c : cells) area += c.cell.area();
  CHECK(std::abs(area - 1.0) < 1e-9);

  for (int probe = 0; probe < 4; ++probe) {
    double y0 = rng.uniform(0.01, 0.99);
    double sum_x = 0.0;
    for (const auto& c : cells)
      if (c.cell.y0 <= y0 && y0 < c.cell.y1) sum_x += c.cell.width();
    CHECK(std::abs(sum_x - 1.0) < 1e-9);

    double x0 = rng.uniform(0.01, 0.99);
    double sum_y = 0.0;
    for (const auto& c : cells)
      if (c.cell.x0 <= x0 && x0 < c.cell.x1) sum_y += c.cell.height();
    CHECK(std::abs(sum_y - 1.0) < 1e-9);
  }
}

TEST_CASE("leaf cells partition the root extent (stick-breaking conservation)") {
  NodeSchema s = synthetic::box_schema();
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    SceneTree t = synthetic::gen_scene(rng);
    check_cell_conservation(t, s, rng);
  }
}

TEST_CASE("generated scenes validate and cover the plate-count range") {
  NodeSchema s = synthetic::box_schema();
  auto data = synthetic::gen_dataset(1000, 0, synthetic::target_scene());
  REQUIRE(data.size() == 1000);
  std::vector<int> plate_hist(8, 0);
  for (const auto& t : data) {
    validate(t, s);
    int plates = type_histogram(t, s)[synthetic::kPlate];
    REQUIRE(plates < 8);
    ++plate_hist[plates];
  }
  // histogram covers {1, 2, 3}
  CHECK(plate_hist[1] > 0);
  CHECK(plate_hist[2] > 0);
  CHECK(plate_hist[3] > 0);
}

TEST_CASE("dataset generation is deterministic and embeds the target copies") {
  SceneTree target = synthetic::target_scene();
  auto a = synthetic::gen_dataset(50, 7, target);
  auto b = synthetic::gen_dataset(50, 7, target);
  REQUIRE(a.size() == b.size());
  NodeSchema s = synthetic::box_schema();
  int copies = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(tree_to_json(a[i], s).dump() == tree_to_json(b[i], s).dump());
    if (tree_to_json(a[i], s).dump() == tree_to_json(target, s).dump()) ++copies;
  }
  CHECK(copies == 10);
}

TEST_CASE("all-copies dataset contains only the target") {
  SceneTree target = synthetic::target_scene();
  NodeSchema s = synthetic::box_schema();
  auto data = synthetic::gen_dataset(10, 3, target, 10);
  std::string want = tree_to_json(target, s).dump();
  for (const auto& t : data) CHECK(tree_to_json(t, s).dump() == want);
}

TEST_CASE("target scene satisfies its own knowledge rules") {
  SceneTree target = synthetic::target_scene();
  NodeSchema s = synthetic::box_schema();
  validate(target, s);
  auto audit = synthetic::audit_scene(target);
  CHECK(audit.plates == 2);
  CHECK(audit.worst_color_spread == 0.0);
  CHECK(audit.worst_centroid_dist <= 0.15);
}
