#pragma once

// Traffic scenes: road layouts, the traffic schema, procedural dataset
// generation, scene -> world instancing, knowledge rules, and the audit.
//
// Schema: Root -> division over Roads; Road(origin, heading, width, length)
// -> division over Lanes; Lane(lateral offset, reverse flag) -> division over
// Vehicles; Vehicle(s along lane, lateral jitter, heading offset, dims).
// Linear properties are stored normalized (slot scales map them to meters /
// radians) so every regression target sits near unit magnitude.
//
// Knowledge rules:
//   road_pin        - pin each Road node to the nearest layout road
//   lane_pin        - pin Lane children of a Road to the matched road's lanes
//   lane_heading    - vehicles follow their lane: heading offset -> 0
//   vehicle_spacing - per-road gathering within a radius + scene-wide
//                     minimum gaps, solved to a fixpoint

#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <vector>

#include "json.hpp"
#include "scg/knowledge.hpp"
#include "scg/rng.hpp"
#include "scg/tvae.hpp"

namespace scg::traffic {

constexpr double kPi = 3.14159265358979323846;

// world scales per linear slot
constexpr double kPosScale = 60.0;     // road origin x/y
constexpr double kHeadingScale = kPi;  // road heading
constexpr double kWidthScale = 20.0;   // road width
constexpr double kLengthScale = 120.0; // road length and vehicle s
constexpr double kLatScale = 10.0;     // lane lateral offset
constexpr double kJitterScale = 1.0;   // vehicle lateral jitter
constexpr double kDthetaScale = 0.35;  // vehicle heading offset (rad)
constexpr double kVehLenScale = 6.0;
constexpr double kVehWidScale = 2.5;
constexpr double kVehHgtScale = 2.0;

struct LaneSpec {
  double offset = 0.0;  // lateral, meters; positive = left of heading
  bool reverse = false;
};

struct RoadSpec {
  double ox = 0.0, oy = 0.0;  // center of the segment
  double heading = 0.0;       // radians
  double width = 14.0;
  double length = 100.0;
  std::vector<LaneSpec> lanes;
};

struct RoadLayout {
  std::string name;
  std::vector<RoadSpec> roads;
};

inline RoadLayout intersection_layout() {
  RoadLayout l;
  l.name = "intersection";
  RoadSpec ew;
  ew.heading = 0.0;
  ew.width = 14.0;
  ew.length = 100.0;
  ew.lanes = {{-3.5, false}, {3.5, true}};
  RoadSpec ns = ew;
  ns.heading = kPi / 2.0;
  l.roads = {ew, ns};
  return l;
}

inline RoadLayout highway_layout() {
  RoadLayout l;
  l.name = "highway";
  RoadSpec r;
  r.heading = 0.0;
  r.width = 18.0;
  r.length = 120.0;
  r.lanes = {{-6.75, false}, {-2.25, false}, {2.25, true}, {6.75, true}};
  l.roads = {r};
  return l;
}

inline nlohmann::json layout_to_json(const RoadLayout& l) {
  nlohmann::json j;
  j["format"] = "road-layout";
  j["version"] = 1;
  j["name"] = l.name;
  j["roads"] = nlohmann::json::array();
  for (const auto& r : l.roads) {
    nlohmann::json jr;
    jr["origin"] = {r.ox, r.oy};
    jr["heading"] = r.heading;
    jr["width"] = r.width;
    jr["length"] = r.length;
    jr["lanes"] = nlohmann::json::array();
    for (const auto& lane : r.lanes) jr["lanes"].push_back({{"offset", lane.offset}, {"reverse", lane.reverse}});
    j["roads"].push_back(std::move(jr));
  }
  return j;
}

inline RoadLayout layout_from_json(const nlohmann::json& j) {
  if (j.at("format") != "road-layout") throw std::runtime_error("road-layout: bad format tag");
  if (j.at("version").get<int>() != 1) throw std::runtime_error("road-layout: unsupported version");
  RoadLayout l;
  l.name = j.at("name").get<std::string>();
  for (const auto& jr : j.at("roads")) {
    RoadSpec r;
    r.ox = jr.at("origin")[0].get<double>();
    r.oy = jr.at("origin")[1].get<double>();
    r.heading = jr.at("heading").get<double>();
    r.width = jr.at("width").get<double>();
    r.length = jr.at("length").get<double>();
    if (r.width <= 0 || r.length <= 0) throw std::runtime_error("road-layout: non-positive extent");
    for (const auto& jl : jr.at("lanes")) {
      LaneSpec lane;
      lane.offset = jl.at("offset").get<double>();
      lane.reverse = jl.at("reverse").get<bool>();
      if (std::abs(lane.offset) > r.width / 2.0)
        throw std::runtime_error("road-layout: lane outside road width");
      r.lanes.push_back(lane);
    }
    l.roads.push_back(std::move(r));
  }
  return l;
}

inline void save_layout(const RoadLayout& l, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("road-layout: cannot open " + path);
  f << layout_to_json(l).dump(2) << "\n";
}

inline RoadLayout load_layout(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("road-layout: cannot open " + path);
  nlohmann::json j;
  f >> j;
  return layout_from_json(j);
}

// --- schema --------------------------------------------------------------------------

enum TrafficType { kRoot = 0, kSplit = 1, kRoad = 2, kLane = 3, kVehicle = 4, kStop = 5 };

inline NodeSchema traffic_schema() {
  NodeSchema s;
  s.name = "traffic_scene";
  s.types = {
      {0, "Root", 1, {}, {}, {}},
      {1, "Split", 2, {"alpha", "axis"}, {SlotKind::Unit, SlotKind::Unit}, {1, 1}},
      {2,
       "Road",
       1,
       {"ox", "oy", "heading", "width", "length"},
       {SlotKind::Linear, SlotKind::Linear, SlotKind::Linear, SlotKind::Linear, SlotKind::Linear},
       {kPosScale, kPosScale, kHeadingScale, kWidthScale, kLengthScale}},
      {3,
       "Lane",
       1,
       {"lat", "reverse"},
       {SlotKind::Linear, SlotKind::Unit},
       {kLatScale, 1}},
      {4,
       "Vehicle",
       0,
       {"s", "jitter", "dtheta", "len", "wid", "hgt"},
       {SlotKind::Linear, SlotKind::Linear, SlotKind::Linear, SlotKind::Linear, SlotKind::Linear,
        SlotKind::Linear},
       {kLengthScale, kJitterScale, kDthetaScale, kVehLenScale, kVehWidScale, kVehHgtScale}},
      {5, "Stop", 0, {}, {}, {}},
  };
  s.root_type = 0;
  s.stop_type = 5;
  s.split_type = 1;
  s.max_depth = 18;
  return s;
}

// --- instancing -----------------------------------------------------------------------

struct VehicleInstance {
  double x = 0, y = 0, theta = 0;
  double dtheta = 0;  // heading offset from the lane direction
  double length = 4.5, width = 1.8, height = 1.5;
  bool clamped = false;
  int road_ordinal = -1;  // index of the Road node in tree order
  std::vector<int> path;  // tree path of the Vehicle node
};

struct RoadFrame {
  double ox, oy, heading, width, length;
  double dx() const { return std::cos(heading); }
  double dy() const { return std::sin(heading); }
};

inline RoadFrame road_frame(const TreeNode& road) {
  return {road.props[0] * kPosScale, road.props[1] * kPosScale, road.props[2] * kHeadingScale,
          road.props[3] * kWidthScale, road.props[4] * kLengthScale};
}

struct LaneFrame {
  // start point of the lane's center line plus direction
  double sx, sy, dirx, diry, dir_angle, length, lat;
};

inline LaneFrame lane_frame(const RoadFrame& r, const TreeNode& lane) {
  double lat = lane.props[0] * kLatScale;
  bool reverse = lane.props[1] >= 0.5;
  double px = -r.dy(), py = r.dx();  // left normal
  double cx = r.ox + px * lat, cy = r.oy + py * lat;
  double dir = reverse ? r.heading + kPi : r.heading;
  double ddx = std::cos(dir), ddy = std::sin(dir);
  // s runs from the lane start regardless of direction
  double sx = cx - ddx * r.length / 2.0, sy = cy - ddy * r.length / 2.0;
  return {sx, sy, ddx, ddy, dir, r.length, lat};
}

inline VehicleInstance vehicle_instance(const LaneFrame& lf, const TreeNode& v) {
  VehicleInstance out;
  double s = v.props[0] * kLengthScale;
  double jitter = v.props[1] * kJitterScale;
  double dtheta = v.props[2] * kDthetaScale;
  if (s < 0.0 || s > lf.length) {
    s = std::min(lf.length, std::max(0.0, s));
    out.clamped = true;
  }
  double px = -lf.diry, py = lf.dirx;
  out.x = lf.sx + lf.dirx * s + px * jitter;
  out.y = lf.sy + lf.diry * s + py * jitter;
  out.theta = lf.dir_angle + dtheta;
  out.dtheta = dtheta;
  out.length = v.props[3] * kVehLenScale;
  out.width = v.props[4] * kVehWidScale;
  out.height = v.props[5] * kVehHgtScale;
  return out;
}

// Every Vehicle under a Lane under a Road is materialized; nodes outside that
// chain are ignored.
inline std::vector<VehicleInstance> instantiate(const SceneTree& tree, const RoadLayout&) {
  std::vector<VehicleInstance> out;
  int road_count = 0;
  std::function<void(const TreeNode&, std::vector<int>&, const RoadFrame*, const LaneFrame*, int)>
      rec = [&](const TreeNode& n, std::vector<int>& path, const RoadFrame* road,
                const LaneFrame* lane, int road_ord) {
        RoadFrame rf;
        LaneFrame lf;
        if (n.type == kRoad) {
          rf = road_frame(n);
          road = &rf;
          lane = nullptr;
          road_ord = road_count++;
        } else if (n.type == kLane && road) {
          lf = lane_frame(*road, n);
          lane = &lf;
        } else if (n.type == kVehicle && lane) {
          VehicleInstance vi = vehicle_instance(*lane, n);
          vi.path = path;
          vi.road_ordinal = road_ord;
          out.push_back(std::move(vi));
        }
        for (int i = 0; i < static_cast<int>(n.children.size()); ++i) {
          path.push_back(i);
          rec(n.children[i], path, road, lane, road_ord);
          path.pop_back();
        }
      };
  std::vector<int> path;
  rec(tree.root, path, nullptr, nullptr, -1);
  return out;
}

// --- generator ------------------------------------------------------------------------

struct TrafficDataset {
  std::vector<SceneTree> trees;
  std::vector<std::vector<VehicleInstance>> poses;  // generator ground truth
};

namespace detail {

// Canonical right-leaning chain, Stop-terminated; the shape carries only the
// item count.
template <class Fill>
inline TreeNode division_chain(size_t count, Rng& rng, Fill&& fill) {
  if (count == 0) return TreeNode{kStop, {}, {}};
  TreeNode n;
  n.type = kSplit;
  n.props = {rng.uniform(0.3, 0.7), rng.uniform() < 0.5 ? 0.1 : 0.9};
  n.children.push_back(fill());
  n.children.push_back(division_chain(count - 1, rng, fill));
  return n;
}

inline std::vector<double> sample_positions(int k, double length, double min_gap, Rng& rng) {
  std::vector<double> s(k);
  for (int attempt = 0; attempt < 200; ++attempt) {
    for (int i = 0; i < k; ++i) s[i] = rng.uniform(2.0, length - 2.0);
    std::sort(s.begin(), s.end());
    bool ok = true;
    for (int i = 1; i < k; ++i) ok = ok && s[i] - s[i - 1] >= min_gap;
    if (ok) return s;
  }
  // dense lane fallback: spread evenly
  for (int i = 0; i < k; ++i) s[i] = 2.0 + (length - 4.0) * (i + 0.5) / k;
  return s;
}

}  // namespace detail

inline TrafficDataset gen_traffic_dataset(const RoadLayout& layout, int n, uint64_t seed) {
  if (layout.roads.empty()) throw std::invalid_argument("gen_traffic_dataset: empty layout");
  Rng rng = Rng::substream(seed, "dataset");
  TrafficDataset out;
  for (int i = 0; i < n; ++i) {
    SceneTree t;
    t.schema_name = "traffic_scene";
    t.root.type = kRoot;
    std::vector<TreeNode> roads;
    std::vector<VehicleInstance> truth;  // computed from the sampled world values
    int road_ord = 0;
    for (const auto& rs : layout.roads) {
      TreeNode road{kRoad,
                    {rs.ox / kPosScale, rs.oy / kPosScale, rs.heading / kHeadingScale,
                     rs.width / kWidthScale, rs.length / kLengthScale},
                    {}};
      std::vector<TreeNode> lanes;
      for (const auto& ls : rs.lanes) {
        TreeNode lane{kLane, {ls.offset / kLatScale, ls.reverse ? 1.0 : 0.0}, {}};
        int k = rng.poisson(2.0, 5);
        std::vector<TreeNode> vehicles;
        if (k > 0) {
          auto s = detail::sample_positions(k, rs.length, 5.0, rng);
          for (int v = 0; v < k; ++v) {
            double jitter = std::clamp(rng.normal(0.0, 0.15), -0.45, 0.45);
            double dtheta = std::clamp(rng.normal(0.0, 5.0 * kPi / 180.0), -0.26, 0.26);
            double len = std::clamp(rng.normal(4.6, 0.5), 3.4, 6.0);
            double wid = std::clamp(rng.normal(1.85, 0.15), 1.5, 2.3);
            double hgt = std::clamp(rng.normal(1.6, 0.15), 1.25, 2.0);
            vehicles.push_back({kVehicle,
                                {s[v] / kLengthScale, jitter / kJitterScale, dtheta / kDthetaScale,
                                 len / kVehLenScale, wid / kVehWidScale, hgt / kVehHgtScale},
                                {}});
            // ground truth straight from the samples, no tree involved
            double dir = ls.reverse ? rs.heading + kPi : rs.heading;
            double ddx = std::cos(dir), ddy = std::sin(dir);
            double lx = rs.ox - std::sin(rs.heading) * ls.offset - ddx * rs.length / 2.0;
            double ly = rs.oy + std::cos(rs.heading) * ls.offset - ddy * rs.length / 2.0;
            VehicleInstance vi;
            vi.x = lx + ddx * s[v] - ddy * jitter;
            vi.y = ly + ddy * s[v] + ddx * jitter;
            vi.theta = dir + dtheta;
            vi.dtheta = dtheta;
            vi.length = len;
            vi.width = wid;
            vi.height = hgt;
            vi.road_ordinal = road_ord;
            truth.push_back(vi);
          }
        }
        size_t next = 0;
        lane.children.push_back(
            detail::division_chain(vehicles.size(), rng, [&]() { return vehicles[next++]; }));
        lanes.push_back(std::move(lane));
      }
      size_t next = 0;
      road.children.push_back(
          detail::division_chain(lanes.size(), rng, [&]() { return lanes[next++]; }));
      roads.push_back(std::move(road));
      ++road_ord;
    }
    size_t next = 0;
    t.root.children.push_back(
        detail::division_chain(roads.size(), rng, [&]() { return roads[next++]; }));
    out.poses.push_back(std::move(truth));
    out.trees.push_back(std::move(t));
  }
  return out;
}

// --- knowledge rules -------------------------------------------------------------------

namespace detail {

inline const RoadSpec& nearest_road(const RoadLayout& layout, const RoadFrame& rf) {
  size_t best = 0;
  double best_d = 1e300;
  for (size_t i = 0; i < layout.roads.size(); ++i) {
    const RoadSpec& r = layout.roads[i];
    double dh = std::remainder(r.heading - rf.heading, 2.0 * kPi);
    double d = std::hypot(r.ox - rf.ox, r.oy - rf.oy) + 10.0 * std::abs(dh);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return layout.roads[best];
}

inline void collect_typed(const TreeNode& n, std::vector<int>& path, int type,
                          std::vector<std::pair<const TreeNode*, std::vector<int>>>& out) {
  if (n.type == type) out.emplace_back(&n, path);
  for (int i = 0; i < static_cast<int>(n.children.size()); ++i) {
    path.push_back(i);
    collect_typed(n.children[i], path, type, out);
    path.pop_back();
  }
}

}  // namespace detail

// Rule 1a: every Road node pins its parameters to the nearest layout road.
inline std::shared_ptr<Rule> rule_road_pin(RoadLayout layout, double weight = 1.0) {
  NodeSelector road_sel;
  road_sel.types = {kRoad};
  return std::make_shared<NodeRule>(
      "road_pin", road_sel,
      [layout](const TreeNode& n, const std::vector<int>&) {
        const RoadSpec& r = detail::nearest_road(layout, road_frame(n));
        return std::vector<SlotTarget>{{0, r.ox / kPosScale},
                                       {1, r.oy / kPosScale},
                                       {2, r.heading / kHeadingScale},
                                       {3, r.width / kWidthScale},
                                       {4, r.length / kLengthScale}};
      },
      weight);
}

// Rule 1b: Lane descendants of a Road pin to the matched road's nearest lane.
inline std::shared_ptr<Rule> rule_lane_pin(RoadLayout layout, double weight = 1.0) {
  NodeSelector road_sel;
  road_sel.types = {kRoad};
  return std::make_shared<EdgeRule>(
      "lane_pin", road_sel,
      [layout](const TreeNode& road, const std::vector<int>& road_path, const NodeSchema&,
               std::vector<NodeTarget>& out) {
        const RoadSpec& r = detail::nearest_road(layout, road_frame(road));
        if (r.lanes.empty()) return;
        std::vector<std::pair<const TreeNode*, std::vector<int>>> lanes;
        std::vector<int> path = road_path;
        detail::collect_typed(road, path, kLane, lanes);
        for (auto& [lane, lpath] : lanes) {
          double lat = lane->props[0] * kLatScale;
          size_t best = 0;
          for (size_t i = 1; i < r.lanes.size(); ++i)
            if (std::abs(r.lanes[i].offset - lat) < std::abs(r.lanes[best].offset - lat)) best = i;
          NodeTarget t;
          t.path = lpath;
          t.props.push_back({0, r.lanes[best].offset / kLatScale});
          t.props.push_back({1, r.lanes[best].reverse ? 1.0 : 0.0});
          out.push_back(std::move(t));
        }
      },
      weight);
}

// Rule 2: vehicles follow the lane direction; heading offset targets zero.
inline std::shared_ptr<Rule> rule_lane_heading(double weight = 1.0) {
  NodeSelector lane_sel;
  lane_sel.types = {kLane};
  return std::make_shared<EdgeRule>(
      "lane_heading", lane_sel,
      [](const TreeNode& lane, const std::vector<int>& lane_path, const NodeSchema&,
         std::vector<NodeTarget>& out) {
        std::vector<std::pair<const TreeNode*, std::vector<int>>> vehicles;
        std::vector<int> path = lane_path;
        detail::collect_typed(lane, path, kVehicle, vehicles);
        for (auto& [v, vpath] : vehicles) {
          if (v->props[2] == 0.0) continue;
          NodeTarget t;
          t.path = vpath;
          t.props.push_back({2, 0.0});
          out.push_back(std::move(t));
        }
      },
      weight);
}

// Rule 3: per-road gathering within `gather_radius` plus scene-wide minimum
// gaps of `gap_min`, solved jointly to a fixpoint over the s coordinates;
// separation takes precedence on conflict.
inline std::shared_ptr<Rule> rule_vehicle_spacing(double gap_min = 4.0, double gather_radius = 25.0,
                                                  double weight = 1.0) {
  if (gap_min >= gather_radius)
    throw std::invalid_argument("rule_vehicle_spacing: gap_min must be below gather_radius");
  NodeSelector root_sel;
  root_sel.types = {kRoot};
  return std::make_shared<EdgeRule>(
      "vehicle_spacing", root_sel,
      [gap_min, gather_radius](const TreeNode& root, const std::vector<int>& root_path,
                               const NodeSchema&, std::vector<NodeTarget>& out) {
        struct Item {
          std::vector<int> path;
          LaneFrame lane;
          int road_id;
          double s;
          double s0;
          double jitter;
        };
        std::vector<Item> items;
        int road_id = -1;
        std::function<void(const TreeNode&, std::vector<int>&, const RoadFrame*, const LaneFrame*)>
            rec = [&](const TreeNode& n, std::vector<int>& path, const RoadFrame* road,
                      const LaneFrame* lane) {
              RoadFrame rf;
              LaneFrame lf;
              if (n.type == kRoad) {
                rf = road_frame(n);
                road = &rf;
                lane = nullptr;
                ++road_id;
              } else if (n.type == kLane && road) {
                lf = lane_frame(*road, n);
                lane = &lf;
              } else if (n.type == kVehicle && lane) {
                double s = std::clamp(n.props[0] * kLengthScale, 0.0, lane->length);
                items.push_back({path, *lane, road_id, s, n.props[0] * kLengthScale,
                                 n.props[1] * kJitterScale});
              }
              for (int i = 0; i < static_cast<int>(n.children.size()); ++i) {
                path.push_back(i);
                rec(n.children[i], path, road, lane);
                path.pop_back();
              }
            };
        std::vector<int> path = root_path;
        rec(root, path, nullptr, nullptr);
        if (items.empty()) return;

        auto pos = [&](const Item& it) {
          double px = -it.lane.diry, py = it.lane.dirx;
          return std::pair<double, double>{it.lane.sx + it.lane.dirx * it.s + px * it.jitter,
                                           it.lane.sy + it.lane.diry * it.s + py * it.jitter};
        };

        for (int iter = 0; iter < 120; ++iter) {
          bool moved = false;
          // gather per road group
          for (int rid = 0; rid <= road_id; ++rid) {
            double cx = 0, cy = 0;
            int cnt = 0;
            for (const auto& it : items)
              if (it.road_id == rid) {
                auto [x, y] = pos(it);
                cx += x;
                cy += y;
                ++cnt;
              }
            if (cnt < 2) continue;
            cx /= cnt;
            cy /= cnt;
            for (auto& it : items) {
              if (it.road_id != rid) continue;
              auto [x, y] = pos(it);
              double d = std::hypot(x - cx, y - cy);
              if (d > gather_radius) {
                double tx = cx + (x - cx) * gather_radius / d;
                double ty = cy + (y - cy) * gather_radius / d;
                // project the clamped point back onto the lane's s axis
                double s = (tx - it.lane.sx) * it.lane.dirx + (ty - it.lane.sy) * it.lane.diry;
                s = std::clamp(s, 0.0, it.lane.length);
                if (std::abs(s - it.s) > 1e-12) {
                  it.s = s;
                  moved = true;
                }
              }
            }
          }
          // separation, scene-wide; runs after gathering so it wins conflicts
          for (size_t i = 0; i < items.size(); ++i)
            for (size_t j = i + 1; j < items.size(); ++j) {
              auto [xi, yi] = pos(items[i]);
              auto [xj, yj] = pos(items[j]);
              double d = std::hypot(xi - xj, yi - yj);
              if (d >= gap_min) continue;
              double need = (gap_min - d) / 2.0 + 1e-6;
              // move each along its own lane away from the other
              auto push = [&](Item& it, double ox, double oy) {
                double dirsign = (pos(it).first - ox) * it.lane.dirx +
                                 (pos(it).second - oy) * it.lane.diry;
                if (std::abs(dirsign) < 1e-12) dirsign = 1.0;  // coincident: pick a side
                double step = need * (dirsign >= 0 ? 1.0 : -1.0);
                double s = std::clamp(it.s + step, 0.0, it.lane.length);
                if (s == it.s) s = std::clamp(it.s - step, 0.0, it.lane.length);
                if (std::abs(s - it.s) > 1e-12) {
                  it.s = s;
                  moved = true;
                }
              };
              push(items[i], xj, yj);
              push(items[j], xi, yi);
            }
          if (!moved) break;
        }

        for (const auto& it : items) {
          if (std::abs(it.s - it.s0) < 1e-12) continue;
          NodeTarget t;
          t.path = it.path;
          t.props.push_back({0, it.s / kLengthScale});
          out.push_back(std::move(t));
        }
      },
      weight);
}

inline KnowledgeSet rules_traffic(const RoadLayout& layout, double gap_min = 4.0,
                                  double gather_radius = 25.0) {
  return {rule_road_pin(layout), rule_lane_pin(layout), rule_lane_heading(),
          rule_vehicle_spacing(gap_min, gather_radius)};
}

// --- audit ----------------------------------------------------------------------------

struct TrafficAudit {
  double worst_road_dev = 0.0;     // max |road param - layout| in world units
  double worst_dtheta_deg = 0.0;   // max |vehicle heading offset|
  double worst_gap = 1e300;        // min pairwise world gap (1e300 if < 2 vehicles)
  double worst_gather = 0.0;       // max distance to the road-group centroid
  int vehicles = 0;

  bool pass(double gap_min, double gather_radius) const {
    return worst_road_dev <= 1e-3 && worst_dtheta_deg <= 2.0 &&
           (vehicles < 2 || worst_gap >= gap_min - 0.1) && worst_gather <= gather_radius + 0.1;
  }
};

inline TrafficAudit audit_scene(const SceneTree& tree, const RoadLayout& layout) {
  TrafficAudit a;
  std::vector<std::pair<const TreeNode*, std::vector<int>>> roads;
  std::vector<int> path;
  detail::collect_typed(tree.root, path, kRoad, roads);
  for (auto& [rn, rp] : roads) {
    RoadFrame rf = road_frame(*rn);
    const RoadSpec& spec = detail::nearest_road(layout, rf);
    a.worst_road_dev = std::max({a.worst_road_dev, std::abs(rf.ox - spec.ox),
                                 std::abs(rf.oy - spec.oy), std::abs(rf.heading - spec.heading),
                                 std::abs(rf.width - spec.width), std::abs(rf.length - spec.length)});
  }
  // the audit measures the materialized scene: only vehicles that instantiate
  // (Road -> Lane -> Vehicle chains) carry a world pose
  auto instances = instantiate(tree, layout);
  a.vehicles = static_cast<int>(instances.size());
  for (const auto& vi : instances)
    a.worst_dtheta_deg = std::max(a.worst_dtheta_deg, std::abs(vi.dtheta) * 180.0 / kPi);
  for (size_t i = 0; i < instances.size(); ++i)
    for (size_t j = i + 1; j < instances.size(); ++j)
      a.worst_gap = std::min(a.worst_gap, std::hypot(instances[i].x - instances[j].x,
                                                     instances[i].y - instances[j].y));
  std::map<int, std::vector<size_t>> groups;
  for (size_t i = 0; i < instances.size(); ++i) groups[instances[i].road_ordinal].push_back(i);
  for (auto& [key, idx] : groups) {
    if (idx.size() < 2) continue;
    double cx = 0, cy = 0;
    for (size_t i : idx) {
      cx += instances[i].x;
      cy += instances[i].y;
    }
    cx /= idx.size();
    cy /= idx.size();
    for (size_t i : idx)
      a.worst_gather =
          std::max(a.worst_gather, std::hypot(instances[i].x - cx, instances[i].y - cy));
  }
  return a;
}

}  // namespace scg::traffic
