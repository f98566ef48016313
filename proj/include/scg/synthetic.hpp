#pragma once

// The box/plate reconstruction task.
//
// Schema: Root(1) -> division subtree of Split(alpha, axis) whose leaves are
// Plates or Stops; each Plate(center, half-extents) holds a division subtree
// of Boxes (offset from the plate center, RGB color) and Stops. Box offsets
// are in scene units relative to their plate center. Plates render in a fixed
// light gray; boxes carry their own color; box half-extent is fixed.
//
// Knowledge rules:
//   max_plates        - at most N plates; surplus plates retarget to Stop
//   sibling_color     - boxes of one plate pull to their mean color
//   box_gather        - boxes farther than gamma from the sibling centroid
//                       clamp radially (iterated to a self-consistent set)

#include <algorithm>
#include <cmath>
#include <vector>

#include "scg/knowledge.hpp"
#include "scg/render.hpp"
#include "scg/rng.hpp"
#include "scg/tvae.hpp"

namespace scg::synthetic {

constexpr double kBoxHalf = 0.035;
constexpr double kPlateColor[3] = {0.78, 0.78, 0.80};

inline NodeSchema box_schema() {
  NodeSchema s;
  s.name = "box_scene";
  s.types = {
      {0, "Root", 1, {}, {}},
      {1, "Split", 2, {"alpha", "axis"}, {SlotKind::Unit, SlotKind::Unit}},
      {2,
       "Plate",
       1,
       {"cx", "cy", "hx", "hy"},
       {SlotKind::Unit, SlotKind::Unit, SlotKind::Unit, SlotKind::Unit}},
      {3,
       "Box",
       0,
       {"ox", "oy", "r", "g", "b"},
       {SlotKind::Linear, SlotKind::Linear, SlotKind::Unit, SlotKind::Unit, SlotKind::Unit}},
      {4, "Stop", 0, {}, {}},
  };
  s.root_type = 0;
  s.stop_type = 4;
  s.split_type = 1;
  s.max_depth = 16;
  return s;
}

enum BoxType { kRoot = 0, kSplit = 1, kPlate = 2, kBox = 3, kStop = 4 };

// --- generator ------------------------------------------------------------------

namespace detail {

// Canonical right-leaning division chain: Split(item_0, Split(item_1, ...
// Split(item_{k-1}, Stop))). The chain shape is determined by the item count,
// so the model's structural burden is the counts, not arbitrary tree shapes;
// alpha and axis still randomize the geometry.
template <class Fill>
inline TreeNode division_chain(size_t count, Rect cell, Rng& rng, Fill&& fill) {
  if (count == 0) return TreeNode{kStop, {}, {}};
  TreeNode n;
  n.type = kSplit;
  double alpha = rng.uniform(0.3, 0.7);
  bool y_axis = rng.uniform() < 0.5;
  n.props = {alpha, y_axis ? 0.9 : 0.1};
  Rect a = cell, b = cell;
  if (y_axis) {
    double cut = cell.y0 + alpha * cell.height();
    a.y1 = cut;
    b.y0 = cut;
  } else {
    double cut = cell.x0 + alpha * cell.width();
    a.x1 = cut;
    b.x0 = cut;
  }
  n.children.push_back(fill(a));
  n.children.push_back(division_chain(count - 1, b, rng, fill));
  return n;
}

}  // namespace detail

inline TreeNode gen_box(Rng& rng, double hx, double hy) {
  TreeNode box;
  box.type = kBox;
  double rx = std::max(0.0, hx - kBoxHalf) * 0.85;
  double ry = std::max(0.0, hy - kBoxHalf) * 0.85;
  box.props = {rng.uniform(-rx, rx), rng.uniform(-ry, ry), rng.uniform(0.08, 0.92),
               rng.uniform(0.08, 0.92), rng.uniform(0.08, 0.92)};
  return box;
}

inline TreeNode gen_plate(Rng& rng, Rect cell) {
  TreeNode plate;
  plate.type = kPlate;
  double hx = 0.5 * cell.width() * rng.uniform(0.55, 0.85);
  double hy = 0.5 * cell.height() * rng.uniform(0.55, 0.85);
  double cx = cell.cx() + rng.uniform(-1.0, 1.0) * (0.5 * cell.width() - hx) * 0.6;
  double cy = cell.cy() + rng.uniform(-1.0, 1.0) * (0.5 * cell.height() - hy) * 0.6;
  plate.props = {cx, cy, hx, hy};

  int boxes = 1 + static_cast<int>(rng.uniform_int(5));
  plate.children.push_back(detail::division_chain(
      boxes, Rect{0, 0, 1, 1}, rng, [&](Rect) { return gen_box(rng, hx, hy); }));
  return plate;
}

inline SceneTree gen_scene(Rng& rng) {
  SceneTree t;
  t.schema_name = "box_scene";
  t.root.type = kRoot;
  int plates = 1 + static_cast<int>(rng.uniform_int(3));
  t.root.children.push_back(detail::division_chain(
      plates, Rect{0, 0, 1, 1}, rng, [&](Rect cell) { return gen_plate(rng, cell); }));
  return t;
}

// The canonical reconstruction target: two plates, four boxes each, one color
// per plate, boxes gathered near the plate centers.
inline SceneTree target_scene() {
  SceneTree t;
  t.schema_name = "box_scene";
  t.root.type = kRoot;

  auto chain4 = [](std::vector<TreeNode> items) {
    TreeNode tail{kStop, {}, {}};
    for (int i = static_cast<int>(items.size()) - 1; i >= 0; --i) {
      TreeNode split{kSplit, {0.5, i % 2 ? 0.9 : 0.1}, {}};
      split.children = {items[i], tail};
      tail = std::move(split);
    }
    return tail;
  };
  auto make_plate = [&](double cx, double cy, double hx, double hy, double r, double g, double b,
                        std::vector<std::pair<double, double>> offsets) {
    TreeNode plate{kPlate, {cx, cy, hx, hy}, {}};
    std::vector<TreeNode> boxes;
    for (auto& [ox, oy] : offsets) boxes.push_back(TreeNode{kBox, {ox, oy, r, g, b}, {}});
    plate.children.push_back(chain4(std::move(boxes)));
    return plate;
  };

  TreeNode pa = make_plate(0.30, 0.32, 0.16, 0.14, 0.85, 0.15, 0.12,
                           {{-0.07, -0.05}, {0.06, -0.04}, {-0.04, 0.06}, {0.05, 0.05}});
  TreeNode pb = make_plate(0.68, 0.70, 0.17, 0.15, 0.12, 0.20, 0.85,
                           {{-0.06, 0.05}, {0.07, 0.03}, {-0.03, -0.06}, {0.04, -0.05}});
  t.root.children.push_back(chain4({std::move(pa), std::move(pb)}));
  return t;
}

inline std::vector<SceneTree> gen_dataset(int n, uint64_t seed, const SceneTree& target,
                                          int target_copies = 10) {
  if (n < target_copies) throw std::invalid_argument("gen_dataset: n < target_copies");
  Rng rng = Rng::substream(seed, "dataset");
  std::vector<SceneTree> out;
  out.reserve(n);
  for (int i = 0; i < n - target_copies; ++i) out.push_back(gen_scene(rng));
  for (int i = 0; i < target_copies; ++i) out.push_back(target);
  rng.shuffle(out);
  return out;
}

// --- scene -> render elements ------------------------------------------------------

// Plates first, then boxes in tree order; a box composes its plate's center
// with its own offset. A box with no plate ancestor measures from (0.5, 0.5).
inline std::vector<Mat> scene_elements(const SceneTree& tree) {
  std::vector<Mat> plates, boxes;
  std::function<void(const TreeNode&, double, double)> rec = [&](const TreeNode& n, double pcx,
                                                                 double pcy) {
    if (n.type == kPlate) {
      Mat e(7, 1);
      e[0] = n.props[0];
      e[1] = n.props[1];
      e[2] = n.props[2];
      e[3] = n.props[3];
      e[4] = kPlateColor[0];
      e[5] = kPlateColor[1];
      e[6] = kPlateColor[2];
      plates.push_back(std::move(e));
      pcx = n.props[0];
      pcy = n.props[1];
    } else if (n.type == kBox) {
      Mat e(7, 1);
      e[0] = pcx + n.props[0];
      e[1] = pcy + n.props[1];
      e[2] = kBoxHalf;
      e[3] = kBoxHalf;
      e[4] = n.props[2];
      e[5] = n.props[3];
      e[6] = n.props[4];
      boxes.push_back(std::move(e));
    }
    for (const auto& c : n.children) rec(c, pcx, pcy);
  };
  rec(tree.root, 0.5, 0.5);
  for (Mat& b : boxes) plates.push_back(std::move(b));
  return plates;
}

// Graph version over a decode trace; gradients flow into plate centers,
// box offsets, and box colors.
inline std::vector<ad::Value> scene_elements_graph(ad::Tape& tape, const DecodeTrace& trace) {
  std::vector<ad::Value> plates, boxes;
  Mat plate_col(3, 1);
  plate_col[0] = kPlateColor[0];
  plate_col[1] = kPlateColor[1];
  plate_col[2] = kPlateColor[2];
  Mat box_half(2, 1);
  box_half[0] = kBoxHalf;
  box_half[1] = kBoxHalf;
  Mat center(2, 1);
  center[0] = 0.5;
  center[1] = 0.5;

  std::function<void(int, ad::Value)> rec = [&](int idx, ad::Value plate_center) {
    const TraceNode& tn = trace.nodes[idx];
    if (tn.type == kPlate && tn.pred_props.valid()) {
      ad::Value c = tape.slice(tn.pred_props, 0, 2);
      ad::Value h = tape.slice(tn.pred_props, 2, 2);
      plates.push_back(tape.concat({c, h, tape.constant(plate_col)}));
      plate_center = c;
    } else if (tn.type == kBox && tn.pred_props.valid()) {
      ad::Value off = tape.slice(tn.pred_props, 0, 2);
      ad::Value pos = tape.add(plate_center, off);
      ad::Value col = tape.slice(tn.pred_props, 2, 3);
      boxes.push_back(tape.concat({pos, tape.constant(box_half), col}));
    }
    for (int c : tn.children) rec(c, plate_center);
  };
  rec(0, tape.constant(center));
  for (ad::Value& b : boxes) plates.push_back(b);
  return plates;
}

// --- reconstruction loss ------------------------------------------------------------

// || S - R(x) ||_2, Frobenius norm of the pixel difference (not squared).
inline double recon_loss(const SceneTree& tree, const Mat& target, const RenderConfig& cfg) {
  Mat img = render_elements(scene_elements(tree), cfg);
  if (!img.same_shape(target)) throw std::invalid_argument("recon_loss: shape mismatch");
  double s = 0.0;
  for (int i = 0; i < img.size(); ++i) {
    double d = img.a[i] - target.a[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline ad::Value recon_loss_graph(ad::Tape& tape, const DecodeTrace& trace, const Mat& target,
                                  const RenderConfig& cfg) {
  ad::Value img = render(tape, scene_elements_graph(tape, trace), cfg);
  return tape.sqrt_(tape.squared_error(img, target));
}

// --- direct search baseline ----------------------------------------------------------
//
// Optimizes plate/box parameters in the data space with a fixed element count:
// two plates (cx, cy, hx, hy) and eight boxes (ox, oy, r, g, b), boxes 0-3 on
// plate 0, boxes 4-7 on plate 1. No tree model involved.

constexpr int kDirectSearchPlates = 2;
constexpr int kDirectSearchBoxes = 8;
constexpr int kDirectSearchDim = kDirectSearchPlates * 4 + kDirectSearchBoxes * 5;

inline std::vector<ad::Value> direct_search_elements(ad::Tape& tape, ad::Value theta) {
  Mat plate_col(3, 1);
  plate_col[0] = kPlateColor[0];
  plate_col[1] = kPlateColor[1];
  plate_col[2] = kPlateColor[2];
  Mat box_half(2, 1);
  box_half.fill(kBoxHalf);
  std::vector<ad::Value> elems, centers;
  for (int p = 0; p < kDirectSearchPlates; ++p) {
    ad::Value c = tape.slice(theta, p * 4, 2);
    ad::Value h = tape.slice(theta, p * 4 + 2, 2);
    centers.push_back(c);
    elems.push_back(tape.concat({c, h, tape.constant(plate_col)}));
  }
  int base = kDirectSearchPlates * 4;
  for (int b = 0; b < kDirectSearchBoxes; ++b) {
    ad::Value off = tape.slice(theta, base + b * 5, 2);
    ad::Value col = tape.slice(theta, base + b * 5 + 2, 3);
    ad::Value pos = tape.add(centers[b < 4 ? 0 : 1], off);
    elems.push_back(tape.concat({pos, tape.constant(box_half), col}));
  }
  return elems;
}

inline Mat tree_to_direct_params(const SceneTree& tree) {
  // flattens a two-plate, eight-box scene; used for good initializations
  Mat theta(kDirectSearchDim, 1);
  std::vector<const TreeNode*> plates;
  std::vector<std::pair<const TreeNode*, int>> boxes;  // node, plate index
  std::function<void(const TreeNode&, int)> rec = [&](const TreeNode& n, int plate) {
    if (n.type == kPlate) {
      plates.push_back(&n);
      plate = static_cast<int>(plates.size()) - 1;
    } else if (n.type == kBox) {
      boxes.emplace_back(&n, plate);
    }
    for (const auto& c : n.children) rec(c, plate);
  };
  rec(tree.root, -1);
  if (plates.size() != kDirectSearchPlates || boxes.size() != kDirectSearchBoxes)
    throw std::invalid_argument("tree_to_direct_params: element counts must be 2 plates / 8 boxes");
  for (size_t p = 0; p < plates.size(); ++p)
    for (int k = 0; k < 4; ++k) theta[static_cast<int>(p) * 4 + k] = plates[p]->props[k];
  int base = kDirectSearchPlates * 4;
  for (size_t b = 0; b < boxes.size(); ++b)
    for (int k = 0; k < 5; ++k) theta[base + static_cast<int>(b) * 5 + k] = boxes[b].first->props[k];
  return theta;
}

struct DirectSearchResult {
  Mat params;
  std::vector<double> curve;  // recon loss per iteration
};

inline DirectSearchResult direct_search(const Mat& init, const Mat& target, int budget, double eta,
                                        const RenderConfig& cfg) {
  if (init.size() != kDirectSearchDim) throw std::invalid_argument("direct_search: bad init size");
  DirectSearchResult res;
  res.params = init;
  for (int it = 0; it < budget; ++it) {
    ad::Tape tape;
    ad::Value theta = tape.param("theta", res.params);
    ad::Value img = render(tape, direct_search_elements(tape, theta), cfg);
    ad::Value loss = tape.sqrt_(tape.squared_error(img, target));
    res.curve.push_back(tape.val(loss)[0]);
    Mat g = tape.forward_backward(loss)["theta"];
    for (int i = 0; i < res.params.size(); ++i) res.params.a[i] -= eta * g.a[i];
  }
  return res;
}

// --- knowledge rules -----------------------------------------------------------------

namespace detail {

// Collects descendant nodes of a given type with their paths.
inline void descendants_of_type(const TreeNode& n, std::vector<int>& path, int type,
                                std::vector<std::pair<const TreeNode*, std::vector<int>>>& out) {
  if (n.type == type) out.emplace_back(&n, path);
  for (int i = 0; i < static_cast<int>(n.children.size()); ++i) {
    path.push_back(i);
    descendants_of_type(n.children[i], path, type, out);
    path.pop_back();
  }
}

}  // namespace detail

// Rule 1: at most `max_plates` plates; surplus plates (in depth-first order)
// retarget to Stop.
inline std::shared_ptr<Rule> rule_max_plates(int max_plates, double weight = 1.0) {
  NodeSelector root_sel;
  root_sel.types = {kRoot};
  return std::make_shared<EdgeRule>(
      "max_plates", root_sel,
      [max_plates](const TreeNode& root, const std::vector<int>& root_path, const NodeSchema&,
                   std::vector<NodeTarget>& out) {
        std::vector<std::pair<const TreeNode*, std::vector<int>>> plates;
        std::vector<int> path = root_path;
        detail::descendants_of_type(root, path, kPlate, plates);
        for (size_t i = max_plates; i < plates.size(); ++i) {
          NodeTarget t;
          t.path = plates[i].second;
          t.type_target = kStop;
          out.push_back(std::move(t));
        }
      },
      weight);
}

// Rule 2: boxes of one plate share a color; every box targets the sibling mean.
inline std::shared_ptr<Rule> rule_sibling_color(double weight = 1.0) {
  NodeSelector plate_sel;
  plate_sel.types = {kPlate};
  return std::make_shared<EdgeRule>(
      "sibling_color", plate_sel,
      [](const TreeNode& plate, const std::vector<int>& plate_path, const NodeSchema&,
         std::vector<NodeTarget>& out) {
        std::vector<std::pair<const TreeNode*, std::vector<int>>> boxes;
        std::vector<int> path = plate_path;
        detail::descendants_of_type(plate, path, kBox, boxes);
        if (boxes.empty()) return;
        double mean[3] = {0, 0, 0};
        for (auto& [b, p] : boxes)
          for (int c = 0; c < 3; ++c) mean[c] += b->props[2 + c];
        for (int c = 0; c < 3; ++c) mean[c] /= static_cast<double>(boxes.size());
        for (auto& [b, p] : boxes) {
          NodeTarget t;
          t.path = p;
          for (int c = 0; c < 3; ++c) t.props.push_back({2 + c, mean[c]});
          out.push_back(std::move(t));
        }
      },
      weight);
}

// Rule 3: boxes of one plate stay within `gamma` of their centroid. The clamp
// is iterated until the clamped set is self-consistent, so applying the
// targets yields a configuration that passes the audit as-is.
inline std::shared_ptr<Rule> rule_box_gather(double gamma, double weight = 1.0) {
  if (gamma <= 0.0) throw std::invalid_argument("rule_box_gather: gamma must be positive");
  NodeSelector plate_sel;
  plate_sel.types = {kPlate};
  return std::make_shared<EdgeRule>(
      "box_gather", plate_sel,
      [gamma](const TreeNode& plate, const std::vector<int>& plate_path, const NodeSchema&,
              std::vector<NodeTarget>& out) {
        std::vector<std::pair<const TreeNode*, std::vector<int>>> boxes;
        std::vector<int> path = plate_path;
        detail::descendants_of_type(plate, path, kBox, boxes);
        if (boxes.size() < 2) return;
        std::vector<std::pair<double, double>> pos;
        for (auto& [b, p] : boxes) pos.emplace_back(b->props[0], b->props[1]);
        for (int iter = 0; iter < 50; ++iter) {
          double cx = 0, cy = 0;
          for (auto& [x, y] : pos) {
            cx += x;
            cy += y;
          }
          cx /= pos.size();
          cy /= pos.size();
          double worst = 0;
          for (auto& [x, y] : pos) {
            double d = std::hypot(x - cx, y - cy);
            if (d > gamma) {
              double f = gamma / d;
              x = cx + (x - cx) * f;
              y = cy + (y - cy) * f;
            }
            worst = std::max(worst, d);
          }
          if (worst <= gamma * (1.0 + 1e-12)) break;
        }
        for (size_t i = 0; i < boxes.size(); ++i) {
          if (std::abs(pos[i].first - boxes[i].first->props[0]) < 1e-15 &&
              std::abs(pos[i].second - boxes[i].first->props[1]) < 1e-15)
            continue;  // unmoved boxes need no target
          NodeTarget t;
          t.path = boxes[i].second;
          t.props.push_back({0, pos[i].first});
          t.props.push_back({1, pos[i].second});
          out.push_back(std::move(t));
        }
      },
      weight);
}

inline KnowledgeSet rules_synthetic(double gamma = 0.15) {
  return {rule_max_plates(2), rule_sibling_color(), rule_box_gather(gamma)};
}

// --- audit ---------------------------------------------------------------------------

struct SyntheticAudit {
  int plates = 0;
  double worst_color_spread = 0.0;   // max pairwise L-inf within a plate
  double worst_centroid_dist = 0.0;  // max distance of a box to its sibling centroid
  bool pass(double gamma) const {
    return plates <= 2 && worst_color_spread < 0.05 && worst_centroid_dist <= gamma + 0.01;
  }
};

inline SyntheticAudit audit_scene(const SceneTree& tree) {
  SyntheticAudit a;
  std::function<void(const TreeNode&)> rec = [&](const TreeNode& n) {
    if (n.type == kPlate) {
      ++a.plates;
      std::vector<std::pair<const TreeNode*, std::vector<int>>> boxes;
      std::vector<int> path;
      detail::descendants_of_type(n, path, kBox, boxes);
      for (size_t i = 0; i < boxes.size(); ++i)
        for (size_t j = i + 1; j < boxes.size(); ++j)
          for (int c = 0; c < 3; ++c)
            a.worst_color_spread =
                std::max(a.worst_color_spread,
                         std::abs(boxes[i].first->props[2 + c] - boxes[j].first->props[2 + c]));
      if (boxes.size() >= 2) {
        double cx = 0, cy = 0;
        for (auto& [b, p] : boxes) {
          cx += b->props[0];
          cy += b->props[1];
        }
        cx /= boxes.size();
        cy /= boxes.size();
        for (auto& [b, p] : boxes)
          a.worst_centroid_dist =
              std::max(a.worst_centroid_dist, std::hypot(b->props[0] - cx, b->props[1] - cy));
      }
    }
    for (const auto& c : n.children) rec(c);
  };
  rec(tree.root);
  return a;
}

}  // namespace scg::synthetic
