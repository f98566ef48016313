#pragma once

// Node-type schemas and scene trees.
//
// A schema lists M node types with arity, property layout, and slot semantics.
// Trees are typed: every node carries its type id, a property vector of that
// type's length, and exactly arity children. Variable child counts are realized
// by binary Split nodes chained under container nodes plus a Stop terminal.
//
// Split nodes carry (alpha, axis): alpha in (0,1) is the stick-breaking ratio,
// axis >= 0.5 selects a y-division, otherwise x. Materializing the divisions
// turns a tree into a partition of the root rectangle (leaf_cells below).

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "scg/array.hpp"

namespace scg {

enum class SlotKind {
  Unit,    // decoded through a sigmoid, value in (0,1)
  Linear,  // decoded raw
};

struct NodeType {
  int id = 0;
  std::string name;
  int arity = 0;
  std::vector<std::string> slot_names;
  std::vector<SlotKind> slot_kinds;
  // world value = stored property * slot scale; identity when empty
  std::vector<double> slot_scales;

  int prop_len() const { return static_cast<int>(slot_names.size()); }
  double scale(int slot) const {
    return slot_scales.empty() ? 1.0 : slot_scales[slot];
  }
};

struct NodeSchema {
  std::string name;
  std::vector<NodeType> types;
  int root_type = -1;
  int stop_type = -1;
  int split_type = -1;  // -1 when the schema has no spatial division type
  int max_depth = 24;   // D_max

  // filled by class_prior()
  Mat prior;      // p(c), length M
  Mat ce_weight;  // 1/p(c), normalized to mean 1

  int num_types() const { return static_cast<int>(types.size()); }

  int max_prop_len() const {
    int p = 0;
    for (const auto& t : types) p = std::max(p, t.prop_len());
    return p;
  }

  const NodeType& type(int id) const {
    if (id < 0 || id >= num_types()) throw std::out_of_range("schema: bad type id");
    return types[id];
  }

  int type_by_name(const std::string& n) const {
    for (const auto& t : types)
      if (t.name == n) return t.id;
    throw std::out_of_range("schema: unknown type name '" + n + "'");
  }

  int slot_index(int type_id, const std::string& slot) const {
    const NodeType& t = type(type_id);
    for (int i = 0; i < t.prop_len(); ++i)
      if (t.slot_names[i] == slot) return i;
    throw std::out_of_range("schema: type " + t.name + " has no slot '" + slot + "'");
  }
};

struct TreeNode {
  int type = 0;
  std::vector<double> props;
  std::vector<TreeNode> children;

  int count() const {
    int n = 1;
    for (const auto& c : children) n += c.count();
    return n;
  }
  int depth() const {
    int d = 0;
    for (const auto& c : children) d = std::max(d, c.depth());
    return d + 1;
  }
};

struct SceneTree {
  std::string schema_name;
  TreeNode root;

  int node_count() const { return root.count(); }
  int depth() const { return root.depth(); }

  const TreeNode* at_path(const std::vector<int>& path) const {
    const TreeNode* n = &root;
    for (int i : path) {
      if (i < 0 || i >= static_cast<int>(n->children.size())) return nullptr;
      n = &n->children[i];
    }
    return n;
  }
  TreeNode* at_path(const std::vector<int>& path) {
    return const_cast<TreeNode*>(static_cast<const SceneTree*>(this)->at_path(path));
  }
};

// Depth-first visit with the path from the root.
inline void walk(const TreeNode& n, std::vector<int>& path,
                 const std::function<void(const TreeNode&, const std::vector<int>&)>& fn) {
  fn(n, path);
  for (int i = 0; i < static_cast<int>(n.children.size()); ++i) {
    path.push_back(i);
    walk(n.children[i], path, fn);
    path.pop_back();
  }
}

inline void walk(const SceneTree& t,
                 const std::function<void(const TreeNode&, const std::vector<int>&)>& fn) {
  std::vector<int> path;
  walk(t.root, path, fn);
}

inline std::vector<int> type_histogram(const SceneTree& t, const NodeSchema& s) {
  std::vector<int> h(s.num_types(), 0);
  walk(t, [&](const TreeNode& n, const std::vector<int>&) { ++h[n.type]; });
  return h;
}

// --- validation ---------------------------------------------------------------

inline void validate_node(const TreeNode& n, const NodeSchema& s, int depth) {
  if (depth > s.max_depth) throw std::invalid_argument("tree: depth exceeds D_max");
  const NodeType& t = s.type(n.type);
  if (static_cast<int>(n.props.size()) != t.prop_len())
    throw std::invalid_argument("tree: property length mismatch for type " + t.name);
  if (static_cast<int>(n.children.size()) != t.arity)
    throw std::invalid_argument("tree: arity mismatch for type " + t.name);
  for (int i = 0; i < t.prop_len(); ++i) {
    if (!std::isfinite(n.props[i])) throw std::invalid_argument("tree: non-finite property");
    if (t.slot_kinds[i] == SlotKind::Unit && (n.props[i] < 0.0 || n.props[i] > 1.0))
      throw std::invalid_argument("tree: unit slot out of [0,1] for type " + t.name);
  }
  if (n.type == s.split_type) {
    double alpha = n.props[0];
    if (alpha <= 0.0 || alpha >= 1.0) throw std::invalid_argument("tree: split ratio not in (0,1)");
  }
  for (const auto& c : n.children) validate_node(c, s, depth + 1);
}

inline void validate(const SceneTree& t, const NodeSchema& s) {
  if (t.root.type != s.root_type) throw std::invalid_argument("tree: root type mismatch");
  validate_node(t.root, s, 1);
}

// --- spatial cells --------------------------------------------------------------

struct Rect {
  double x0 = 0, y0 = 0, x1 = 1, y1 = 1;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
};

struct LeafCell {
  std::vector<int> path;
  int type = 0;
  Rect cell;
};

// Materializes the division process: Split nodes break their cell by
// (alpha, axis), every other internal node hands its full cell to each child,
// leaves own their cell. For schemas whose only multi-child type is Split the
// leaf cells partition the root rectangle exactly.
inline void leaf_cells_rec(const TreeNode& n, const NodeSchema& s, Rect cell,
                           std::vector<int>& path, std::vector<LeafCell>& out) {
  if (n.children.empty()) {
    out.push_back({path, n.type, cell});
    return;
  }
  if (n.type == s.split_type) {
    double alpha = n.props[0];
    bool y_axis = n.props[1] >= 0.5;
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
    path.push_back(0);
    leaf_cells_rec(n.children[0], s, a, path, out);
    path.back() = 1;
    leaf_cells_rec(n.children[1], s, b, path, out);
    path.pop_back();
    return;
  }
  for (int i = 0; i < static_cast<int>(n.children.size()); ++i) {
    path.push_back(i);
    leaf_cells_rec(n.children[i], s, cell, path, out);
    path.pop_back();
  }
}

inline std::vector<LeafCell> leaf_cells(const SceneTree& t, const NodeSchema& s,
                                        Rect root_cell = Rect{}) {
  std::vector<LeafCell> out;
  std::vector<int> path;
  leaf_cells_rec(t.root, s, root_cell, path, out);
  return out;
}

// --- file format ----------------------------------------------------------------
//
// Self-describing nested-object text document. nlohmann::json emits shortest
// round-trip decimal for doubles, so 64-bit floats survive save/load bit-exactly.

inline nlohmann::json node_to_json(const TreeNode& n, const NodeSchema& s) {
  nlohmann::json j;
  j["type"] = s.type(n.type).name;
  j["props"] = n.props;
  nlohmann::json kids = nlohmann::json::array();
  for (const auto& c : n.children) kids.push_back(node_to_json(c, s));
  j["children"] = std::move(kids);
  return j;
}

inline TreeNode node_from_json(const nlohmann::json& j, const NodeSchema& s) {
  TreeNode n;
  n.type = s.type_by_name(j.at("type").get<std::string>());
  n.props = j.at("props").get<std::vector<double>>();
  for (const auto& c : j.at("children")) n.children.push_back(node_from_json(c, s));
  return n;
}

inline nlohmann::json tree_to_json(const SceneTree& t, const NodeSchema& s) {
  nlohmann::json j;
  j["format"] = "scene-tree";
  j["version"] = 1;
  j["schema"] = t.schema_name;
  j["root"] = node_to_json(t.root, s);
  return j;
}

inline SceneTree tree_from_json(const nlohmann::json& j, const NodeSchema& s) {
  if (j.at("format") != "scene-tree") throw std::runtime_error("scene-tree: bad format tag");
  if (j.at("version").get<int>() != 1) throw std::runtime_error("scene-tree: unsupported version");
  SceneTree t;
  t.schema_name = j.at("schema").get<std::string>();
  if (t.schema_name != s.name)
    throw std::runtime_error("scene-tree: schema mismatch: file has '" + t.schema_name + "', expected '" + s.name + "'");
  t.root = node_from_json(j.at("root"), s);
  return t;
}

}  // namespace scg
