#pragma once

// Node-level and edge-level knowledge over scene trees.
//
// A node rule pairs a selector (type membership + property interval tests)
// with a rewrite producing target property slots for matched nodes. An edge
// rule matches a parent and rewrites all of its children, possibly as a
// function of the whole sibling set (mean color, centroid, surplus quota).
//
// apply_knowledge evaluates every rule against the *original* tree and merges
// the targets in list order, later rules overwriting earlier ones on the same
// slot. knowledge_loss scores a decode trace against targets: masked squared
// error on predicted properties plus cross-entropy of the classifier logits
// against retargeted types. Targets are constants; gradients flow only through
// the decoder outputs, which makes the loss differentiable in z.
//
// prox() is the knowledge projection: gradient descent from z on
//   L_Y(decode(z')) + (rho/2) ||z' - z||^2
// with backtracking on the step size. Targets are recomputed from the current
// decode at each step, so the projection follows topology changes.

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "scg/tvae.hpp"

namespace scg {

struct SlotTarget {
  int slot = 0;
  double value = 0.0;
};

struct NodeTarget {
  std::vector<int> path;
  int type_target = -1;  // -1 = no type rewrite
  std::vector<SlotTarget> props;
  int rule_index = -1;
};

struct PropInterval {
  int slot = 0;
  double lo = 0.0, hi = 0.0;
};

struct NodeSelector {
  std::vector<int> types;  // empty matches any type
  std::vector<PropInterval> ranges;

  bool matches(const TreeNode& n) const {
    if (!types.empty()) {
      bool ok = false;
      for (int t : types) ok = ok || t == n.type;
      if (!ok) return false;
    }
    for (const auto& r : ranges) {
      if (r.slot >= static_cast<int>(n.props.size())) return false;
      if (n.props[r.slot] < r.lo || n.props[r.slot] > r.hi) return false;
    }
    return true;
  }
};

class Rule {
 public:
  Rule(std::string name, double weight) : name_(std::move(name)), weight_(weight) {}
  virtual ~Rule() = default;
  const std::string& name() const { return name_; }
  double weight() const { return weight_; }
  virtual void collect(const SceneTree& tree, const NodeSchema& s,
                       std::vector<NodeTarget>& out) const = 0;

 private:
  std::string name_;
  double weight_;
};

class NodeRule : public Rule {
 public:
  using Rewrite =
      std::function<std::vector<SlotTarget>(const TreeNode&, const std::vector<int>& path)>;

  NodeRule(std::string name, NodeSelector sel, Rewrite rw, double weight = 1.0)
      : Rule(std::move(name), weight), sel_(std::move(sel)), rw_(std::move(rw)) {}

  void collect(const SceneTree& tree, const NodeSchema& s,
               std::vector<NodeTarget>& out) const override {
    walk(tree, [&](const TreeNode& n, const std::vector<int>& path) {
      if (!sel_.matches(n)) return;
      NodeTarget t;
      t.path = path;
      t.props = rw_(n, path);
      for (const auto& st : t.props)
        if (st.slot >= s.type(n.type).prop_len())
          throw std::invalid_argument("rule '" + name() + "': slot outside schema for type " +
                                      s.type(n.type).name);
      if (!t.props.empty()) out.push_back(std::move(t));
    });
  }

 private:
  NodeSelector sel_;
  Rewrite rw_;
};

class EdgeRule : public Rule {
 public:
  // The rewrite sees a matched parent and appends targets for its children.
  using Rewrite = std::function<void(const TreeNode& parent, const std::vector<int>& parent_path,
                                     const NodeSchema& s, std::vector<NodeTarget>& out)>;

  EdgeRule(std::string name, NodeSelector parent, Rewrite rw, double weight = 1.0)
      : Rule(std::move(name), weight), parent_(std::move(parent)), rw_(std::move(rw)) {}

  void collect(const SceneTree& tree, const NodeSchema& s,
               std::vector<NodeTarget>& out) const override {
    walk(tree, [&](const TreeNode& n, const std::vector<int>& path) {
      if (parent_.matches(n)) rw_(n, path, s, out);
    });
  }

 private:
  NodeSelector parent_;
  Rewrite rw_;
};

using KnowledgeSet = std::vector<std::shared_ptr<const Rule>>;

struct KnowledgeTargets {
  std::vector<NodeTarget> targets;  // one entry per node, slots merged
  bool empty() const { return targets.empty(); }
};

// Evaluates all rules against the original tree and merges targets in rule
// order; later rules win on slot and type conflicts.
inline KnowledgeTargets apply_knowledge(const SceneTree& tree, const NodeSchema& s,
                                        const KnowledgeSet& rules) {
  std::map<std::vector<int>, NodeTarget> merged;
  for (size_t r = 0; r < rules.size(); ++r) {
    std::vector<NodeTarget> raw;
    rules[r]->collect(tree, s, raw);
    for (NodeTarget& t : raw) {
      t.rule_index = static_cast<int>(r);
      auto [it, fresh] = merged.try_emplace(t.path, NodeTarget{});
      NodeTarget& m = it->second;
      if (fresh) m.path = t.path;
      if (t.type_target >= 0) {
        m.type_target = t.type_target;
        m.rule_index = t.rule_index;
      }
      for (const SlotTarget& st : t.props) {
        bool replaced = false;
        for (auto& existing : m.props)
          if (existing.slot == st.slot) {
            existing = st;
            replaced = true;
          }
        if (!replaced) m.props.push_back(st);
        m.rule_index = t.rule_index;
      }
      if (m.rule_index < 0) m.rule_index = t.rule_index;
    }
  }
  // per-slot rule attribution: keep the per-target rule index of the last
  // writer; adequate for the per-rule loss breakdown
  KnowledgeTargets out;
  for (auto& [path, t] : merged) out.targets.push_back(std::move(t));
  return out;
}

// --- knowledge loss ---------------------------------------------------------------

struct KnowledgeLoss {
  ad::Value total;               // differentiable L_Y
  double value = 0.0;            // numeric L_Y
  double mse = 0.0, ce = 0.0;    // numeric parts
  std::vector<double> per_rule;  // numeric, indexed like the rule list
  int resolved = 0, skipped = 0;
  bool satisfied = true;  // prop targets met exactly, type targets argmax-matched
};

inline KnowledgeLoss knowledge_loss(ad::Tape& tape, const DecodeTrace& trace,
                                    const KnowledgeTargets& targets, const KnowledgeSet& rules,
                                    const NodeSchema& s) {
  KnowledgeLoss out;
  out.per_rule.assign(rules.size(), 0.0);
  out.total = tape.scalar(0.0);
  const int P = s.max_prop_len();
  for (const NodeTarget& t : targets.targets) {
    int idx = trace.index_at(t.path);
    if (idx < 0) {
      ++out.skipped;
      continue;
    }
    ++out.resolved;
    const TraceNode& tn = trace.nodes[idx];
    double w = t.rule_index >= 0 && t.rule_index < static_cast<int>(rules.size())
                   ? rules[t.rule_index]->weight()
                   : 1.0;
    double piece = 0.0;
    if (!t.props.empty()) {
      if (!tn.pred_props.valid()) {
        --out.resolved;
        ++out.skipped;
        continue;
      }
      Mat target(P, 1), mask(P, 1);
      for (const SlotTarget& st : t.props) {
        target[st.slot] = st.value;
        mask[st.slot] = 1.0;
        double got = tape.val(tn.pred_props)[st.slot];
        if (std::abs(got - st.value) > 1e-12) out.satisfied = false;
      }
      ad::Value se = tape.scale(tape.squared_error(tn.pred_props, std::move(target), std::move(mask)), w);
      piece += tape.val(se)[0];
      out.mse += tape.val(se)[0];
      out.total = tape.add(out.total, se);
    }
    if (t.type_target >= 0) {
      if (!tn.logits.valid()) {
        // the schema root cannot be retargeted
        out.satisfied = out.satisfied && tn.type == t.type_target;
      } else {
        ad::Value ce = tape.softmax_cross_entropy(tn.logits, t.type_target, w);
        piece += tape.val(ce)[0];
        out.ce += tape.val(ce)[0];
        out.total = tape.add(out.total, ce);
        const Mat& l = tape.val(tn.logits);
        int best = 0;
        for (int i = 1; i < l.rows; ++i)
          if (l[i] > l[best]) best = i;
        if (best != t.type_target) out.satisfied = false;
      }
    }
    if (t.rule_index >= 0 && t.rule_index < static_cast<int>(out.per_rule.size()))
      out.per_rule[t.rule_index] += piece;
  }
  out.value = tape.val(out.total)[0];
  return out;
}

// Applies targets to a concrete tree: property slots are overwritten; a type
// retarget replaces the node with a bare node of the new type (supported for
// arity-0 retargets, which is how surplus children collapse to Stop).
inline SceneTree apply_targets(const SceneTree& tree, const NodeSchema& s,
                               const KnowledgeTargets& targets) {
  SceneTree out = tree;
  for (const NodeTarget& t : targets.targets) {
    TreeNode* n = out.at_path(t.path);
    if (!n) continue;
    for (const SlotTarget& st : t.props)
      if (st.slot < static_cast<int>(n->props.size())) n->props[st.slot] = st.value;
    if (t.type_target >= 0 && t.type_target != n->type) {
      const NodeType& nt = s.type(t.type_target);
      if (nt.arity != 0)
        throw std::invalid_argument("apply_targets: only arity-0 type retargets supported");
      n->type = t.type_target;
      n->props.assign(nt.prop_len(), 0.0);
      n->children.clear();
    }
  }
  return out;
}

// Knowledge-compliant rewrite of a tree under a rule set: Y_t(x).
inline SceneTree knowledge_rewrite(const SceneTree& tree, const NodeSchema& s,
                                   const KnowledgeSet& rules) {
  return apply_targets(tree, s, apply_knowledge(tree, s, rules));
}

// Numeric L_Y of a latent code under fresh targets (free-running decode).
inline KnowledgeLoss knowledge_loss_at(const Mat& z, const KnowledgeSet& rules,
                                       const ParamStore& ps, const NodeSchema& s,
                                       const ModelConfig& cfg) {
  ad::Tape tape;
  ParamBinder w(tape, ps);
  DecodeTrace trace = decode(tape, w, tape.constant(z), s, cfg, FreeRunning{});
  KnowledgeTargets targets = apply_knowledge(trace.tree, s, rules);
  return knowledge_loss(tape, trace, targets, rules, s);
}

// --- proximal knowledge projection --------------------------------------------------

struct ProxConfig {
  int steps = 25;
  double step_size = 0.05;
  double rho = 1.0;
  int max_halvings = 5;
};

struct ProxResult {
  Mat z;
  double ly_entry = 0.0;
  double ly_exit = 0.0;
  int accepted = 0;
  int skipped_targets = 0;
  std::vector<double> objective_curve;  // proximal objective after each accepted step
  bool aborted = false;
};

namespace detail_knowledge {

inline double prox_objective(const Mat& z, const Mat& z0, double rho, const KnowledgeTargets& tg,
                             const KnowledgeSet& rules, const ParamStore& ps, const NodeSchema& s,
                             const ModelConfig& cfg, int* skipped = nullptr) {
  ad::Tape tape;
  ParamBinder w(tape, ps);
  DecodeTrace trace = decode(tape, w, tape.constant(z), s, cfg, FreeRunning{});
  KnowledgeLoss kl = knowledge_loss(tape, trace, tg, rules, s);
  if (skipped) *skipped = kl.skipped;
  double prox_term = 0.0;
  for (int i = 0; i < z.size(); ++i) {
    double d = z.a[i] - z0.a[i];
    prox_term += d * d;
  }
  return kl.value + 0.5 * rho * prox_term;
}

}  // namespace detail_knowledge

// z' ~ argmin_z' L_Y(decode(z')) + (rho/2)||z - z'||^2, by at most `steps`
// accepted gradient steps with backtracking (halving, capped). Aborts on a
// non-finite gradient and returns the last finite iterate.
inline ProxResult prox(const Mat& z_in, const KnowledgeSet& rules, const ParamStore& ps,
                       const NodeSchema& s, const ModelConfig& cfg, const ProxConfig& pcfg) {
  ProxResult res;
  res.z = z_in;
  if (rules.empty()) return res;  // identity projection

  double lambda = pcfg.step_size;
  for (int step = 0; step < pcfg.steps; ++step) {
    Mat grad;
    double j_cur;
    KnowledgeTargets targets;
    try {
      ad::Tape tape;
      ParamBinder w(tape, ps);
      ad::Value zv = tape.param("z", res.z);
      DecodeTrace trace = decode(tape, w, zv, s, cfg, FreeRunning{});
      targets = apply_knowledge(trace.tree, s, rules);
      KnowledgeLoss kl = knowledge_loss(tape, trace, targets, rules, s);
      res.skipped_targets = kl.skipped;
      if (step == 0) res.ly_entry = kl.value;
      res.ly_exit = kl.value;
      ad::Value diff = tape.sub(zv, tape.constant(z_in));
      ad::Value obj = tape.add(kl.total, tape.scale(tape.sum(tape.mul(diff, diff)), 0.5 * pcfg.rho));
      j_cur = tape.val(obj)[0];
      grad = tape.forward_backward(obj)["z"];
    } catch (const std::runtime_error&) {
      res.aborted = true;
      return res;
    }
    if (!grad.all_finite()) {
      res.aborted = true;
      return res;
    }

    bool accepted = false;
    for (int h = 0; h <= pcfg.max_halvings; ++h) {
      Mat cand = res.z;
      for (int i = 0; i < cand.size(); ++i) cand.a[i] -= lambda * grad.a[i];
      double j_cand = detail_knowledge::prox_objective(cand, z_in, pcfg.rho, targets, rules, ps, s, cfg);
      if (std::isfinite(j_cand) && j_cand <= j_cur + 1e-15) {
        res.z = std::move(cand);
        res.objective_curve.push_back(j_cand);
        ++res.accepted;
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!accepted) break;
  }
  // exit loss under fresh targets at the final iterate
  ad::Tape tape;
  ParamBinder w(tape, ps);
  DecodeTrace trace = decode(tape, w, tape.constant(res.z), s, cfg, FreeRunning{});
  KnowledgeTargets tg = apply_knowledge(trace.tree, s, rules);
  KnowledgeLoss kl = knowledge_loss(tape, trace, tg, rules, s);
  res.ly_exit = kl.value;
  res.skipped_targets = kl.skipped;
  return res;
}

}  // namespace scg
