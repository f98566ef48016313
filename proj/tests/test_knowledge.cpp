#include <catch2/catch_amalgamated.hpp>

#include "scg/knowledge.hpp"
#include "scg/synthetic.hpp"

using namespace scg;

namespace {

// Builds a trace over constants: predicted properties equal the tree's, logits
// are a sharp one-hot for the node's type.
DecodeTrace const_trace(ad::Tape& tape, const SceneTree& tree, const NodeSchema& s) {
  DecodeTrace tr;
  tr.tree = tree;
  const int P = s.max_prop_len();
  std::function<int(const TreeNode&, int, std::vector<int>)> rec =
      [&](const TreeNode& n, int parent, std::vector<int> path) {
        TraceNode tn;
        tn.type = n.type;
        tn.parent = parent;
        tn.path = path;
        if (parent >= 0) {
          tn.pred_props = tape.constant(padded_props(n, P));
          Mat logits(s.num_types(), 1);
          logits[n.type] = 10.0;
          tn.logits = tape.constant(logits);
        }
        tr.nodes.push_back(std::move(tn));
        int self = static_cast<int>(tr.nodes.size()) - 1;
        for (int i = 0; i < static_cast<int>(n.children.size()); ++i) {
          auto cp = path;
          cp.push_back(i);
          int ci = rec(n.children[i], self, cp);
          tr.nodes[self].children.push_back(ci);
        }
        return self;
      };
  rec(tree.root, -1, {});
  return tr;
}

SceneTree plate_scene(const std::vector<std::array<double, 5>>& boxes) {
  SceneTree t;
  t.schema_name = "box_scene";
  t.root.type = synthetic::kRoot;
  TreeNode plate{synthetic::kPlate, {0.5, 0.5, 0.3, 0.3}, {}};
  std::vector<TreeNode> leaves;
  for (const auto& b : boxes)
    leaves.push_back(TreeNode{synthetic::kBox, {b[0], b[1], b[2], b[3], b[4]}, {}});
  // right-leaning split chain
  TreeNode sub = leaves.back();
  for (int i = static_cast<int>(leaves.size()) - 2; i >= 0; --i) {
    TreeNode split{synthetic::kSplit, {0.5, 0.1}, {}};
    split.children = {leaves[i], sub};
    sub = std::move(split);
  }
  plate.children.push_back(sub);
  t.root.children.push_back(plate);
  return t;
}

struct TrainedFixture {
  NodeSchema schema = synthetic::box_schema();
  ModelConfig model;
  ParamStore params;
};

const TrainedFixture& trained() {
  static TrainedFixture* fx = [] {
    auto* f = new TrainedFixture;
    Rng rng(5);
    std::vector<SceneTree> data;
    for (int i = 0; i < 24; ++i) data.push_back(synthetic::gen_scene(rng));
    TrainConfig cfg;
    cfg.epochs = 150;
    cfg.lr = 3e-3;
    cfg.model.latent_dim = 8;
    cfg.model.feature_dim = 32;
    cfg.seed = 71;
    cfg.batch_size = 6;
    TrainResult r = train(data, f->schema, cfg);
    f->model = cfg.model;
    f->params = std::move(r.params);
    return f;
  }();
  return *fx;
}

}  // namespace

TEST_CASE("empty rule set produces no targets") {
  NodeSchema s = synthetic::box_schema();
  SceneTree t = plate_scene({{0.0, 0.0, 0.2, 0.2, 0.2}});
  KnowledgeSet rules;
  CHECK(apply_knowledge(t, s, rules).targets.empty());
}

TEST_CASE("sibling color rule targets the mean of the plate's boxes") {
  NodeSchema s = synthetic::box_schema();
  SceneTree t = plate_scene({{-0.05, 0.0, 0.2, 0.2, 0.2}, {0.05, 0.0, 0.4, 0.4, 0.4}});
  KnowledgeSet rules = {synthetic::rule_sibling_color()};
  auto targets = apply_knowledge(t, s, rules);
  REQUIRE(targets.targets.size() == 2);
  for (const auto& tg : targets.targets) {
    REQUIRE(tg.props.size() == 3);
    for (const auto& st : tg.props) CHECK(st.value == Catch::Approx(0.3).margin(1e-12));
  }
}

TEST_CASE("max-plates rule leaves small scenes alone and retargets surplus plates") {
  NodeSchema s = synthetic::box_schema();
  SECTION("one plate, no targets") {
    SceneTree t = plate_scene({{0.0, 0.0, 0.5, 0.5, 0.5}});
    auto targets = apply_knowledge(t, s, {synthetic::rule_max_plates(2)});
    CHECK(targets.targets.empty());
  }
  SECTION("three plates, one Stop retarget") {
    SceneTree t;
    t.schema_name = "box_scene";
    t.root.type = synthetic::kRoot;
    TreeNode s1{synthetic::kSplit, {0.5, 0.1}, {}};
    TreeNode s2{synthetic::kSplit, {0.5, 0.9}, {}};
    auto mk_plate = [] {
      TreeNode p{synthetic::kPlate, {0.5, 0.5, 0.2, 0.2}, {}};
      p.children.push_back({synthetic::kStop, {}, {}});
      return p;
    };
    s2.children = {mk_plate(), mk_plate()};
    s1.children = {mk_plate(), s2};
    t.root.children.push_back(s1);
    auto targets = apply_knowledge(t, s, {synthetic::rule_max_plates(2)});
    REQUIRE(targets.targets.size() == 1);
    CHECK(targets.targets[0].type_target == synthetic::kStop);
    SceneTree rewritten = apply_targets(t, s, targets);
    CHECK(type_histogram(rewritten, s)[synthetic::kPlate] == 2);
    validate(rewritten, s);
  }
}

TEST_CASE("box gather rule clamps far boxes radially") {
  NodeSchema s = synthetic::box_schema();
  const double gamma = 0.1;
  // two boxes symmetric about their centroid, each at distance 2*gamma
  SceneTree t = plate_scene({{-0.2, 0.0, 0.5, 0.5, 0.5}, {0.2, 0.0, 0.5, 0.5, 0.5}});
  auto targets = apply_knowledge(t, s, {synthetic::rule_box_gather(gamma)});
  REQUIRE(targets.targets.size() == 2);
  for (const auto& tg : targets.targets) {
    REQUIRE(tg.props.size() == 2);
    double x = tg.props[0].value, y = tg.props[1].value;
    CHECK(std::hypot(x - 0.0, y - 0.0) == Catch::Approx(gamma).margin(1e-12));
  }
}

TEST_CASE("knowledge loss is zero iff resolvable property targets are met") {
  NodeSchema s = synthetic::box_schema();
  SceneTree t = plate_scene({{0.0, 0.0, 0.3, 0.3, 0.3}, {0.1, 0.0, 0.3, 0.3, 0.3}});
  ad::Tape tape;
  DecodeTrace trace = const_trace(tape, t, s);
  SECTION("satisfied: equal colors mean themselves") {
    KnowledgeSet rules = {synthetic::rule_sibling_color()};
    auto targets = apply_knowledge(t, s, rules);
    KnowledgeLoss kl = knowledge_loss(tape, trace, targets, rules, s);
    CHECK(kl.value == 0.0);
    CHECK(kl.satisfied);
    CHECK(kl.skipped == 0);
  }
  SECTION("single property miss of 1.0 scores 1.0") {
    KnowledgeTargets targets;
    NodeTarget tg;
    tg.path = {0, 0, 0};  // first box
    tg.props.push_back({2, 1.3});  // color r currently 0.3
    targets.targets.push_back(tg);
    KnowledgeLoss kl = knowledge_loss(tape, trace, targets, {}, s);
    CHECK(kl.value == Catch::Approx(1.0).margin(1e-12));
    CHECK_FALSE(kl.satisfied);
  }
  SECTION("unresolvable paths are skipped and tallied") {
    KnowledgeTargets targets;
    NodeTarget tg;
    tg.path = {0, 5, 9};
    tg.props.push_back({0, 0.0});
    targets.targets.push_back(tg);
    KnowledgeLoss kl = knowledge_loss(tape, trace, targets, {}, s);
    CHECK(kl.skipped == 1);
    CHECK(kl.resolved == 0);
    CHECK(kl.value == 0.0);
  }
}

TEST_CASE("type target against uniform logits contributes ln M") {
  // M = 4 mini schema
  NodeSchema s;
  s.name = "mini";
  s.types = {{0, "Root", 1, {}, {}},
             {1, "Thing", 0, {"v"}, {SlotKind::Linear}},
             {2, "Other", 0, {}, {}},
             {3, "Stop", 0, {}, {}}};
  s.root_type = 0;
  s.stop_type = 3;
  SceneTree t;
  t.schema_name = "mini";
  t.root.type = 0;
  t.root.children.push_back({1, {0.0}, {}});

  ad::Tape tape;
  DecodeTrace trace = const_trace(tape, t, s);
  trace.nodes[1].logits = tape.constant(Mat(4, 1));  // uniform
  KnowledgeTargets targets;
  NodeTarget tg;
  tg.path = {0};
  tg.type_target = 3;
  targets.targets.push_back(tg);
  KnowledgeLoss kl = knowledge_loss(tape, trace, targets, {}, s);
  CHECK(kl.ce == Catch::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK_FALSE(kl.satisfied);
}

TEST_CASE("rewriting a tree under its rules is idempotent at the target level") {
  NodeSchema s = synthetic::box_schema();
  Rng rng(8);
  KnowledgeSet rules = synthetic::rules_synthetic(0.12);
  for (int trial = 0; trial < 25; ++trial) {
    SceneTree t = synthetic::gen_scene(rng);
    SceneTree rw = knowledge_rewrite(t, s, rules);
    validate(rw, s);
    auto targets = apply_knowledge(rw, s, rules);
    for (const auto& tg : targets.targets) {
      const TreeNode* n = rw.at_path(tg.path);
      REQUIRE(n != nullptr);
      CHECK(tg.type_target == -1);
      for (const auto& st : tg.props)
        CHECK(n->props[st.slot] == Catch::Approx(st.value).margin(1e-9));
    }
  }
}

TEST_CASE("knowledge rewrite always passes the synthetic audit") {
  NodeSchema s = synthetic::box_schema();
  Rng rng(9);
  const double gamma = 0.15;
  KnowledgeSet rules = synthetic::rules_synthetic(gamma);
  for (int trial = 0; trial < 50; ++trial) {
    SceneTree t = synthetic::gen_scene(rng);
    SceneTree rw = knowledge_rewrite(t, s, rules);
    auto audit = synthetic::audit_scene(rw);
    INFO("trial " << trial << " plates=" << audit.plates << " spread=" << audit.worst_color_spread
                  << " dist=" << audit.worst_centroid_dist);
    CHECK(audit.pass(gamma));
  }
}

TEST_CASE("prox is the identity for empty rules and for satisfied targets") {
  const auto& fx = trained();
  Rng rng(3);
  Mat z(fx.model.latent_dim, 1);
  for (double& x : z.a) x = rng.normal();
  SECTION("no rules") {
    ProxResult r = prox(z, {}, fx.params, fx.schema, fx.model, ProxConfig{});
    CHECK(r.z == z);
    CHECK(r.accepted == 0);
  }
  SECTION("identity rule: every target already satisfied") {
    // targets every box's color to its current decoded value
    NodeSelector any_box;
    any_box.types = {synthetic::kBox};
    auto rule = std::make_shared<NodeRule>(
        "identity", any_box,
        [](const TreeNode& n, const std::vector<int>&) {
          std::vector<SlotTarget> t;
          for (int c = 0; c < 3; ++c) t.push_back({2 + c, n.props[2 + c]});
          return t;
        });
    ProxResult r = prox(z, {rule}, fx.params, fx.schema, fx.model, ProxConfig{});
    CHECK(r.ly_entry == 0.0);
    CHECK(r.z == z);
  }
}

TEST_CASE("prox with huge rho stays at the entry point") {
  const auto& fx = trained();
  KnowledgeSet rules = synthetic::rules_synthetic(0.1);
  Rng rng(4);
  Mat z(fx.model.latent_dim, 1);
  for (double& x : z.a) x = rng.normal();
  ProxConfig cfg;
  cfg.rho = 1e9;
  ProxResult r = prox(z, rules, fx.params, fx.schema, fx.model, cfg);
  double moved = 0;
  for (int i = 0; i < z.size(); ++i) moved += std::abs(r.z.a[i] - z.a[i]);
  CHECK(moved < 1e-6);
}

TEST_CASE("prox objective is non-increasing across accepted steps") {
  const auto& fx = trained();
  KnowledgeSet rules = synthetic::rules_synthetic(0.1);
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    Mat z(fx.model.latent_dim, 1);
    for (double& x : z.a) x = rng.normal();
    ProxResult r = prox(z, rules, fx.params, fx.schema, fx.model, ProxConfig{});
    for (size_t i = 1; i < r.objective_curve.size(); ++i)
      CHECK(r.objective_curve[i] <= r.objective_curve[i - 1] + 1e-12);
  }
}

TEST_CASE("prox usually reduces the knowledge loss on a trained model") {
  const auto& fx = trained();
  KnowledgeSet rules = {synthetic::rule_sibling_color()};
  Rng rng(14);
  int reduced = 0, active = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Mat z(fx.model.latent_dim, 1);
    for (double& x : z.a) x = rng.normal();
    ProxResult r = prox(z, rules, fx.params, fx.schema, fx.model, ProxConfig{});
    if (r.ly_entry > 1e-9) {
      ++active;
      if (r.ly_exit < r.ly_entry) ++reduced;
    }
  }
  if (active > 0) CHECK(reduced >= active * 6 / 10);
}

TEST_CASE("prox movement shrinks as rho grows") {
  const auto& fx = trained();
  KnowledgeSet rules = synthetic::rules_synthetic(0.1);
  Rng rng(21);
  const std::vector<double> rhos = {0.25, 1.0, 4.0, 16.0};
  std::vector<double> mean_moved(rhos.size(), 0.0);
  const int trials = 50;
  for (int trial = 0; trial < trials; ++trial) {
    Mat z(fx.model.latent_dim, 1);
    for (double& x : z.a) x = rng.normal();
    for (size_t k = 0; k < rhos.size(); ++k) {
      ProxConfig cfg;
      cfg.rho = rhos[k];
      ProxResult r = prox(z, rules, fx.params, fx.schema, fx.model, cfg);
      double d = 0;
      for (int i = 0; i < z.size(); ++i) {
        double dd = r.z.a[i] - z.a[i];
        d += dd * dd;
      }
      mean_moved[k] += std::sqrt(d) / trials;
    }
  }
  for (size_t k = 1; k < rhos.size(); ++k) CHECK(mean_moved[k] <= mean_moved[k - 1] + 1e-9);
}

TEST_CASE("rules referencing slots outside the schema are rejected") {
  NodeSchema s = synthetic::box_schema();
  SceneTree t = plate_scene({{0.0, 0.0, 0.2, 0.2, 0.2}});
  NodeSelector box_sel;
  box_sel.types = {synthetic::kBox};
  auto bad = std::make_shared<NodeRule>(
      "bad", box_sel,
      [](const TreeNode&, const std::vector<int>&) {
        return std::vector<SlotTarget>{{9, 0.0}};
      });
  CHECK_THROWS_AS(apply_knowledge(t, s, {bad}), std::invalid_argument);
}
