// Command-line front end: dataset synthesis, T-VAE training, knowledge-guided
// reconstruction, LiDAR scene attacks, and background generation.
//
// Every run takes a config file (JSON) plus flag overrides (flags win), writes
// its artifacts under a per-run output directory with a fixed layout
// (manifest.json, logs/, artifacts/), and is reproducible from manifest+seed.
// Exit codes: 0 success, 2 config error, 3 runtime abort.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "scg/lidar.hpp"
#include "scg/optimize.hpp"
#include "scg/synthetic.hpp"
#include "scg/traffic.hpp"
#include "scg/tvae.hpp"
#include "scg/victim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Applies config-file values for keys the command line did not set; rejects
// unknown keys.
class ConfigMerge {
 public:
  explicit ConfigMerge(CLI::App* cmd) : cmd_(cmd) {}

  template <class T>
  void key(const std::string& name, T* slot) {
    appliers_[name] = [slot](const json& v) { *slot = v.get<T>(); };
  }

  void apply(const std::string& config_path) {
    if (config_path.empty()) return;
    std::ifstream f(config_path);
    if (!f) throw ConfigError("cannot open config file " + config_path);
    json j;
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config parse error: ") + e.what());
    }
    for (auto& [k, v] : j.items()) {
      auto it = appliers_.find(k);
      if (it == appliers_.end()) throw ConfigError("unknown config key '" + k + "'");
      std::string flag = "--" + k;
      bool overridden = cmd_->count(flag) > 0;
      if (!overridden) {
        try {
          it->second(v);
        } catch (const json::exception& e) {
          throw ConfigError("bad value for config key '" + k + "': " + e.what());
        }
      }
    }
  }

 private:
  CLI::App* cmd_;
  std::map<std::string, std::function<void(const json&)>> appliers_;
};

void prepare_out_dir(const std::string& out, bool force) {
  fs::path dir(out);
  if (fs::exists(dir / "manifest.json") && !force)
    throw ConfigError("output directory already holds a run (use --force): " + out);
  fs::create_directories(dir / "logs");
  fs::create_directories(dir / "artifacts");
}

void write_manifest(const std::string& out, const std::string& command, const json& resolved) {
  json m;
  m["format"] = "scg-run-manifest";
  m["version"] = 1;
  m["command"] = command;
  m["config"] = resolved;
  std::ofstream f(fs::path(out) / "manifest.json");
  f << m.dump(2) << "\n";
}

NodeSchema schema_by_name(const std::string& name) {
  if (name == "box_scene") return synthetic::box_schema();
  if (name == "traffic_scene") return traffic::traffic_schema();
  throw ConfigError("unknown schema '" + name + "'");
}

traffic::RoadLayout resolve_layout(const std::string& spec) {
  if (spec == "intersection") return traffic::intersection_layout();
  if (spec == "highway") return traffic::highway_layout();
  if (!fs::exists(spec)) throw ConfigError("layout not found: " + spec);
  return traffic::load_layout(spec);
}

victim::SegmenterParams resolve_victim(const std::string& name) {
  for (const auto& v : victim::default_victims())
    if (v.name == name) return v;
  if (fs::exists(name)) {
    std::ifstream f(name);
    json j;
    f >> j;
    return victim::victim_from_json(j);
  }
  throw ConfigError("unknown victim '" + name + "'");
}

KnowledgeSet resolve_rules(const std::string& spec, double gamma,
                           const traffic::RoadLayout* layout, double gap_min,
                           double gather_radius) {
  if (spec == "none") return {};
  if (spec == "synthetic") return synthetic::rules_synthetic(gamma);
  if (spec == "traffic") {
    if (!layout) throw ConfigError("traffic rules need a layout");
    return traffic::rules_traffic(*layout, gap_min, gather_radius);
  }
  // rule-set file: named built-in constructors with parameters
  if (!fs::exists(spec)) throw ConfigError("rule set not found: " + spec);
  std::ifstream f(spec);
  json j;
  f >> j;
  if (j.at("format") != "rule-set" || j.at("version").get<int>() != 1)
    throw ConfigError("bad rule-set file header");
  KnowledgeSet rules;
  for (const auto& r : j.at("rules")) {
    std::string name = r.at("rule").get<std::string>();
    double weight = r.value("weight", 1.0);
    if (name == "max_plates") {
      rules.push_back(synthetic::rule_max_plates(r.value("max", 2), weight));
    } else if (name == "sibling_color") {
      rules.push_back(synthetic::rule_sibling_color(weight));
    } else if (name == "box_gather") {
      rules.push_back(synthetic::rule_box_gather(r.value("gamma", 0.15), weight));
    } else if (name == "road_pin") {
      if (!layout) throw ConfigError("rule road_pin needs a layout");
      rules.push_back(traffic::rule_road_pin(*layout, weight));
    } else if (name == "lane_pin") {
      if (!layout) throw ConfigError("rule lane_pin needs a layout");
      rules.push_back(traffic::rule_lane_pin(*layout, weight));
    } else if (name == "lane_heading") {
      rules.push_back(traffic::rule_lane_heading(weight));
    } else if (name == "vehicle_spacing") {
      rules.push_back(traffic::rule_vehicle_spacing(r.value("gap_min", 4.0),
                                                    r.value("gather_radius", 25.0), weight));
    } else {
      throw ConfigError("unknown rule '" + name + "'");
    }
  }
  return rules;
}

Mat seeded_latent(int d, uint64_t seed) {
  Rng rng = Rng::substream(seed, "init_z");
  Mat z(d, 1);
  for (double& x : z.a) x = rng.normal();
  return z;
}

// --- synth-data ---------------------------------------------------------------------

int cmd_synth_data(const std::string& task, int n, uint64_t seed, const std::string& out,
                   const std::string& layout_spec, int target_copies, bool force) {
  prepare_out_dir(out, force);
  json index;
  index["format"] = "scene-dataset";
  index["version"] = 1;
  index["task"] = task;
  index["seed"] = seed;
  std::vector<SceneTree> trees;
  NodeSchema schema;
  if (task == "synthetic") {
    if (n < target_copies)
      throw ConfigError("n must be at least target-copies (" + std::to_string(target_copies) + ")");
    schema = synthetic::box_schema();
    SceneTree target = synthetic::target_scene();
    trees = synthetic::gen_dataset(n, seed, target, target_copies);
    RenderConfig rc;
    Mat img = render_elements(synthetic::scene_elements(target), rc);
    write_ppm((fs::path(out) / "artifacts" / "target.ppm").string(), img, rc.height, rc.width);
    index["target_image"] = "artifacts/target.ppm";
    index["target_copies"] = target_copies;
  } else if (task == "traffic") {
    schema = traffic::traffic_schema();
    traffic::RoadLayout layout = resolve_layout(layout_spec);
    trees = traffic::gen_traffic_dataset(layout, n, seed).trees;
    traffic::save_layout(layout, (fs::path(out) / "artifacts" / "layout.json").string());
    index["layout"] = "artifacts/layout.json";
  } else {
    throw ConfigError("unknown task '" + task + "'");
  }
  index["schema"] = schema.name;
  index["count"] = trees.size();
  json files = json::array();
  for (size_t i = 0; i < trees.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "artifacts/scene_%05zu.json", i);
    std::ofstream f(fs::path(out) / name);
    f << tree_to_json(trees[i], schema).dump() << "\n";
    files.push_back(name);
  }
  index["files"] = std::move(files);
  std::ofstream idx(fs::path(out) / "index.json");
  idx << index.dump(2) << "\n";

  json cfg{{"task", task},          {"n", n},
           {"seed", seed},          {"out", out},
           {"layout", layout_spec}, {"target_copies", target_copies}};
  write_manifest(out, "synth-data", cfg);
  std::cout << "wrote " << trees.size() << " scenes to " << out << "\n";
  return kExitOk;
}

std::pair<std::vector<SceneTree>, NodeSchema> load_dataset(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "index.json");
  if (!f) throw ConfigError("no index.json under " + dir);
  json index;
  f >> index;
  if (index.at("format") != "scene-dataset") throw ConfigError("bad dataset index format");
  NodeSchema schema = schema_by_name(index.at("schema").get<std::string>());
  std::vector<SceneTree> trees;
  for (const auto& rel : index.at("files")) {
    std::ifstream sf(fs::path(dir) / rel.get<std::string>());
    if (!sf) throw ConfigError("missing dataset file " + rel.get<std::string>());
    json j;
    sf >> j;
    trees.push_back(tree_from_json(j, schema));
  }
  return {std::move(trees), std::move(schema)};
}

// --- train --------------------------------------------------------------------------

int cmd_train(const std::string& data, const std::string& out, int epochs, double lr,
              int latent_dim, int feature_dim, double beta_kl, double warmup_frac, int batch_size,
              uint64_t seed, const std::string& resume, bool force) {
  prepare_out_dir(out, force);
  auto [trees, schema] = load_dataset(data);

  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.lr = lr;
  cfg.model.latent_dim = latent_dim;
  cfg.model.feature_dim = feature_dim;
  cfg.beta_kl = beta_kl;
  cfg.warmup_frac = warmup_frac;
  cfg.batch_size = batch_size;
  cfg.seed = seed;

  ParamStore resume_params;
  int64_t start_epoch = 0;
  bool resuming = !resume.empty();
  if (resuming) {
    auto [ps, hdr] = ParamStore::load(resume);
    if (hdr.schema != schema.name)
      throw ConfigError("checkpoint schema '" + hdr.schema + "' does not match dataset '" +
                        schema.name + "'");
    cfg.model.latent_dim = hdr.latent_dim;
    cfg.model.feature_dim = hdr.feature_dim;
    resume_params = std::move(ps);
    start_epoch = hdr.epoch;
  }

  TrainResult result;
  if (epochs == 0) {
    // checkpoint equals initialization (or the resumed state)
    class_prior(trees, schema);
    Rng init_rng = Rng::substream(seed, "init");
    result.params = resuming ? std::move(resume_params) : init_params(schema, cfg.model, init_rng);
  } else {
    result = train(trees, schema, cfg, resuming ? &resume_params : nullptr,
                   static_cast<int>(start_epoch));
  }

  CheckpointHeader hdr;
  hdr.schema = schema.name;
  hdr.latent_dim = cfg.model.latent_dim;
  hdr.feature_dim = cfg.model.feature_dim;
  hdr.epoch = start_epoch + epochs;
  result.params.save((fs::path(out) / "artifacts" / "model.ckpt").string(), hdr);

  std::ofstream log(fs::path(out) / "logs" / "train_loss.csv");
  log << "epoch,total,lc,lr,kl\n";
  log.precision(17);
  for (const auto& e : result.log)
    log << e.epoch << "," << e.total << "," << e.lc << "," << e.lr << "," << e.kl << "\n";

  json cfgj{{"data", data},       {"out", out},          {"epochs", epochs},
            {"lr", lr},           {"latent_dim", cfg.model.latent_dim},
            {"feature_dim", cfg.model.feature_dim},      {"beta_kl", beta_kl},
            {"warmup_frac", warmup_frac},                {"batch_size", batch_size},
            {"seed", seed},       {"resume", resume}};
  write_manifest(out, "train", cfgj);
  std::cout << "trained " << epochs << " epochs, checkpoint at " << out << "/artifacts/model.ckpt\n";
  return kExitOk;
}

// --- reconstruct ---------------------------------------------------------------------

int cmd_reconstruct(const std::string& ckpt, const std::string& target_path,
                    const std::string& out, int budget, double eta, const std::string& rules_spec,
                    double gamma, int image_size, double tau, uint64_t seed, bool force) {
  prepare_out_dir(out, force);
  if (!fs::exists(ckpt)) throw ConfigError("missing checkpoint " + ckpt);
  if (!fs::exists(target_path)) throw ConfigError("missing target image " + target_path);
  auto [params, hdr] = ParamStore::load(ckpt);
  NodeSchema schema = schema_by_name(hdr.schema);
  ModelConfig model;
  model.latent_dim = hdr.latent_dim;
  model.feature_dim = hdr.feature_dim;

  int h = 0, w = 0;
  Mat target = read_ppm(target_path, h, w);
  RenderConfig rc;
  rc.height = h;
  rc.width = w;
  rc.tau = tau;
  (void)image_size;

  KnowledgeSet rules = resolve_rules(rules_spec, gamma, nullptr, 0, 0);
  // dataset prior is baked into the checkpoint-independent schema; CE weights
  // only matter for knowledge type targets, which use weight 1 here
  Mat ones(schema.num_types(), 1);
  ones.fill(1.0);
  schema.ce_weight = ones;
  schema.prior = ones;

  DifferentiableObjective obj;
  obj.build = [&](ad::Tape& tape, ad::Value z) {
    ParamBinder w2(tape, params);
    DecodeTrace trace = decode(tape, w2, z, schema, model, FreeRunning{});
    return synthetic::recon_loss_graph(tape, trace, target, rc);
  };

  GdConfig gd;
  gd.budget = budget;
  gd.eta = eta;
  Mat z0 = seeded_latent(model.latent_dim, seed);
  Trajectory traj = optimize_gd(z0, obj, rules, params, schema, model, gd);
  export_trajectory_csv(traj, (fs::path(out) / "logs" / "trajectory.csv").string());

  // final artifact: the knowledge rewrite of the best decode
  Mat zbest = traj.best_iter >= 0 ? traj.best_z : z0;
  SceneTree best = decode_numeric(params, zbest, schema, model).tree;
  if (!rules.empty()) best = knowledge_rewrite(best, schema, rules);
  {
    std::ofstream f(fs::path(out) / "artifacts" / "final_scene.json");
    f << tree_to_json(best, schema).dump(2) << "\n";
  }
  Mat img = render_elements(synthetic::scene_elements(best), rc);
  write_ppm((fs::path(out) / "artifacts" / "final_render.ppm").string(), img, rc.height, rc.width);

  auto audit = synthetic::audit_scene(best);
  json report{{"final_recon_loss", synthetic::recon_loss(best, target, rc)},
              {"plates", audit.plates},
              {"color_spread", audit.worst_color_spread},
              {"centroid_dist", audit.worst_centroid_dist},
              {"audit_pass", rules.empty() ? true : audit.pass(gamma)},
              {"aborted", traj.aborted}};
  {
    std::ofstream f(fs::path(out) / "logs" / "audit.json");
    f << report.dump(2) << "\n";
  }

  json cfgj{{"ckpt", ckpt},   {"target", target_path}, {"out", out},
            {"budget", budget}, {"eta", eta},           {"rules", rules_spec},
            {"gamma", gamma}, {"tau", tau},            {"seed", seed}};
  write_manifest(out, "reconstruct", cfgj);
  std::cout << "final recon loss " << report["final_recon_loss"] << ", audit "
            << (report["audit_pass"].get<bool>() ? "pass" : "FAIL") << "\n";
  if (traj.aborted) return kExitRuntime;
  return kExitOk;
}

// --- attack -------------------------------------------------------------------------

struct AttackOutcome {
  Trajectory traj;
  SceneTree best_scene;
  lidar::LabeledPointCloud best_cloud;
  double baseline_iou = 1.0;
};

AttackOutcome run_scene_attack(const ParamStore& params, const NodeSchema& schema,
                               const ModelConfig& model, const traffic::RoadLayout& layout,
                               const lidar::BackgroundRangeImage& bg,
                               const lidar::BeamPattern& pattern,
                               const victim::SegmenterParams& vic, const KnowledgeSet& rules,
                               const std::string& optimizer, int budget, double eps,
                               uint64_t seed) {
  auto scene_of = [&](const Mat& z) {
    SceneTree tree = decode_numeric(params, z, schema, model).tree;
    if (!rules.empty()) tree = knowledge_rewrite(tree, schema, rules);
    return tree;
  };
  auto cloud_of = [&](const SceneTree& tree) {
    return lidar::render_scene(traffic::instantiate(tree, layout), bg, pattern);
  };
  BlackBoxObjective obj;
  obj.eval = [&](const Mat& z) { return victim::vehicle_iou(cloud_of(scene_of(z)), vic); };

  AttackOutcome out;
  Mat z0 = seeded_latent(model.latent_dim, seed);
  out.baseline_iou = obj.eval(z0);
  if (budget <= 0) {
    out.traj.best_z = z0;
    out.best_scene = scene_of(z0);
    out.best_cloud = cloud_of(out.best_scene);
    return out;
  }
  if (optimizer == "simba") {
    SimbaConfig sc;
    sc.budget = budget;
    sc.eps = eps;
    sc.seed = seed;
    out.traj = optimize_simba(z0, obj, rules, params, schema, model, sc);
  } else if (optimizer == "bo") {
    BoConfig bc;
    bc.budget = budget;
    bc.seed = seed;
    out.traj = optimize_bo(z0, obj, rules, params, schema, model, bc);
  } else {
    throw ConfigError("unknown optimizer '" + optimizer + "'");
  }
  Mat zbest = out.traj.best_iter >= 0 ? out.traj.best_z : z0;
  out.best_scene = scene_of(zbest);
  out.best_cloud = cloud_of(out.best_scene);
  return out;
}

int cmd_attack(const std::string& ckpt, const std::string& layout_spec,
               const std::string& background_path, const std::string& victim_name,
               const std::string& optimizer, int budget, double eps,
               const std::string& rules_spec, double gap_min, double gather_radius, uint64_t seed,
               int point_attack_budget, bool transfer, const std::string& out, bool force) {
  prepare_out_dir(out, force);
  if (!fs::exists(ckpt)) throw ConfigError("missing checkpoint " + ckpt);
  auto [params, hdr] = ParamStore::load(ckpt);
  NodeSchema schema = schema_by_name(hdr.schema);
  if (schema.name != "traffic_scene") throw ConfigError("attack needs a traffic checkpoint");
  ModelConfig model;
  model.latent_dim = hdr.latent_dim;
  model.feature_dim = hdr.feature_dim;
  Mat ones(schema.num_types(), 1);
  ones.fill(1.0);
  schema.ce_weight = ones;
  schema.prior = ones;

  traffic::RoadLayout layout = resolve_layout(layout_spec);
  if (!fs::exists(background_path)) throw ConfigError("missing background " + background_path);
  lidar::BackgroundRangeImage bg = lidar::load_background(background_path);
  lidar::BeamPattern pattern;
  if (!bg.aligned_with(pattern))
    throw ConfigError("background does not match the default beam pattern");
  victim::SegmenterParams vic = resolve_victim(victim_name);
  KnowledgeSet rules = resolve_rules(rules_spec, 0.15, &layout, gap_min, gather_radius);

  AttackOutcome main_run = run_scene_attack(params, schema, model, layout, bg, pattern, vic, rules,
                                            optimizer, budget, eps, seed);
  export_trajectory_csv(main_run.traj, (fs::path(out) / "logs" / "trajectory.csv").string());
  {
    std::ofstream f(fs::path(out) / "artifacts" / "best_scene.json");
    f << tree_to_json(main_run.best_scene, schema).dump(2) << "\n";
  }
  lidar::save_ply(main_run.best_cloud, (fs::path(out) / "artifacts" / "cloud.ply").string());

  auto audit = traffic::audit_scene(main_run.best_scene, layout);
  json audit_j{{"road_dev", audit.worst_road_dev},
               {"dtheta_deg", audit.worst_dtheta_deg},
               {"min_gap", audit.vehicles >= 2 ? audit.worst_gap : -1.0},
               {"gather", audit.worst_gather},
               {"vehicles", audit.vehicles},
               {"pass", rules.empty() ? true : audit.pass(gap_min, gather_radius)}};

  // optional point-attack baseline on the same baseline scene
  json point_j;
  if (point_attack_budget > 0) {
    SceneTree base = decode_numeric(params, seeded_latent(model.latent_dim, seed), schema, model).tree;
    if (!rules.empty()) base = knowledge_rewrite(base, schema, rules);
    auto cloud = lidar::render_scene(traffic::instantiate(base, layout), bg, pattern);
    auto pa = victim::point_attack(cloud, vic, point_attack_budget, 0.05, seed);
    point_j = {{"budget", point_attack_budget},
               {"baseline_iou", pa.iou_curve.empty() ? 1.0 : pa.iou_curve.front()},
               {"best_iou", pa.best_iou}};
    lidar::save_ply(pa.cloud, (fs::path(out) / "artifacts" / "point_attack_cloud.ply").string());
  }

  // transfer report: rows = source victims, columns = target victims
  auto victims = victim::default_victims();
  std::ofstream tr(fs::path(out) / "artifacts" / "transfer_report.csv");
  tr << "source";
  for (const auto& t : victims) tr << "," << t.name;
  tr << "\n";
  tr.precision(6);
  for (const auto& src : victims) {
    tr << src.name;
    bool is_main = src.name == vic.name;
    if (!is_main && !transfer) {
      for (size_t c = 0; c < victims.size(); ++c) tr << ",-";
      tr << "\n";
      continue;
    }
    const lidar::LabeledPointCloud* cloud = &main_run.best_cloud;
    AttackOutcome aux;
    if (!is_main) {
      aux = run_scene_attack(params, schema, model, layout, bg, pattern, src, rules, optimizer,
                             budget, eps, seed);
      cloud = &aux.best_cloud;
    }
    for (const auto& tgt : victims) {
      if (tgt.name == src.name)
        tr << ",source";
      else
        tr << "," << victim::vehicle_iou(*cloud, tgt);
    }
    tr << "\n";
  }
  tr.close();

  json cfgj{{"ckpt", ckpt},       {"layout", layout_spec},     {"background", background_path},
            {"victim", victim_name}, {"optimizer", optimizer}, {"budget", budget},
            {"eps", eps},         {"rules", rules_spec},       {"gap_min", gap_min},
            {"gather_radius", gather_radius},                    {"seed", seed},
            {"point_attack_budget", point_attack_budget},        {"transfer", transfer}};
  write_manifest(out, "attack", cfgj);

  json summary{{"baseline_iou", main_run.baseline_iou},
               {"best_iou", budget > 0 ? main_run.traj.best_task_loss : main_run.baseline_iou},
               {"audit", audit_j},
               {"point_attack", point_j}};
  {
    std::ofstream f(fs::path(out) / "logs" / "attack_summary.json");
    f << summary.dump(2) << "\n";
  }
  std::cout << "baseline IoU " << main_run.baseline_iou << ", best IoU "
            << summary["best_iou"].get<double>() << ", audit "
            << (audit_j["pass"].get<bool>() ? "pass" : "FAIL") << "\n";
  if (main_run.traj.aborted) return kExitRuntime;
  return kExitOk;
}

// --- background ---------------------------------------------------------------------

int cmd_background(const std::string& layout_spec, uint64_t seed, const std::string& out_file) {
  traffic::RoadLayout layout = resolve_layout(layout_spec);
  lidar::BeamPattern pattern;
  lidar::BackgroundRangeImage bg = lidar::make_background(layout, pattern, seed);
  lidar::save_background(bg, out_file);
  std::cout << "wrote background (" << bg.channels << "x" << bg.azimuth_steps << ") to "
            << out_file << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scene-generation engine: tree VAE + knowledge-guided latent optimization"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a scene dataset");
  std::string sd_config, sd_task = "synthetic", sd_out, sd_layout = "intersection";
  int sd_n = 100, sd_copies = 10;
  uint64_t sd_seed = 0;
  bool sd_force = false;
  synth->add_option("--config", sd_config);
  synth->add_option("--task", sd_task);
  synth->add_option("--n", sd_n);
  synth->add_option("--seed", sd_seed);
  synth->add_option("--out", sd_out);
  synth->add_option("--layout", sd_layout);
  synth->add_option("--target-copies", sd_copies);
  synth->add_flag("--force", sd_force);

  // train
  auto* tr = app.add_subcommand("train", "train the tree VAE");
  std::string tr_config, tr_data, tr_out, tr_resume;
  int tr_epochs = 200, tr_latent = 32, tr_feature = 64, tr_batch = 8;
  double tr_lr = 1e-3, tr_beta = 1.0, tr_warm = 0.2;
  uint64_t tr_seed = 0;
  bool tr_force = false;
  tr->add_option("--config", tr_config);
  tr->add_option("--data", tr_data);
  tr->add_option("--out", tr_out);
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--lr", tr_lr);
  tr->add_option("--latent-dim", tr_latent);
  tr->add_option("--feature-dim", tr_feature);
  tr->add_option("--beta-kl", tr_beta);
  tr->add_option("--warmup-frac", tr_warm);
  tr->add_option("--batch-size", tr_batch);
  tr->add_option("--seed", tr_seed);
  tr->add_option("--resume", tr_resume);
  tr->add_flag("--force", tr_force);

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "knowledge-guided scene reconstruction");
  std::string rc_config, rc_ckpt, rc_target, rc_out, rc_rules = "synthetic";
  int rc_budget = 500, rc_imgsize = 64;
  double rc_eta = 0.02, rc_gamma = 0.15, rc_tau = 0.01;
  uint64_t rc_seed = 0;
  bool rc_force = false;
  rec->add_option("--config", rc_config);
  rec->add_option("--ckpt", rc_ckpt);
  rec->add_option("--target", rc_target);
  rec->add_option("--out", rc_out);
  rec->add_option("--budget", rc_budget);
  rec->add_option("--eta", rc_eta);
  rec->add_option("--rules", rc_rules);
  rec->add_option("--gamma", rc_gamma);
  rec->add_option("--image-size", rc_imgsize);
  rec->add_option("--tau", rc_tau);
  rec->add_option("--seed", rc_seed);
  rec->add_flag("--force", rc_force);

  // attack
  auto* atk = app.add_subcommand("attack", "adversarial LiDAR scene attack");
  std::string at_config, at_ckpt, at_layout = "intersection", at_bg, at_victim = "V1";
  std::string at_opt = "simba", at_rules = "traffic", at_out;
  int at_budget = 100, at_pab = 0;
  double at_eps = 0.3, at_gap = 4.0, at_gather = 25.0;
  uint64_t at_seed = 0;
  bool at_force = false, at_transfer = false;
  atk->add_option("--config", at_config);
  atk->add_option("--ckpt", at_ckpt);
  atk->add_option("--layout", at_layout);
  atk->add_option("--background", at_bg);
  atk->add_option("--victim", at_victim);
  atk->add_option("--optimizer", at_opt);
  atk->add_option("--budget", at_budget);
  atk->add_option("--eps", at_eps);
  atk->add_option("--rules", at_rules);
  atk->add_option("--gap-min", at_gap);
  atk->add_option("--gather-radius", at_gather);
  atk->add_option("--seed", at_seed);
  atk->add_option("--point-attack-budget", at_pab);
  atk->add_flag("--transfer", at_transfer);
  atk->add_option("--out", at_out);
  atk->add_flag("--force", at_force);

  // background
  auto* bgc = app.add_subcommand("background", "generate a background range image");
  std::string bg_layout = "intersection", bg_out;
  uint64_t bg_seed = 0;
  bgc->add_option("--layout", bg_layout);
  bgc->add_option("--seed", bg_seed);
  bgc->add_option("--out", bg_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (synth->parsed()) {
      ConfigMerge cm(synth);
      cm.key("task", &sd_task);
      cm.key("n", &sd_n);
      cm.key("seed", &sd_seed);
      cm.key("out", &sd_out);
      cm.key("layout", &sd_layout);
      cm.key("target-copies", &sd_copies);
      cm.apply(sd_config);
      if (sd_out.empty()) throw ConfigError("--out is required");
      return cmd_synth_data(sd_task, sd_n, sd_seed, sd_out, sd_layout, sd_copies, sd_force);
    }
    if (tr->parsed()) {
      ConfigMerge cm(tr);
      cm.key("data", &tr_data);
      cm.key("out", &tr_out);
      cm.key("epochs", &tr_epochs);
      cm.key("lr", &tr_lr);
      cm.key("latent-dim", &tr_latent);
      cm.key("feature-dim", &tr_feature);
      cm.key("beta-kl", &tr_beta);
      cm.key("warmup-frac", &tr_warm);
      cm.key("batch-size", &tr_batch);
      cm.key("seed", &tr_seed);
      cm.key("resume", &tr_resume);
      cm.apply(tr_config);
      if (tr_data.empty() || tr_out.empty()) throw ConfigError("--data and --out are required");
      return cmd_train(tr_data, tr_out, tr_epochs, tr_lr, tr_latent, tr_feature, tr_beta, tr_warm,
                       tr_batch, tr_seed, tr_resume, tr_force);
    }
    if (rec->parsed()) {
      ConfigMerge cm(rec);
      cm.key("ckpt", &rc_ckpt);
      cm.key("target", &rc_target);
      cm.key("out", &rc_out);
      cm.key("budget", &rc_budget);
      cm.key("eta", &rc_eta);
      cm.key("rules", &rc_rules);
      cm.key("gamma", &rc_gamma);
      cm.key("image-size", &rc_imgsize);
      cm.key("tau", &rc_tau);
      cm.key("seed", &rc_seed);
      cm.apply(rc_config);
      if (rc_ckpt.empty() || rc_target.empty() || rc_out.empty())
        throw ConfigError("--ckpt, --target and --out are required");
      return cmd_reconstruct(rc_ckpt, rc_target, rc_out, rc_budget, rc_eta, rc_rules, rc_gamma,
                             rc_imgsize, rc_tau, rc_seed, rc_force);
    }
    if (atk->parsed()) {
      ConfigMerge cm(atk);
      cm.key("ckpt", &at_ckpt);
      cm.key("layout", &at_layout);
      cm.key("background", &at_bg);
      cm.key("victim", &at_victim);
      cm.key("optimizer", &at_opt);
      cm.key("budget", &at_budget);
      cm.key("eps", &at_eps);
      cm.key("rules", &at_rules);
      cm.key("gap-min", &at_gap);
      cm.key("gather-radius", &at_gather);
      cm.key("seed", &at_seed);
      cm.key("point-attack-budget", &at_pab);
      cm.key("out", &at_out);
      cm.apply(at_config);
      if (at_ckpt.empty() || at_bg.empty() || at_out.empty())
        throw ConfigError("--ckpt, --background and --out are required");
      return cmd_attack(at_ckpt, at_layout, at_bg, at_victim, at_opt, at_budget, at_eps, at_rules,
                        at_gap, at_gather, at_seed, at_pab, at_transfer, at_out, at_force);
    }
    if (bgc->parsed()) {
      if (bg_out.empty()) throw ConfigError("--out is required");
      return cmd_background(bg_layout, bg_seed, bg_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
