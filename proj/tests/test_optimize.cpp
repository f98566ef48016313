#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "scg/optimize.hpp"
#include "scg/synthetic.hpp"

using namespace scg;

namespace {

struct Fixture {
  NodeSchema schema = synthetic::box_schema();
  ModelConfig model;
  ParamStore params;
};

const Fixture& fx() {
  static Fixture* f = [] {
    auto* x = new Fixture;
    x->model.latent_dim = 8;
    x->model.feature_dim = 16;
    std::vector<SceneTree> data;
    Rng rng(2);
    for (int i = 0; i < 8; ++i) data.push_back(synthetic::gen_scene(rng));
    class_prior(data, x->schema);
    Rng ir(3);
    x->params = init_params(x->schema, x->model, ir);
    return x;
  }();
  return *f;
}

Mat zvec(int d, uint64_t seed) {
  Rng rng(seed);
  Mat z(d, 1);
  for (double& x : z.a) x = rng.normal();
  return z;
}

}  // namespace

TEST_CASE("gradient descent on a quadratic converges to the target") {
  const int d = 8;
  Mat target = zvec(d, 4);
  DifferentiableObjective obj;
  obj.build = [&](ad::Tape& t, ad::Value z) { return t.squared_error(z, target); };
  GdConfig gd;
  gd.budget = 500;
  gd.eta = 0.05;
  Trajectory traj = optimize_gd(zvec(d, 5), obj, {}, fx().params, fx().schema, fx().model, gd);
  REQUIRE(static_cast<int>(traj.points.size()) == gd.budget);
  CHECK(traj.points.back().task_loss < 1e-3);
  CHECK(traj.best_task_loss < 1e-3);
}

TEST_CASE("zero learning rate with no rules leaves z unchanged") {
  const int d = 6;
  Mat z0 = zvec(d, 7);
  DifferentiableObjective obj;
  obj.build = [&](ad::Tape& t, ad::Value z) { return t.sum(t.mul(z, z)); };
  GdConfig gd;
  gd.budget = 10;
  gd.eta = 0.0;
  Trajectory traj = optimize_gd(z0, obj, {}, fx().params, fx().schema, fx().model, gd);
  for (const auto& p : traj.points) CHECK(p.z == z0);
}

TEST_CASE("with empty rules optimize_gd equals a plain GD loop bit for bit") {
  const int d = 8;
  Mat target = zvec(d, 9);
  DifferentiableObjective obj;
  obj.build = [&](ad::Tape& t, ad::Value z) { return t.squared_error(z, target); };
  GdConfig gd;
  gd.budget = 50;
  gd.eta = 0.03;
  Trajectory traj = optimize_gd(zvec(d, 10), obj, {}, fx().params, fx().schema, fx().model, gd);

  Mat z = zvec(d, 10);
  for (int it = 0; it < gd.budget; ++it) {
    ad::Tape tape;
    ad::Value zv = tape.param("z", z);
    Mat g = tape.forward_backward(tape.squared_error(zv, target))["z"];
    for (int i = 0; i < d; ++i) z.a[i] -= gd.eta * g.a[i];
    CHECK(traj.points[it].z == z);
  }
}

TEST_CASE("budget accounting is exact under a counting wrapper") {
  const int d = 5;
  int calls = 0;
  BlackBoxObjective obj;
  obj.eval = [&](const Mat& z) {
    ++calls;
    return dot(z, z);
  };
  SECTION("simba") {
    SimbaConfig sc;
    sc.budget = 37;
    sc.seed = 3;
    Trajectory t = optimize_simba(zvec(d, 1), obj, {}, fx().params, fx().schema, fx().model, sc);
    CHECK(calls == 37);
    CHECK(t.evals_used == 37);
    CHECK(static_cast<int>(t.points.size()) == 37);
  }
  SECTION("bo") {
    calls = 0;
    BoConfig bc;
    bc.budget = 18;
    bc.init_samples = 6;
    bc.seed = 4;
    Trajectory t = optimize_bo(zvec(d, 2), obj, {}, fx().params, fx().schema, fx().model, bc);
    CHECK(calls == 18);
    CHECK(t.evals_used == 18);
  }
}

TEST_CASE("best-so-far augmented loss is non-increasing along trajectories") {
  const int d = 6;
  BlackBoxObjective obj;
  obj.eval = [&](const Mat& z) { return std::sin(z[0] * 3.0) + dot(z, z) * 0.1; };
  SimbaConfig sc;
  sc.budget = 60;
  sc.seed = 8;
  Trajectory t = optimize_simba(zvec(d, 3), obj, {}, fx().params, fx().schema, fx().model, sc);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : t.points) {
    best = std::min(best, p.task_loss + p.knowledge_loss);
    CHECK(best <= p.task_loss + p.knowledge_loss);
  }
  CHECK(t.best_augmented == best);
}

TEST_CASE("simba zeroes a separable quadratic coordinate on its first accepted step") {
  const int d = 4;
  const double eps = 0.3;
  Mat z0(d, 1);
  z0[0] = eps;  // only coordinate 0 contributes
  BlackBoxObjective obj;
  obj.eval = [&](const Mat& z) { return dot(z, z); };
  SimbaConfig sc;
  sc.budget = 2 * d + 1;
  sc.eps = eps;
  sc.seed = 5;
  Trajectory t = optimize_simba(z0, obj, {}, fx().params, fx().schema, fx().model, sc);
  CHECK(t.best_task_loss == Catch::Approx(0.0).margin(1e-18));
  CHECK(std::abs(t.best_z[0]) < 1e-15);
}

TEST_CASE("simba consumes two evaluations when neither direction improves") {
  const int d = 3;
  BlackBoxObjective obj;
  obj.eval = [](const Mat&) { return 1.0; };  // flat objective, nothing improves
  SimbaConfig sc;
  sc.budget = 3;  // baseline + one +/- pair
  sc.seed = 2;
  Mat z0 = zvec(d, 11);
  Trajectory t = optimize_simba(z0, obj, {}, fx().params, fx().schema, fx().model, sc);
  CHECK(t.evals_used == 3);
  // the pair was rejected: final best z is the starting point
  CHECK(t.best_z == z0);
}

TEST_CASE("simba with zero budget does nothing") {
  BlackBoxObjective obj;
  int calls = 0;
  obj.eval = [&](const Mat&) {
    ++calls;
    return 0.0;
  };
  SimbaConfig sc;
  sc.budget = 0;
  Trajectory t = optimize_simba(zvec(3, 1), obj, {}, fx().params, fx().schema, fx().model, sc);
  CHECK(calls == 0);
  CHECK(t.points.empty());
}

TEST_CASE("bo with budget equal to init samples is pure random search") {
  const int d = 4;
  BlackBoxObjective obj;
  obj.eval = [](const Mat& z) { return dot(z, z); };
  BoConfig bc;
  bc.budget = 8;
  bc.init_samples = 8;
  bc.seed = 6;
  Trajectory t = optimize_bo(zvec(d, 12), obj, {}, fx().params, fx().schema, fx().model, bc);
  CHECK(t.evals_used == 8);
  CHECK(static_cast<int>(t.points.size()) == 8);
}

TEST_CASE("bo is deterministic for a fixed seed") {
  const int d = 3;
  BlackBoxObjective obj;
  obj.eval = [](const Mat& z) { return std::sin(3.0 * z[0]) + dot(z, z) * 0.2; };
  BoConfig bc;
  bc.budget = 20;
  bc.init_samples = 6;
  bc.seed = 13;
  Trajectory a = optimize_bo(zvec(d, 1), obj, {}, fx().params, fx().schema, fx().model, bc);
  Trajectory b = optimize_bo(zvec(d, 1), obj, {}, fx().params, fx().schema, fx().model, bc);
  REQUIRE(a.points.size() == b.points.size());
  for (size_t i = 0; i < a.points.size(); ++i) {
    CHECK(a.points[i].task_loss == b.points[i].task_loss);
    CHECK(a.points[i].z == b.points[i].z);
  }
}

TEST_CASE("bo finds the minimum of sin(3x)+x^2 within 0.05 on most seeds") {
  // brute-force grid oracle for the true minimum on [-2, 2]
  auto f1 = [](double x) { return std::sin(3.0 * x) + x * x; };
  double fstar = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 4000; ++i) fstar = std::min(fstar, f1(-2.0 + 4.0 * i / 4000.0));

  const int d = 2;  // embedded: only z[0] matters
  BlackBoxObjective obj;
  obj.eval = [&](const Mat& z) { return f1(z[0]); };
  int hits = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    BoConfig bc;
    bc.budget = 30;
    bc.init_samples = 8;
    bc.bound = 2.0;
    bc.length_scale = 0.8;
    bc.seed = seed;
    Trajectory t = optimize_bo(zvec(d, 100 + seed), obj, {}, fx().params, fx().schema, fx().model, bc);
    if (std::abs(t.best_task_loss - fstar) <= 0.05) ++hits;
  }
  CHECK(hits >= 8);
}

TEST_CASE("gd aborts on a non-finite task loss and returns the trajectory so far") {
  DifferentiableObjective obj;
  int n = 0;
  obj.build = [&](ad::Tape& t, ad::Value z) {
    ++n;
    if (n > 6) {
      Mat bad(1, 1);
      bad[0] = std::numeric_limits<double>::quiet_NaN();
      return t.sum(t.mul(t.sum(z), t.constant(bad)));
    }
    return t.sum(t.mul(z, z));
  };
  GdConfig gd;
  gd.budget = 10;
  Trajectory t = optimize_gd(zvec(4, 2), obj, {}, fx().params, fx().schema, fx().model, gd);
  CHECK(t.aborted);
  CHECK(t.points.size() < 10);
}

TEST_CASE("trajectory export writes the documented header and one row per point") {
  Trajectory t;
  t.points.push_back({0, 1.5, 0.25, 1, 3.0, Mat::vec({0.0})});
  t.points.push_back({1, 1.25, 0.125, 2, 6.0, Mat::vec({0.1})});
  std::string path = "traj_test.csv";
  export_trajectory_csv(t, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "iter,task_loss,knowledge_loss,budget,wall_ms");
  int rows = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  std::remove(path.c_str());
}
