#pragma once

// Stage-2 drivers: interleave task-loss optimization over the latent code with
// the knowledge projection, under an evaluation budget.
//
//   optimize_gd    - gradient descent on a differentiable task loss, prox
//                    applied every iteration
//   optimize_simba - coordinate-descent black-box search (+/- eps per unused
//                    coordinate, keep what helps), prox every k accepted steps
//   optimize_bo    - GP surrogate with a lower-confidence-bound acquisition;
//                    proposals are prox-projected before evaluation, so every
//                    evaluated scene is knowledge-compliant
//
// Budgets count objective evaluations for the black-box modes and iterations
// for the gradient mode. The best iterate is ranked by the augmented loss
// L_a = L_t + L_Y.

#include <chrono>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "scg/gp.hpp"
#include "scg/knowledge.hpp"
#include "scg/tvae.hpp"

namespace scg {

struct DifferentiableObjective {
  // Builds the scalar task loss for the decode of z on the given tape.
  std::function<ad::Value(ad::Tape&, ad::Value z)> build;
};

struct BlackBoxObjective {
  std::function<double(const Mat& z)> eval;
};

struct TrajectoryPoint {
  int iter = 0;
  double task_loss = 0.0;
  double knowledge_loss = 0.0;
  int budget = 0;  // evaluations (black-box) or iterations (gradient) spent so far
  double wall_ms = 0.0;
  Mat z;
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;
  Mat best_z;
  double best_task_loss = std::numeric_limits<double>::infinity();
  double best_augmented = std::numeric_limits<double>::infinity();
  int best_iter = -1;
  int evals_used = 0;
  bool aborted = false;
  std::string abort_reason;

  void consider(const Mat& z, double lt, double ly, int iter) {
    double la = lt + ly;
    if (la < best_augmented) {
      best_augmented = la;
      best_task_loss = lt;
      best_z = z;
      best_iter = iter;
    }
  }
};

inline void export_trajectory_csv(const Trajectory& t, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("trajectory: cannot open " + path);
  f << "iter,task_loss,knowledge_loss,budget,wall_ms\n";
  f.precision(17);
  for (const auto& p : t.points)
    f << p.iter << "," << p.task_loss << "," << p.knowledge_loss << "," << p.budget << ","
      << p.wall_ms << "\n";
}

namespace detail_opt {

inline double now_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

inline double knowledge_value(const Mat& z, const KnowledgeSet& rules, const ParamStore& ps,
                              const NodeSchema& s, const ModelConfig& cfg) {
  if (rules.empty()) return 0.0;
  return knowledge_loss_at(z, rules, ps, s, cfg).value;
}

}  // namespace detail_opt

// --- gradient branch -----------------------------------------------------------------

struct GdConfig {
  int budget = 500;  // iterations
  double eta = 0.02;
  ProxConfig prox;
};

inline Trajectory optimize_gd(const Mat& z0, const DifferentiableObjective& obj,
                              const KnowledgeSet& rules, const ParamStore& ps,
                              const NodeSchema& s, const ModelConfig& cfg, const GdConfig& gd) {
  auto t0 = std::chrono::steady_clock::now();
  Trajectory traj;
  Mat z = z0;
  for (int it = 0; it < gd.budget; ++it) {
    Mat grad;
    try {
      ad::Tape tape;
      ad::Value zv = tape.param("z", z);
      ad::Value loss = obj.build(tape, zv);
      double lt = tape.val(loss)[0];
      if (!std::isfinite(lt)) throw std::runtime_error("non-finite task loss");
      grad = tape.forward_backward(loss)["z"];
    } catch (const std::runtime_error& e) {
      traj.aborted = true;
      traj.abort_reason = e.what();
      return traj;
    }
    for (int i = 0; i < z.size(); ++i) z.a[i] -= gd.eta * grad.a[i];
    ProxResult pr = prox(z, rules, ps, s, cfg, gd.prox);
    z = pr.z;

    // evaluate the post-prox iterate for the record
    double lt_now;
    try {
      ad::Tape tape;
      ad::Value loss = obj.build(tape, tape.constant(z));
      lt_now = tape.val(loss)[0];
    } catch (const std::runtime_error& e) {
      traj.aborted = true;
      traj.abort_reason = e.what();
      return traj;
    }
    double ly_now = rules.empty() ? 0.0 : pr.ly_exit;
    traj.points.push_back({it, lt_now, ly_now, it + 1, detail_opt::now_ms(t0), z});
    traj.consider(z, lt_now, ly_now, it);
    if (!std::isfinite(lt_now)) {
      traj.aborted = true;
      traj.abort_reason = "non-finite task loss";
      return traj;
    }
  }
  traj.evals_used = gd.budget;
  return traj;
}

// --- SimBA branch ----------------------------------------------------------------------

struct SimbaConfig {
  int budget = 300;   // objective evaluations
  double eps = 0.3;   // coordinate step
  int prox_every = 5; // accepted steps between projections
  uint64_t seed = 0;
};

inline Trajectory optimize_simba(const Mat& z0, const BlackBoxObjective& obj,
                                 const KnowledgeSet& rules, const ParamStore& ps,
                                 const NodeSchema& s, const ModelConfig& cfg,
                                 const SimbaConfig& sc, const ProxConfig& pcfg = ProxConfig{}) {
  auto t0 = std::chrono::steady_clock::now();
  Trajectory traj;
  traj.best_z = z0;
  if (sc.budget <= 0) return traj;
  Rng rng = Rng::substream(sc.seed, "simba");
  Mat z = z0;
  int evals = 0;

  auto evaluate = [&](const Mat& zz) {
    double v = obj.eval(zz);
    ++evals;
    traj.evals_used = evals;
    double ly = detail_opt::knowledge_value(zz, rules, ps, s, cfg);
    traj.points.push_back({evals - 1, v, ly, evals, detail_opt::now_ms(t0), zz});
    traj.consider(zz, v, ly, evals - 1);
    return v;
  };

  double cur = evaluate(z);
  if (!std::isfinite(cur)) {
    traj.aborted = true;
    traj.abort_reason = "non-finite task loss";
    return traj;
  }

  std::vector<int> order(z.size());
  for (int i = 0; i < z.size(); ++i) order[i] = i;
  rng.shuffle(order);
  size_t cursor = 0;
  int accepted = 0;

  while (evals < sc.budget) {
    if (cursor >= order.size()) {
      rng.shuffle(order);
      cursor = 0;
    }
    int coord = order[cursor++];
    bool kept = false;
    for (double sign : {+1.0, -1.0}) {
      if (evals >= sc.budget) return traj;
      Mat cand = z;
      cand.a[coord] += sign * sc.eps;
      double v = evaluate(cand);
      if (v < cur) {
        z = std::move(cand);
        cur = v;
        kept = true;
        ++accepted;
        break;
      }
    }
    if (kept && !rules.empty() && sc.prox_every > 0 && accepted % sc.prox_every == 0) {
      z = prox(z, rules, ps, s, cfg, pcfg).z;
      if (evals >= sc.budget) return traj;
      cur = evaluate(z);
    }
  }
  traj.evals_used = evals;
  return traj;
}

// --- Bayesian optimization branch ---------------------------------------------------------

struct BoConfig {
  int budget = 60;      // objective evaluations, init samples included
  int init_samples = 10;
  double length_scale = 1.5;
  double kappa = 2.0;   // acquisition = mu - kappa * sigma
  double noise_var = 1e-6;
  double bound = 3.0;   // proposals kept inside [-bound, bound]^d
  int candidates = 256; // random multi-start size
  int refine_steps = 20;
  uint64_t seed = 0;
};

inline Trajectory optimize_bo(const Mat& z0, const BlackBoxObjective& obj,
                              const KnowledgeSet& rules, const ParamStore& ps,
                              const NodeSchema& s, const ModelConfig& cfg, const BoConfig& bc,
                              const ProxConfig& pcfg = ProxConfig{}) {
  auto t0 = std::chrono::steady_clock::now();
  Trajectory traj;
  traj.best_z = z0;
  if (bc.budget <= 0) return traj;
  Rng rng = Rng::substream(bc.seed, "bo");
  const int d = z0.size();
  int evals = 0;
  std::vector<Mat> xs;
  std::vector<double> ys;

  auto project = [&](Mat z) {
    for (double& v : z.a) v = std::min(bc.bound, std::max(-bc.bound, v));
    if (!rules.empty()) z = prox(z, rules, ps, s, cfg, pcfg).z;
    return z;
  };
  auto evaluate = [&](const Mat& zz) {
    double v = obj.eval(zz);
    ++evals;
    traj.evals_used = evals;
    double ly = detail_opt::knowledge_value(zz, rules, ps, s, cfg);
    traj.points.push_back({evals - 1, v, ly, evals, detail_opt::now_ms(t0), zz});
    traj.consider(zz, v, ly, evals - 1);
    xs.push_back(zz);
    ys.push_back(v);
    return v;
  };

  // initial design: z0 plus random prior draws
  evaluate(project(z0));
  for (int i = 1; i < bc.init_samples && evals < bc.budget; ++i) {
    Mat z(d, 1);
    for (double& v : z.a) v = rng.normal();
    evaluate(project(z));
  }

  GpConfig gpc;
  gpc.length_scale = bc.length_scale;
  gpc.noise_var = bc.noise_var;
  while (evals < bc.budget) {
    GaussianProcess gp(gpc);
    try {
      gp.fit(xs, ys);
    } catch (const std::runtime_error& e) {
      traj.aborted = true;
      traj.abort_reason = e.what();
      return traj;
    }
    auto acq = [&](const Mat& x) {
      auto [mu, var] = gp.predict(x);
      return mu - bc.kappa * std::sqrt(var);
    };
    // random multi-start
    Mat best_x(d, 1);
    double best_a = std::numeric_limits<double>::infinity();
    int best_data = 0;
    for (size_t i = 1; i < ys.size(); ++i)
      if (ys[i] < ys[best_data]) best_data = static_cast<int>(i);
    for (int c = 0; c < bc.candidates; ++c) {
      Mat x(d, 1);
      if (c % 3 == 0) {
        for (int i = 0; i < d; ++i)
          x.a[i] = std::min(bc.bound, std::max(-bc.bound, xs[best_data].a[i] + 0.3 * rng.normal()));
      } else {
        for (double& v : x.a) v = rng.uniform(-bc.bound, bc.bound);
      }
      double a = acq(x);
      if (a < best_a) {
        best_a = a;
        best_x = std::move(x);
      }
    }
    // local refinement: coordinate perturbations with a shrinking radius
    double radius = 0.4;
    for (int r = 0; r < bc.refine_steps; ++r) {
      Mat cand = best_x;
      int coord = static_cast<int>(rng.uniform_int(d));
      cand.a[coord] =
          std::min(bc.bound, std::max(-bc.bound, cand.a[coord] + radius * rng.normal()));
      double a = acq(cand);
      if (a < best_a) {
        best_a = a;
        best_x = std::move(cand);
      }
      radius *= 0.9;
    }
    evaluate(project(best_x));
  }
  traj.evals_used = evals;
  return traj;
}

}  // namespace scg
