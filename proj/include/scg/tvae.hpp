#pragma once

// Tree-structured variational autoencoder.
//
// One encoder/decoder pair per node type, composed recursively along each
// tree's topology. Encoding runs bottom-up: a node's feature is a two-layer
// tanh MLP over its children's features and (padded) property vectors; leaf
// types use a learned embedding. The root feature feeds a Sampler producing
// (z_mu, half-log-variance). Decoding runs top-down: a node's decoder emits a
// feature and a property block per child slot; a shared Classifier turns child
// features into type logits. Training expands along the ground-truth topology
// (teacher forcing); generation expands the argmax type until Stop or D_max.
//
// Property blocks are padded to the schema-wide max length so decoder heads
// have fixed width; per-type masks select the meaningful slots in the losses.
// Unit slots pass through a sigmoid at decode, linear slots stay raw.

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "scg/autodiff.hpp"
#include "scg/params.hpp"
#include "scg/rng.hpp"
#include "scg/schema.hpp"

namespace scg {

struct ModelConfig {
  int latent_dim = 32;
  int feature_dim = 64;
};

inline std::string enc_name(const NodeSchema& s, int t, const char* part) {
  return "enc." + s.type(t).name + "." + part;
}
inline std::string dec_name(const NodeSchema& s, int t, const char* part) {
  return "dec." + s.type(t).name + "." + part;
}

inline ParamStore init_params(const NodeSchema& schema, const ModelConfig& cfg, Rng& rng) {
  if (schema.type(schema.root_type).prop_len() != 0)
    throw std::invalid_argument("tvae: root type must have no properties");
  const int F = cfg.feature_dim;
  const int P = schema.max_prop_len();
  ParamStore ps;
  for (const auto& t : schema.types) {
    if (t.arity == 0) {
      ps.add(enc_name(schema, t.id, "embed"), glorot(F, 1, rng));
      continue;
    }
    int in = t.arity * (F + P);
    int out = t.arity * (F + P);
    ps.add(enc_name(schema, t.id, "W1"), glorot(F, in, rng));
    ps.add(enc_name(schema, t.id, "b1"), Mat(F, 1));
    ps.add(enc_name(schema, t.id, "W2"), glorot(F, F, rng));
    ps.add(enc_name(schema, t.id, "b2"), Mat(F, 1));
    ps.add(dec_name(schema, t.id, "W1"), glorot(F, F, rng));
    ps.add(dec_name(schema, t.id, "b1"), Mat(F, 1));
    ps.add(dec_name(schema, t.id, "W2"), glorot(out, F, rng));
    ps.add(dec_name(schema, t.id, "b2"), Mat(out, 1));
  }
  ps.add("cls.W", glorot(schema.num_types(), F, rng));
  ps.add("cls.b", Mat(schema.num_types(), 1));
  ps.add("smp.mu.W", glorot(cfg.latent_dim, F, rng));
  ps.add("smp.mu.b", Mat(cfg.latent_dim, 1));
  ps.add("smp.lv.W", glorot(cfg.latent_dim, F, rng));
  ps.add("smp.lv.b", Mat(cfg.latent_dim, 1));
  ps.add("dec.root.W", glorot(cfg.feature_dim, cfg.latent_dim, rng));
  ps.add("dec.root.b", Mat(cfg.feature_dim, 1));
  return ps;
}

// --- encoder --------------------------------------------------------------------

inline Mat padded_props(const TreeNode& n, int P) {
  Mat g(P, 1);
  for (size_t i = 0; i < n.props.size(); ++i) g[static_cast<int>(i)] = n.props[i];
  return g;
}

inline ad::Value encode_node(ad::Tape& tape, ParamBinder& w, const TreeNode& n,
                             const NodeSchema& s, const ModelConfig& cfg) {
  const NodeType& t = s.type(n.type);
  if (t.arity == 0) return tape.tanh_(w(enc_name(s, n.type, "embed")));
  const int P = s.max_prop_len();
  std::vector<ad::Value> parts;
  for (const auto& c : n.children) parts.push_back(encode_node(tape, w, c, s, cfg));
  for (const auto& c : n.children) parts.push_back(tape.constant(padded_props(c, P)));
  ad::Value x = tape.concat(std::span<const ad::Value>(parts));
  ad::Value h = tape.tanh_(tape.add(tape.matvec(w(enc_name(s, n.type, "W1")), x),
                                    w(enc_name(s, n.type, "b1"))));
  return tape.tanh_(tape.add(tape.matvec(w(enc_name(s, n.type, "W2")), h),
                             w(enc_name(s, n.type, "b2"))));
}

struct LatentHeads {
  ad::Value mu;
  ad::Value half_logvar;
};

inline LatentHeads encode(ad::Tape& tape, ParamBinder& w, const SceneTree& tree,
                          const NodeSchema& s, const ModelConfig& cfg) {
  validate(tree, s);
  ad::Value f = encode_node(tape, w, tree.root, s, cfg);
  ad::Value mu = tape.add(tape.matvec(w("smp.mu.W"), f), w("smp.mu.b"));
  ad::Value lv = tape.add(tape.matvec(w("smp.lv.W"), f), w("smp.lv.b"));
  return {mu, lv};
}

// Convenience: (z_mu, z_sigma) as plain arrays.
inline std::pair<Mat, Mat> encode_numeric(const ParamStore& ps, const SceneTree& tree,
                                          const NodeSchema& s, const ModelConfig& cfg) {
  ad::Tape tape;
  ParamBinder w(tape, ps);
  LatentHeads lh = encode(tape, w, tree, s, cfg);
  Mat mu = tape.val(lh.mu);
  Mat sigma = tape.val(lh.half_logvar);
  for (double& x : sigma.a) x = std::exp(x);
  if (!mu.all_finite() || !sigma.all_finite()) throw std::runtime_error("encode: non-finite output");
  return {mu, sigma};
}

// --- decoder --------------------------------------------------------------------

struct TraceNode {
  int type = 0;
  int parent = -1;
  std::vector<int> children;  // indices into DecodeTrace::nodes
  std::vector<int> path;
  ad::Value feature;
  ad::Value pred_props;  // padded length P, squashed per the node's type; invalid at root
  ad::Value logits;      // length M; invalid at root
};

struct DecodeTrace {
  std::vector<TraceNode> nodes;  // preorder, nodes[0] is the root
  SceneTree tree;                // materialized scene (numeric property values)
  bool truncated = false;        // FreeRunning hit D_max

  int index_at(const std::vector<int>& path) const {
    int cur = 0;
    for (int i : path) {
      const auto& kids = nodes[cur].children;
      if (i < 0 || i >= static_cast<int>(kids.size())) return -1;
      cur = kids[i];
    }
    return cur;
  }
};

namespace detail_tvae {

struct DecodeCtx {
  ad::Tape& tape;
  ParamBinder& w;
  const NodeSchema& s;
  const ModelConfig& cfg;
  const SceneTree* teacher = nullptr;  // null = free-running
  DecodeTrace* trace = nullptr;
};

// Squash a raw P-length property block for a node of the given type.
inline ad::Value squash_props(ad::Tape& tape, ad::Value raw, const NodeType& t, int P) {
  std::vector<ad::Value> parts;
  for (int i = 0; i < P; ++i) {
    ad::Value s = tape.slice(raw, i, 1);
    if (i < t.prop_len() && t.slot_kinds[i] == SlotKind::Unit) s = tape.sigmoid(s);
    parts.push_back(s);
  }
  return tape.concat(std::span<const ad::Value>(parts));
}

inline void decode_node(DecodeCtx& ctx, int trace_idx, TreeNode& out, int depth) {
  const NodeSchema& s = ctx.s;
  const int F = ctx.cfg.feature_dim;
  const int P = s.max_prop_len();
  // copies: pushing children below may reallocate the trace node vector
  const int node_type = ctx.trace->nodes[trace_idx].type;
  const std::vector<int> node_path = ctx.trace->nodes[trace_idx].path;
  const ad::Value node_feature = ctx.trace->nodes[trace_idx].feature;
  const ad::Value node_pred = ctx.trace->nodes[trace_idx].pred_props;
  const NodeType& t = s.type(node_type);
  out.type = node_type;
  if (node_pred.valid()) {
    const Mat& pp = ctx.tape.val(node_pred);
    if (!pp.all_finite()) throw std::runtime_error("decode: non-finite activation");
    out.props.assign(pp.a.begin(), pp.a.begin() + t.prop_len());
  }
  if (t.arity == 0) return;

  ad::Value h = ctx.tape.tanh_(ctx.tape.add(
      ctx.tape.matvec(ctx.w(dec_name(s, node_type, "W1")), node_feature),
      ctx.w(dec_name(s, node_type, "b1"))));
  ad::Value block = ctx.tape.add(
      ctx.tape.matvec(ctx.w(dec_name(s, node_type, "W2")), h),
      ctx.w(dec_name(s, node_type, "b2")));

  const TreeNode* teacher_node = ctx.teacher ? ctx.teacher->at_path(node_path) : nullptr;
  out.children.resize(t.arity);
  for (int k = 0; k < t.arity; ++k) {
    ad::Value f_k = ctx.tape.tanh_(ctx.tape.slice(block, k * F, F));
    if (!ctx.tape.val(f_k).all_finite()) throw std::runtime_error("decode: non-finite activation");
    ad::Value raw_g = ctx.tape.slice(block, t.arity * F + k * P, P);
    ad::Value logits = ctx.tape.add(ctx.tape.matvec(ctx.w("cls.W"), f_k), ctx.w("cls.b"));

    int child_type;
    if (teacher_node) {
      child_type = teacher_node->children[k].type;
    } else {
      const Mat& l = ctx.tape.val(logits);
      int best = 0;
      for (int i = 1; i < l.rows; ++i)
        if (l[i] > l[best]) best = i;
      child_type = best;
      if (depth + 1 >= s.max_depth && s.type(child_type).arity > 0) {
        child_type = s.stop_type;
        ctx.trace->truncated = true;
      }
    }

    TraceNode child;
    child.type = child_type;
    child.parent = trace_idx;
    child.path = node_path;
    child.path.push_back(k);
    child.feature = f_k;
    child.logits = logits;
    child.pred_props = squash_props(ctx.tape, raw_g, s.type(child_type), P);
    ctx.trace->nodes.push_back(std::move(child));
    int child_idx = static_cast<int>(ctx.trace->nodes.size()) - 1;
    ctx.trace->nodes[trace_idx].children.push_back(child_idx);
    decode_node(ctx, child_idx, out.children[k], depth + 1);
  }
}

}  // namespace detail_tvae

struct TeacherForced {
  const SceneTree* tree;
};
struct FreeRunning {};

inline DecodeTrace decode(ad::Tape& tape, ParamBinder& w, ad::Value z, const NodeSchema& s,
                          const ModelConfig& cfg, const SceneTree* teacher) {
  DecodeTrace trace;
  trace.tree.schema_name = s.name;
  ad::Value f_root = tape.tanh_(tape.add(tape.matvec(w("dec.root.W"), z), w("dec.root.b")));
  if (!tape.val(f_root).all_finite()) throw std::runtime_error("decode: non-finite activation");
  TraceNode root;
  root.type = s.root_type;
  root.feature = f_root;
  trace.nodes.push_back(std::move(root));
  detail_tvae::DecodeCtx ctx{tape, w, s, cfg, teacher ? teacher : nullptr, &trace};
  if (teacher) validate(*teacher, s);
  detail_tvae::decode_node(ctx, 0, trace.tree.root, 1);
  return trace;
}

inline DecodeTrace decode(ad::Tape& tape, ParamBinder& w, ad::Value z, const NodeSchema& s,
                          const ModelConfig& cfg, TeacherForced mode) {
  return decode(tape, w, z, s, cfg, mode.tree);
}
inline DecodeTrace decode(ad::Tape& tape, ParamBinder& w, ad::Value z, const NodeSchema& s,
                          const ModelConfig& cfg, FreeRunning) {
  return decode(tape, w, z, s, cfg, nullptr);
}

// Free-running decode of a plain latent vector.
inline DecodeTrace decode_numeric(const ParamStore& ps, const Mat& z, const NodeSchema& s,
                                  const ModelConfig& cfg) {
  ad::Tape tape;
  ParamBinder w(tape, ps);
  return decode(tape, w, tape.constant(z), s, cfg, FreeRunning{});
}

// --- class prior ------------------------------------------------------------------

// Empirical node-type frequencies with add-one smoothing; CE weights are the
// inverse frequencies normalized to mean 1.
inline void class_prior(const std::vector<SceneTree>& dataset, NodeSchema& s) {
  if (dataset.empty()) throw std::invalid_argument("class_prior: empty dataset");
  const int M = s.num_types();
  std::vector<int64_t> counts(M, 0);
  int64_t total = 0;
  for (const auto& t : dataset)
    walk(t, [&](const TreeNode& n, const std::vector<int>&) {
      ++counts[n.type];
      ++total;
    });
  s.prior = Mat(M, 1);
  s.ce_weight = Mat(M, 1);
  double wsum = 0.0;
  for (int m = 0; m < M; ++m) {
    s.prior[m] = static_cast<double>(counts[m] + 1) / static_cast<double>(total + M);
    s.ce_weight[m] = 1.0 / s.prior[m];
    wsum += s.ce_weight[m];
  }
  for (int m = 0; m < M; ++m) s.ce_weight[m] *= M / wsum;
}

// --- ELBO -----------------------------------------------------------------------

struct ElboParts {
  ad::Value total;
  ad::Value lc;
  ad::Value lr;
  ad::Value kl;
  DecodeTrace trace;
  LatentHeads latent;
};

// total = L_C + L_R + beta_kl * KL; minimizing it maximizes the ELBO.
// L_C: prior-weighted cross-entropy over every expanded child slot, averaged
// over the slot count. L_R: squared property error averaged per type (1/N_m),
// counting only the slots the node's type defines. KL: closed form against
// N(0, I) with sigma = exp(half_logvar).
//
// kl_floor_per_dim > 0 trains against sum_d max(kl_d, floor) instead of the
// raw KL (free bits), which keeps the posterior from collapsing onto the
// prior; the reported kl value is always the true divergence.
inline ElboParts elbo_loss(ad::Tape& tape, ParamBinder& w, const SceneTree& tree,
                           const NodeSchema& s, const ModelConfig& cfg, double beta_kl,
                           const Mat& eps, double kl_floor_per_dim = 0.0) {
  if (s.ce_weight.size() != s.num_types())
    throw std::invalid_argument("elbo_loss: class prior not set (run class_prior)");
  if (tree.node_count() == 0) throw std::invalid_argument("elbo_loss: empty tree");
  const int P = s.max_prop_len();

  LatentHeads lh = encode(tape, w, tree, s, cfg);
  ad::Value sigma = tape.exp_(lh.half_logvar);
  ad::Value z = tape.add(lh.mu, tape.mul(sigma, tape.constant(eps)));
  DecodeTrace trace = decode(tape, w, z, s, cfg, TeacherForced{&tree});

  // L_C over all non-root slots
  std::vector<ad::Value> ces;
  for (size_t i = 1; i < trace.nodes.size(); ++i) {
    const TraceNode& tn = trace.nodes[i];
    ces.push_back(tape.softmax_cross_entropy(tn.logits, tn.type, s.ce_weight[tn.type]));
  }
  ad::Value lc = tape.scalar(0.0);
  if (!ces.empty()) {
    ad::Value sum = ces[0];
    for (size_t i = 1; i < ces.size(); ++i) sum = tape.add(sum, ces[i]);
    lc = tape.scale(sum, 1.0 / static_cast<double>(ces.size()));
  }

  // L_R averaged per type
  std::vector<std::vector<ad::Value>> per_type(s.num_types());
  for (size_t i = 1; i < trace.nodes.size(); ++i) {
    const TraceNode& tn = trace.nodes[i];
    const NodeType& t = s.type(tn.type);
    if (t.prop_len() == 0) continue;
    const TreeNode* truth = tree.at_path(tn.path);
    Mat target(P, 1), mask(P, 1);
    for (int k = 0; k < t.prop_len(); ++k) {
      target[k] = truth->props[k];
      mask[k] = 1.0;
    }
    per_type[tn.type].push_back(tape.squared_error(tn.pred_props, std::move(target), std::move(mask)));
  }
  ad::Value lr = tape.scalar(0.0);
  for (int m = 0; m < s.num_types(); ++m) {
    if (per_type[m].empty()) continue;
    ad::Value sum = per_type[m][0];
    for (size_t i = 1; i < per_type[m].size(); ++i) sum = tape.add(sum, per_type[m][i]);
    lr = tape.add(lr, tape.scale(sum, 1.0 / static_cast<double>(per_type[m].size())));
  }

  // KL( N(mu, diag sigma^2) || N(0, I) ), per dimension:
  // kl_d = 0.5 (mu_d^2 + sigma_d^2 - 1 - 2 h_d)
  ad::Value klvec = tape.scale(
      tape.add_scalar(tape.add(tape.add(tape.mul(lh.mu, lh.mu),
                                        tape.exp_(tape.scale(lh.half_logvar, 2.0))),
                               tape.scale(lh.half_logvar, -2.0)),
                      -1.0),
      0.5);
  ad::Value kl = tape.sum(klvec);
  ad::Value kl_train = kl;
  if (kl_floor_per_dim > 0.0) {
    // sum_d max(kl_d, fb) = d*fb + sum_d relu(kl_d - fb)
    kl_train = tape.add(tape.scalar(cfg.latent_dim * kl_floor_per_dim),
                        tape.sum(tape.relu(tape.add_scalar(klvec, -kl_floor_per_dim))));
  }

  ad::Value total = tape.add(tape.add(lc, lr), tape.scale(kl_train, beta_kl));
  return {total, lc, lr, kl, std::move(trace), lh};
}

// --- training -------------------------------------------------------------------

struct TrainConfig {
  int epochs = 200;
  double lr = 1e-3;
  ModelConfig model;
  double beta_kl = 1.0;        // final KL weight
  double warmup_frac = 0.2;    // linear 0 -> beta_kl over this fraction of epochs
  uint64_t seed = 0;
  int batch_size = 8;
  double lr_decay = 0.3;       // lr multiplier applied at 70% and 90% of epochs
  double kl_free_bits = 0.0;   // per-dim KL floor during training (0 = off)
  // reparameterization noise warm-up: off until noise_off_frac, then linear to
  // full scale at noise_full_frac; keeps early training deterministic so the
  // decoder learns to condition on z before the noise arrives
  double noise_off_frac = 0.0;
  double noise_full_frac = 0.0;
};

struct EpochLog {
  int epoch = 0;
  double total = 0, lc = 0, lr = 0, kl = 0;
};

struct TrainResult {
  ParamStore params;
  std::vector<EpochLog> log;
};

inline double beta_at(const TrainConfig& cfg, int epoch) {
  int warm = std::max(1, static_cast<int>(cfg.epochs * cfg.warmup_frac));
  double f = std::min(1.0, static_cast<double>(epoch + 1) / warm);
  return cfg.beta_kl * f;
}

inline double noise_scale_at(const TrainConfig& cfg, int epoch) {
  double off = cfg.noise_off_frac * cfg.epochs;
  double full = std::max(off + 1e-9, cfg.noise_full_frac * cfg.epochs);
  if (epoch < off) return 0.0;
  return std::min(1.0, (epoch - off) / (full - off));
}

inline TrainResult train(const std::vector<SceneTree>& dataset, NodeSchema& schema,
                         const TrainConfig& cfg, ParamStore* resume_from = nullptr,
                         int start_epoch = 0) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  class_prior(dataset, schema);
  Rng init_rng = Rng::substream(cfg.seed, "init");
  Rng reparam = Rng::substream(cfg.seed, "reparam");
  Rng shuffler = Rng::substream(cfg.seed, "shuffle");

  TrainResult res;
  res.params = resume_from ? *resume_from : init_params(schema, cfg.model, init_rng);
  AdamConfig adam;
  adam.lr = cfg.lr;

  std::vector<int> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = start_epoch; epoch < start_epoch + cfg.epochs; ++epoch) {
    double beta = beta_at(cfg, epoch - start_epoch);
    int rel = epoch - start_epoch;
    adam.lr = cfg.lr;
    if (rel >= cfg.epochs * 7 / 10) adam.lr *= cfg.lr_decay;
    if (rel >= cfg.epochs * 9 / 10) adam.lr *= cfg.lr_decay;
    shuffler.shuffle(order);
    EpochLog log;
    log.epoch = epoch;
    size_t at = 0;
    while (at < order.size()) {
      size_t batch = std::min(static_cast<size_t>(cfg.batch_size), order.size() - at);
      try {
        ad::Tape tape;
        ParamBinder w(tape, res.params);
        ad::Value batch_total;
        double noise = noise_scale_at(cfg, epoch - start_epoch);
        for (size_t b = 0; b < batch; ++b) {
          const SceneTree& tree = dataset[order[at + b]];
          Mat eps(cfg.model.latent_dim, 1);
          for (double& x : eps.a) x = reparam.normal() * noise;
          ElboParts parts = elbo_loss(tape, w, tree, schema, cfg.model, beta, eps, cfg.kl_free_bits);
          log.total += tape.val(parts.total)[0];
          log.lc += tape.val(parts.lc)[0];
          log.lr += tape.val(parts.lr)[0];
          log.kl += tape.val(parts.kl)[0];
          batch_total = b == 0 ? parts.total : tape.add(batch_total, parts.total);
        }
        ad::GradientMap grads =
            tape.forward_backward(tape.scale(batch_total, 1.0 / static_cast<double>(batch)));
        res.params.adam_step(grads, adam);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("train: diverged at epoch " + std::to_string(epoch) + " (" +
                                 e.what() + ")");
      }
      at += batch;
    }
    double n = static_cast<double>(dataset.size());
    log.total /= n;
    log.lc /= n;
    log.lr /= n;
    log.kl /= n;
    if (!std::isfinite(log.total))
      throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
    res.log.push_back(log);
  }
  return res;
}

// --- evaluation helpers -----------------------------------------------------------

// Fraction of non-root slots whose classifier argmax equals the true type,
// teacher-forced at z = z_mu.
inline double teacher_type_accuracy(const ParamStore& ps, const NodeSchema& s,
                                    const ModelConfig& cfg, const std::vector<SceneTree>& trees) {
  int64_t hit = 0, total = 0;
  for (const auto& tree : trees) {
    ad::Tape tape;
    ParamBinder w(tape, ps);
    LatentHeads lh = encode(tape, w, tree, s, cfg);
    DecodeTrace trace = decode(tape, w, lh.mu, s, cfg, TeacherForced{&tree});
    for (size_t i = 1; i < trace.nodes.size(); ++i) {
      const Mat& l = tape.val(trace.nodes[i].logits);
      int best = 0;
      for (int j = 1; j < l.rows; ++j)
        if (l[j] > l[best]) best = j;
      hit += best == trace.nodes[i].type ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(total);
}

// Free-running decode from z = z_mu; a true node counts as reproduced when the
// decoded tree has a node of the same type at the same path.
inline std::pair<int, int> free_running_match(const ParamStore& ps, const NodeSchema& s,
                                              const ModelConfig& cfg, const SceneTree& tree) {
  auto [mu, sigma] = encode_numeric(ps, tree, s, cfg);
  DecodeTrace trace = decode_numeric(ps, mu, s, cfg);
  int hit = 0, total = 0;
  walk(tree, [&](const TreeNode& n, const std::vector<int>& path) {
    ++total;
    const TreeNode* d = trace.tree.at_path(path);
    if (d && d->type == n.type) ++hit;
  });
  return {hit, total};
}

inline std::vector<SceneTree> sample_prior(const ParamStore& ps, const NodeSchema& s,
                                           const ModelConfig& cfg, int n, uint64_t seed) {
  Rng rng = Rng::substream(seed, "prior");
  std::vector<SceneTree> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Mat z(cfg.latent_dim, 1);
    for (double& x : z.a) x = rng.normal();
    out.push_back(decode_numeric(ps, z, s, cfg).tree);
  }
  return out;
}

}  // namespace scg
