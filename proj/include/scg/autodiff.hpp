#pragma once

// Reverse-mode automatic differentiation over dense rank<=2 arrays.
//
// A Tape owns the computation graph; ops evaluate eagerly (define-by-run) and
// record an adjoint callback. backward() walks the node list in reverse, which
// is a reverse topological order by construction. Gradients accumulate: running
// backward twice without a fresh tape doubles them.
//
// 64-bit floats throughout. The models here are tiny and the gradient-check
// oracle wants full precision.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scg/array.hpp"

namespace scg::ad {

class Tape;

struct Value {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

using GradientMap = std::map<std::string, Mat>;

using BackwardFn = void (*)(Tape&, int);

struct Node {
  const char* op = "";
  BackwardFn backward = nullptr;
  std::vector<int> args;
  Mat val;
  Mat grad;          // allocated lazily, same shape as val
  // small op payload
  int i0 = 0, i1 = 0;
  double d0 = 0.0, d1 = 0.0;
  Mat aux;           // constants baked into the op (targets, masks, noise)
  std::shared_ptr<void> blob;  // scratch for fused ops (renderer masks etc.)
  std::string pname;           // parameter name, Param leaves only
};

class Tape {
 public:
  // --- leaves ---------------------------------------------------------------

  Value constant(Mat m) { return push("const", nullptr, {}, std::move(m)); }

  Value scalar(double x) {
    Mat m(1, 1);
    m[0] = x;
    return constant(std::move(m));
  }

  Value param(const std::string& name, Mat value) {
    Value v = push("param", nullptr, {}, std::move(value));
    node(v).pname = name;
    return v;
  }

  // --- arithmetic -----------------------------------------------------------

  // W (r x c) times x (c x 1) -> (r x 1)
  Value matvec(Value W, Value x) {
    const Mat& w = val(W);
    const Mat& xv = val(x);
    if (w.cols != xv.rows || xv.cols != 1) throw std::invalid_argument("matvec: shape mismatch");
    Mat out(w.rows, 1);
    for (int i = 0; i < w.rows; ++i) {
      double s = 0.0;
      const double* row = &w.a[static_cast<size_t>(i) * w.cols];
      for (int j = 0; j < w.cols; ++j) s += row[j] * xv.a[j];
      out[i] = s;
    }
    return push("matvec", &Tape::bw_matvec, {W.idx, x.idx}, std::move(out));
  }

  Value add(Value a, Value b) {
    const Mat& x = val(a);
    const Mat& y = val(b);
    if (!x.same_shape(y)) throw std::invalid_argument("add: shape mismatch");
    Mat out = x;
    for (int i = 0; i < out.size(); ++i) out.a[i] += y.a[i];
    return push("add", &Tape::bw_add, {a.idx, b.idx}, std::move(out));
  }

  Value sub(Value a, Value b) { return add(a, scale(b, -1.0)); }

  Value mul(Value a, Value b) {
    const Mat& x = val(a);
    const Mat& y = val(b);
    if (!x.same_shape(y)) throw std::invalid_argument("mul: shape mismatch");
    Mat out = x;
    for (int i = 0; i < out.size(); ++i) out.a[i] *= y.a[i];
    return push("mul", &Tape::bw_mul, {a.idx, b.idx}, std::move(out));
  }

  Value scale(Value a, double s) {
    Mat out = val(a);
    for (double& x : out.a) x *= s;
    Value v = push("scale", &Tape::bw_scale, {a.idx}, std::move(out));
    node(v).d0 = s;
    return v;
  }

  Value add_scalar(Value a, double s) {
    Mat out = val(a);
    for (double& x : out.a) x += s;
    return push("add_scalar", &Tape::bw_identity, {a.idx}, std::move(out));
  }

  // --- shape ops (vectors) --------------------------------------------------

  Value concat(std::span<const Value> parts) {
    int n = 0;
    for (Value p : parts) {
      if (!val(p).is_vector()) throw std::invalid_argument("concat: vector parts only");
      n += val(p).rows;
    }
    Mat out(n, 1);
    std::vector<int> args;
    int at = 0;
    for (Value p : parts) {
      const Mat& m = val(p);
      for (int i = 0; i < m.rows; ++i) out[at + i] = m[i];
      at += m.rows;
      args.push_back(p.idx);
    }
    return push("concat", &Tape::bw_concat, std::move(args), std::move(out));
  }

  Value concat(std::initializer_list<Value> parts) {
    std::vector<Value> v(parts);
    return concat(std::span<const Value>(v));
  }

  Value slice(Value a, int start, int len) {
    const Mat& x = val(a);
    if (!x.is_vector() || start < 0 || start + len > x.rows)
      throw std::invalid_argument("slice: out of range");
    Mat out(len, 1);
    for (int i = 0; i < len; ++i) out[i] = x[start + i];
    Value v = push("slice", &Tape::bw_slice, {a.idx}, std::move(out));
    node(v).i0 = start;
    node(v).i1 = len;
    return v;
  }

  // --- elementwise nonlinearities --------------------------------------------

  Value tanh_(Value a) { return unary("tanh", a, [](double x) { return std::tanh(x); }, &Tape::bw_tanh); }

  Value sigmoid(Value a) {
    return unary("sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, &Tape::bw_sigmoid);
  }

  Value relu(Value a) {
    return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, &Tape::bw_relu);
  }

  Value exp_(Value a) { return unary("exp", a, [](double x) { return std::exp(x); }, &Tape::bw_exp); }

  Value sqrt_(Value a) {
    return unary("sqrt", a, [](double x) { return std::sqrt(x); }, &Tape::bw_sqrt);
  }

  // --- reductions -----------------------------------------------------------

  Value sum(Value a) {
    const Mat& x = val(a);
    Mat out(1, 1);
    for (double v : x.a) out[0] += v;
    return push("sum", &Tape::bw_sum, {a.idx}, std::move(out));
  }

  Value mean(Value a) {
    const Mat& x = val(a);
    Mat out(1, 1);
    for (double v : x.a) out[0] += v;
    out[0] /= x.size();
    return push("mean", &Tape::bw_mean, {a.idx}, std::move(out));
  }

  // sum_i mask_i * (pred_i - target_i)^2, mask/target constants
  Value squared_error(Value pred, Mat target, Mat mask) {
    const Mat& p = val(pred);
    if (!p.same_shape(target) || !p.same_shape(mask))
      throw std::invalid_argument("squared_error: shape mismatch");
    Mat out(1, 1);
    for (int i = 0; i < p.size(); ++i) {
      double d = p.a[i] - target.a[i];
      out[0] += mask.a[i] * d * d;
    }
    Value v = push("squared_error", &Tape::bw_sqerr, {pred.idx}, std::move(out));
    Node& n = node(v);
    n.aux = std::move(target);
    n.blob = std::make_shared<Mat>(std::move(mask));
    return v;
  }

  Value squared_error(Value pred, Mat target) {
    Mat mask(val(pred).rows, val(pred).cols);
    mask.fill(1.0);
    return squared_error(pred, std::move(target), std::move(mask));
  }

  // weight * CE(softmax(logits), onehot(target)); fused for stability
  Value softmax_cross_entropy(Value logits, int target, double weight = 1.0) {
    const Mat& l = val(logits);
    if (!l.is_vector()) throw std::invalid_argument("softmax_ce: logits must be a vector");
    if (target < 0 || target >= l.rows) throw std::invalid_argument("softmax_ce: target out of range");
    double mx = l[0];
    for (int i = 1; i < l.rows; ++i) mx = std::max(mx, l[i]);
    double lse = 0.0;
    for (int i = 0; i < l.rows; ++i) lse += std::exp(l[i] - mx);
    lse = mx + std::log(lse);
    Mat out(1, 1);
    out[0] = weight * (lse - l[target]);
    Value v = push("softmax_ce", &Tape::bw_softmax_ce, {logits.idx}, std::move(out));
    Node& n = node(v);
    n.i0 = target;
    n.d0 = weight;
    n.d1 = lse;
    return v;
  }

  // fused op escape hatch: caller supplies forward value + adjoint
  Value custom(const char* opname, std::vector<int> args, Mat out, BackwardFn bw,
               std::shared_ptr<void> blob) {
    Value v = push(opname, bw, std::move(args), std::move(out));
    node(v).blob = std::move(blob);
    return v;
  }

  // --- execution ------------------------------------------------------------

  const Mat& val(Value v) const { return nodes_[v.idx].val; }
  Mat& grad(Value v) { return ensure_grad(v.idx); }
  Node& node(Value v) { return nodes_[v.idx]; }
  const Node& node(Value v) const { return nodes_[v.idx]; }
  Node& node_at(int i) { return nodes_[i]; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Seeds the root and sweeps the tape in reverse. A tape may be swept once;
  // a second sweep would re-propagate already-accumulated grads, so it throws.
  void backward(Value root, double seed = 1.0) {
    if (swept_) throw std::logic_error("backward: tape already swept; gradient accumulation is disallowed");
    if (!val(root).is_scalar()) throw std::invalid_argument("backward: root must be scalar");
    swept_ = true;
    ensure_grad(root.idx)[0] += seed;
    for (int i = root.idx; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      (*n.backward)(*this, i);
      for (int a : n.args)
        if (nodes_[a].grad.size() != 0 && !nodes_[a].grad.all_finite())
          throw std::runtime_error(std::string("backward: non-finite gradient produced by op '") + n.op + "'");
    }
  }

  GradientMap gradients() const {
    GradientMap g;
    for (const Node& n : nodes_) {
      if (n.pname.empty()) continue;
      auto [it, fresh] = g.try_emplace(n.pname, Mat(n.val.rows, n.val.cols));
      if (n.grad.size() != 0) {
        Mat& acc = it->second;
        for (int i = 0; i < acc.size(); ++i) acc.a[i] += n.grad.a[i];
      }
    }
    return g;
  }

  GradientMap forward_backward(Value root, double seed = 1.0) {
    backward(root, seed);
    return gradients();
  }

  Mat& ensure_grad(int i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) n.grad = Mat(n.val.rows, n.val.cols);
    return n.grad;
  }

 private:
  std::vector<Node> nodes_;
  bool swept_ = false;

  Value push(const char* op, BackwardFn bw, std::vector<int> args, Mat out) {
    Node n;
    n.op = op;
    n.backward = bw;
    n.args = std::move(args);
    n.val = std::move(out);
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  template <class F>
  Value unary(const char* op, Value a, F f, BackwardFn bw) {
    Mat out = val(a);
    for (double& x : out.a) x = f(x);
    return push(op, bw, {a.idx}, std::move(out));
  }

  // --- adjoints ---------------------------------------------------------------

  static void bw_matvec(Tape& t, int i) {
    Node& n = t.nodes_[i];
    const Mat& g = n.grad;
    const Mat& w = t.nodes_[n.args[0]].val;
    const Mat& x = t.nodes_[n.args[1]].val;
    Mat& gw = t.ensure_grad(n.args[0]);
    Mat& gx = t.ensure_grad(n.args[1]);
    for (int r = 0; r < w.rows; ++r) {
      double gr = g[r];
      double* gwrow = &gw.a[static_cast<size_t>(r) * w.cols];
      const double* wrow = &w.a[static_cast<size_t>(r) * w.cols];
      for (int c = 0; c < w.cols; ++c) {
        gwrow[c] += gr * x.a[c];
        gx.a[c] += gr * wrow[c];
      }
    }
  }

  static void bw_add(Tape& t, int i) {
    Node& n = t.nodes_[i];
    for (int k = 0; k < 2; ++k) {
      Mat& ga = t.ensure_grad(n.args[k]);
      for (int j = 0; j < ga.size(); ++j) ga.a[j] += n.grad.a[j];
    }
  }

  static void bw_identity(Tape& t, int i) {
    Node& n = t.nodes_[i];
    Mat& ga = t.ensure_grad(n.args[0]);
    for (int j = 0; j < ga.size(); ++j) ga.a[j] += n.grad.a[j];
  }

  static void bw_mul(Tape& t, int i) {
    Node& n = t.nodes_[i];
    const Mat& x = t.nodes_[n.args[0]].val;
    const Mat& y = t.nodes_[n.args[1]].val;
    Mat& gx = t.ensure_grad(n.args[0]);
    Mat& gy = t.ensure_grad(n.args[1]);
    for (int j = 0; j < x.size(); ++j) {
      gx.a[j] += n.grad.a[j] * y.a[j];
      gy.a[j] += n.grad.a[j] * x.a[j];
    }
  }

  static void bw_scale(Tape& t, int i) {
    Node& n = t.nodes_[i];
    Mat& ga = t.ensure_grad(n.args[0]);
    for (int j = 0; j < ga.size(); ++j) ga.a[j] += n.d0 * n.grad.a[j];
  }

  static void bw_concat(Tape& t, int i) {
    Node& n = t.nodes_[i];
    int at = 0;
    for (int a : n.args) {
      Mat& ga = t.ensure_grad(a);
      for (int j = 0; j < ga.rows; ++j) ga[j] += n.grad[at + j];
      at += ga.rows;
    }
  }

  static void bw_slice(Tape& t, int i) {
    Node& n = t.nodes_[i];
    Mat& ga = t.ensure_grad(n.args[0]);
    for (int j = 0; j < n.i1; ++j) ga[n.i0 + j] += n.grad[j];
  }

  static void bw_tanh(Tape& t, int i) {
    Node& n = t.nodes_[i];
    Mat& ga = t.ensure_grad(n.args[0]);
    for (int j = 0; j < ga.size(); ++j) ga.a[j] += n.grad.a[j] * (1.0 - n.val.a[j] * n.val.a[j]);
  }

  static void bw_sigmoid(Tape& t, int i) {
    Node& n = t.nodes_[i];
    Mat& ga = t.ensure_grad(n.args[0]);
    for (int j = 0; j < ga.size(); ++j) ga.a[j] += n.grad.a[j] * n.val.a[j] * (1.0 - n.val.a[j]);
  }

  static void bw_relu(Tape& t, int i) {
    Node& n = t.nodes_[i];
    Mat& ga = t.ensure_grad(n.args[0]);
    for (int j = 0; j < ga.size(); ++j) ga.a[j] += n.val.a[j] > 0.0 ? n.grad.a[j] : 0.0;
  }

  static void bw_exp(Tape& t, int i) {
    Node& n = t.nodes_[i];
    Mat& ga = t.ensure_grad(n.args[0]);
    for (int j = 0; j < ga.size(); ++j) ga.a[j] += n.grad.a[j] * n.val.a[j];
  }

  static void bw_sqrt(Tape& t, int i) {
    Node& n = t.nodes_[i];
    Mat& ga = t.ensure_grad(n.args[0]);
    for (int j = 0; j < ga.size(); ++j) {
      double s = n.val.a[j];
      ga.a[j] += n.grad.a[j] * 0.5 / (s > 1e-300 ? s : 1e-300);
    }
  }

  static void bw_sum(Tape& t, int i) {
    Node& n = t.nodes_[i];
    Mat& ga = t.ensure_grad(n.args[0]);
    for (int j = 0; j < ga.size(); ++j) ga.a[j] += n.grad[0];
  }

  static void bw_mean(Tape& t, int i) {
    Node& n = t.nodes_[i];
    Mat& ga = t.ensure_grad(n.args[0]);
    double s = n.grad[0] / ga.size();
    for (int j = 0; j < ga.size(); ++j) ga.a[j] += s;
  }

  static void bw_sqerr(Tape& t, int i) {
    Node& n = t.nodes_[i];
    const Mat& p = t.nodes_[n.args[0]].val;
    const Mat& target = n.aux;
    const Mat& mask = *static_cast<Mat*>(n.blob.get());
    Mat& gp = t.ensure_grad(n.args[0]);
    for (int j = 0; j < p.size(); ++j)
      gp.a[j] += n.grad[0] * 2.0 * mask.a[j] * (p.a[j] - target.a[j]);
  }

  static void bw_softmax_ce(Tape& t, int i) {
    Node& n = t.nodes_[i];
    const Mat& l = t.nodes_[n.args[0]].val;
    Mat& gl = t.ensure_grad(n.args[0]);
    for (int j = 0; j < l.rows; ++j) {
      double p = std::exp(l[j] - n.d1);
      gl[j] += n.grad[0] * n.d0 * (p - (j == n.i0 ? 1.0 : 0.0));
    }
  }
};

// Supported primitives with analytic adjoints.
inline std::vector<std::string> op_set() {
  return {"matvec", "add", "mul", "scale", "concat", "slice",
          "tanh",   "sigmoid", "relu", "exp", "sqrt", "sum",
          "mean",   "squared_error", "softmax_ce", "soft_render"};
}

// Max relative error between an analytic gradient and central finite
// differences: max_i |a_i - c_i| / max(1, |c_i|). Throws if f is non-finite at
// any probe point.
inline double check_gradient(const std::function<double(const Mat&)>& f,
                             const std::function<Mat(const Mat&)>& analytic_grad,
                             const Mat& point, double h) {
  Mat g = analytic_grad(point);
  if (g.size() != point.size()) throw std::invalid_argument("check_gradient: gradient size mismatch");
  double worst = 0.0;
  Mat x = point;
  for (int i = 0; i < x.size(); ++i) {
    double keep = x.a[i];
    x.a[i] = keep + h;
    double fp = f(x);
    x.a[i] = keep - h;
    double fm = f(x);
    x.a[i] = keep;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("check_gradient: function non-finite at probe");
    double cd = (fp - fm) / (2.0 * h);
    double err = std::abs(g.a[i] - cd) / std::max(1.0, std::abs(cd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace scg::ad
