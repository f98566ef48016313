#pragma once

// Named parameter arrays with persistent identity, Adam state keyed by the
// same names, and a binary checkpoint container.
//
// Checkpoint layout (version 1):
//   magic "SCGCKPT1" | u32 version | str schema | i32 latent_dim | i32 feature_dim
//   | i64 epoch | u64 count | count * (str name, u32 rows, u32 cols, f64[rows*cols])
//   | u8 has_opt | if has_opt: u64 adam_step, count * f64[] m, count * f64[] v
// Strings are u32 length + bytes. All payloads are row-major 64-bit floats, so
// round-trips are bit-exact.

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include "scg/array.hpp"
#include "scg/autodiff.hpp"
#include "scg/rng.hpp"

namespace scg {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct CheckpointHeader {
  std::string schema;
  int latent_dim = 0;
  int feature_dim = 0;
  int64_t epoch = 0;
};

class ParamStore {
 public:
  void add(const std::string& name, Mat init) {
    if (values_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
    m_[name] = Mat(init.rows, init.cols);
    v_[name] = Mat(init.rows, init.cols);
    values_[name] = std::move(init);
  }

  bool has(const std::string& name) const { return values_.count(name) != 0; }

  Mat& at(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("ParamStore: unknown name " + name);
    return it->second;
  }
  const Mat& at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("ParamStore: unknown name " + name);
    return it->second;
  }

  const std::map<std::string, Mat>& values() const { return values_; }
  size_t count() const { return values_.size(); }
  int64_t adam_step() const { return step_; }

  size_t scalar_count() const {
    size_t n = 0;
    for (auto& [k, m] : values_) n += m.size();
    return n;
  }

  // One Adam step over every parameter present in the gradient map (absent
  // names are untouched). Throws on a non-finite result.
  void adam_step(const ad::GradientMap& grads, const AdamConfig& cfg) {
    ++step_;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (const auto& [name, g] : grads) {
      auto it = values_.find(name);
      if (it == values_.end()) throw std::out_of_range("adam_step: unknown param " + name);
      Mat& p = it->second;
      Mat& m = m_[name];
      Mat& v = v_[name];
      if (!p.same_shape(g)) throw std::invalid_argument("adam_step: grad shape mismatch for " + name);
      for (int i = 0; i < p.size(); ++i) {
        double gi = g.a[i] + cfg.weight_decay * p.a[i];
        m.a[i] = cfg.beta1 * m.a[i] + (1.0 - cfg.beta1) * gi;
        v.a[i] = cfg.beta2 * v.a[i] + (1.0 - cfg.beta2) * gi * gi;
        double mh = m.a[i] / bc1;
        double vh = v.a[i] / bc2;
        p.a[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
        if (!std::isfinite(p.a[i]))
          throw std::runtime_error("adam_step: non-finite parameter " + name);
      }
    }
  }

  void save(const std::string& path, const CheckpointHeader& hdr, bool with_opt_state = true) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write("SCGCKPT1", 8);
    write_u32(f, 1);
    write_str(f, hdr.schema);
    write_i32(f, hdr.latent_dim);
    write_i32(f, hdr.feature_dim);
    write_i64(f, hdr.epoch);
    write_u64(f, values_.size());
    for (const auto& [name, m] : values_) {
      write_str(f, name);
      write_u32(f, static_cast<uint32_t>(m.rows));
      write_u32(f, static_cast<uint32_t>(m.cols));
      f.write(reinterpret_cast<const char*>(m.a.data()), m.a.size() * sizeof(double));
    }
    f.put(with_opt_state ? 1 : 0);
    if (with_opt_state) {
      write_u64(f, static_cast<uint64_t>(step_));
      for (const auto& [name, m] : values_) {
        const Mat& mm = m_.at(name);
        const Mat& vv = v_.at(name);
        f.write(reinterpret_cast<const char*>(mm.a.data()), mm.a.size() * sizeof(double));
        f.write(reinterpret_cast<const char*>(vv.a.data()), vv.a.size() * sizeof(double));
      }
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
  }

  static std::pair<ParamStore, CheckpointHeader> load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::string(magic, 8) != "SCGCKPT1")
      throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t version = read_u32(f);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
    CheckpointHeader hdr;
    hdr.schema = read_str(f);
    hdr.latent_dim = read_i32(f);
    hdr.feature_dim = read_i32(f);
    hdr.epoch = read_i64(f);
    uint64_t count = read_u64(f);
    ParamStore ps;
    std::vector<std::string> order;
    for (uint64_t i = 0; i < count; ++i) {
      std::string name = read_str(f);
      uint32_t r = read_u32(f);
      uint32_t c = read_u32(f);
      Mat m(static_cast<int>(r), static_cast<int>(c));
      f.read(reinterpret_cast<char*>(m.a.data()), m.a.size() * sizeof(double));
      ps.add(name, std::move(m));
      order.push_back(name);
    }
    int opt = f.get();
    if (opt == 1) {
      ps.step_ = static_cast<int64_t>(read_u64(f));
      for (const auto& name : order) {
        Mat& mm = ps.m_[name];
        Mat& vv = ps.v_[name];
        f.read(reinterpret_cast<char*>(mm.a.data()), mm.a.size() * sizeof(double));
        f.read(reinterpret_cast<char*>(vv.a.data()), vv.a.size() * sizeof(double));
      }
    }
    if (!f) throw std::runtime_error("checkpoint: truncated file " + path);
    return {std::move(ps), hdr};
  }

  bool all_finite() const {
    for (auto& [k, m] : values_)
      if (!m.all_finite()) return false;
    return true;
  }

 private:
  std::map<std::string, Mat> values_;
  std::map<std::string, Mat> m_, v_;
  int64_t step_ = 0;

  static void write_u32(std::ostream& f, uint32_t x) { f.write(reinterpret_cast<const char*>(&x), 4); }
  static void write_i32(std::ostream& f, int32_t x) { f.write(reinterpret_cast<const char*>(&x), 4); }
  static void write_u64(std::ostream& f, uint64_t x) { f.write(reinterpret_cast<const char*>(&x), 8); }
  static void write_i64(std::ostream& f, int64_t x) { f.write(reinterpret_cast<const char*>(&x), 8); }
  static void write_str(std::ostream& f, const std::string& s) {
    write_u32(f, static_cast<uint32_t>(s.size()));
    f.write(s.data(), s.size());
  }
  static uint32_t read_u32(std::istream& f) {
    uint32_t x = 0;
    f.read(reinterpret_cast<char*>(&x), 4);
    return x;
  }
  static int32_t read_i32(std::istream& f) {
    int32_t x = 0;
    f.read(reinterpret_cast<char*>(&x), 4);
    return x;
  }
  static uint64_t read_u64(std::istream& f) {
    uint64_t x = 0;
    f.read(reinterpret_cast<char*>(&x), 8);
    return x;
  }
  static int64_t read_i64(std::istream& f) {
    int64_t x = 0;
    f.read(reinterpret_cast<char*>(&x), 8);
    return x;
  }
  static std::string read_str(std::istream& f) {
    uint32_t n = read_u32(f);
    std::string s(n, '\0');
    f.read(s.data(), n);
    return s;
  }
};

// Binds store parameters onto a tape, one leaf per name. Recursive models use
// the same weights at many tree positions; sharing the leaf makes the tape
// accumulate their gradients in one buffer.
class ParamBinder {
 public:
  ParamBinder(ad::Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

  ad::Value operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    ad::Value v = tape_.param(name, store_.at(name));
    bound_.emplace(name, v);
    return v;
  }

 private:
  ad::Tape& tape_;
  const ParamStore& store_;
  std::map<std::string, ad::Value> bound_;
};

// Glorot-style init for a weight matrix, zeros for biases.
inline Mat glorot(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  double s = std::sqrt(6.0 / (rows + cols));
  for (double& x : m.a) x = rng.uniform(-s, s);
  return m;
}

}  // namespace scg
