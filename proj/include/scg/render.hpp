#pragma once

// Differentiable soft-rectangle compositor.
//
// Each element is a 7-vector (cx, cy, hx, hy, r, g, b) in unit scene
// coordinates. Its coverage mask is
//   m(p) = sigmoid((hx - |px-cx|)/tau) * sigmoid((hy - |py-cy|)/tau)
// and elements composite over a white background in caller order by
// alpha blending: img' = img*(1-m) + color*m.
//
// render() is a single fused tape op; the adjoint walks the composite chain
// backwards using the stored intermediate images and the analytic mask
// derivatives. Output images are flat vectors of length H*W*3, pixel-major.

#include <fstream>
#include <memory>
#include <stdexcept>
#include <vector>

#include "scg/autodiff.hpp"

namespace scg {

struct RenderConfig {
  int height = 64;
  int width = 64;
  double tau = 0.01;
};

namespace detail_render {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct RenderBlob {
  RenderConfig cfg;
  std::vector<Mat> img_before;  // image state before each element's composite
};

// Composites one element into img in place and reports the mask if asked.
inline void composite_element(Mat& img, const Mat& e, const RenderConfig& cfg,
                              std::vector<double>* mask_out) {
  const int H = cfg.height, W = cfg.width;
  const double cx = e[0], cy = e[1], hx = e[2], hy = e[3];
  for (int y = 0; y < H; ++y) {
    double py = (y + 0.5) / H;
    double my = sigmoid((hy - std::abs(py - cy)) / cfg.tau);
    for (int x = 0; x < W; ++x) {
      double px = (x + 0.5) / W;
      double m = my * sigmoid((hx - std::abs(px - cx)) / cfg.tau);
      size_t base = (static_cast<size_t>(y) * W + x) * 3;
      for (int c = 0; c < 3; ++c) img.a[base + c] = img.a[base + c] * (1.0 - m) + e[4 + c] * m;
      if (mask_out) (*mask_out)[static_cast<size_t>(y) * W + x] = m;
    }
  }
}

inline void render_backward(ad::Tape& tape, int node_idx);

}  // namespace detail_render

// Plain numeric render of element 7-vectors, white background.
inline Mat render_elements(const std::vector<Mat>& elements, const RenderConfig& cfg) {
  if (cfg.height <= 0 || cfg.width <= 0) throw std::invalid_argument("render: zero-size image");
  Mat img(cfg.height * cfg.width * 3, 1);
  img.fill(1.0);
  for (const Mat& e : elements) detail_render::composite_element(img, e, cfg, nullptr);
  return img;
}

// Differentiable render: each element is a length-7 Value on the tape.
inline ad::Value render(ad::Tape& tape, const std::vector<ad::Value>& elements,
                        const RenderConfig& cfg) {
  if (cfg.height <= 0 || cfg.width <= 0) throw std::invalid_argument("render: zero-size image");
  auto blob = std::make_shared<detail_render::RenderBlob>();
  blob->cfg = cfg;
  Mat img(cfg.height * cfg.width * 3, 1);
  img.fill(1.0);
  std::vector<int> args;
  for (ad::Value e : elements) {
    if (tape.val(e).size() != 7) throw std::invalid_argument("render: element must have 7 entries");
    blob->img_before.push_back(img);
    detail_render::composite_element(img, tape.val(e), cfg, nullptr);
    args.push_back(e.idx);
  }
  return tape.custom("soft_render", std::move(args), std::move(img),
                     &detail_render::render_backward, std::move(blob));
}

namespace detail_render {

inline void render_backward(ad::Tape& tape, int node_idx) {
  ad::Node& n = tape.node_at(node_idx);
  const RenderBlob& blob = *static_cast<RenderBlob*>(n.blob.get());
  const RenderConfig& cfg = blob.cfg;
  const int H = cfg.height, W = cfg.width;
  Mat gcur = n.grad;  // gradient wrt the image after the last element
  for (int e = static_cast<int>(n.args.size()) - 1; e >= 0; --e) {
    const Mat& params = tape.node_at(n.args[e]).val;
    const Mat& before = blob.img_before[e];
    Mat& gparam = tape.ensure_grad(n.args[e]);
    const double cx = params[0], cy = params[1], hx = params[2], hy = params[3];
    double g_cx = 0, g_cy = 0, g_hx = 0, g_hy = 0, g_r = 0, g_g = 0, g_b = 0;
    for (int y = 0; y < H; ++y) {
      double py = (y + 0.5) / H;
      double dy = py - cy;
      double ay = (hy - std::abs(dy)) / cfg.tau;
      double my = sigmoid(ay);
      double dmy = my * (1.0 - my) / cfg.tau;  // d my / d hy
      for (int x = 0; x < W; ++x) {
        double px = (x + 0.5) / W;
        double dx = px - cx;
        double ax = (hx - std::abs(dx)) / cfg.tau;
        double mx = sigmoid(ax);
        double dmx = mx * (1.0 - mx) / cfg.tau;  // d mx / d hx
        double m = mx * my;
        size_t pix = static_cast<size_t>(y) * W + x;
        size_t base = pix * 3;
        double gm = 0.0;
        for (int c = 0; c < 3; ++c) {
          double g_out = gcur.a[base + c];
          gm += g_out * (params[4 + c] - before.a[base + c]);
          if (c == 0) g_r += g_out * m;
          if (c == 1) g_g += g_out * m;
          if (c == 2) g_b += g_out * m;
          gcur.a[base + c] = g_out * (1.0 - m);  // becomes grad wrt previous image
        }
        // d m / d cx = my * mx'(ax) * sign(px-cx)/tau, etc.
        double sx = dx > 0 ? 1.0 : (dx < 0 ? -1.0 : 0.0);
        double sy = dy > 0 ? 1.0 : (dy < 0 ? -1.0 : 0.0);
        g_cx += gm * my * dmx * sx;
        g_hx += gm * my * dmx;
        g_cy += gm * mx * dmy * sy;
        g_hy += gm * mx * dmy;
      }
    }
    gparam[0] += g_cx;
    gparam[1] += g_cy;
    gparam[2] += g_hx;
    gparam[3] += g_hy;
    gparam[4] += g_r;
    gparam[5] += g_g;
    gparam[6] += g_b;
  }
}

}  // namespace detail_render

// --- PPM (P6, 8-bit) --------------------------------------------------------------

inline void write_ppm(const std::string& path, const Mat& img, int height, int width) {
  if (img.size() != height * width * 3) throw std::invalid_argument("write_ppm: size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << width << " " << height << "\n255\n";
  for (int i = 0; i < img.size(); ++i) {
    double v = std::min(1.0, std::max(0.0, img.a[i]));
    f.put(static_cast<char>(static_cast<int>(v * 255.0 + 0.5)));
  }
}

inline Mat read_ppm(const std::string& path, int& height, int& width) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  int maxv = 0;
  f >> magic >> width >> height >> maxv;
  if (magic != "P6" || maxv != 255) throw std::runtime_error("read_ppm: unsupported format");
  f.get();  // single whitespace after header
  Mat img(height * width * 3, 1);
  for (int i = 0; i < img.size(); ++i) {
    int c = f.get();
    if (c == EOF) throw std::runtime_error("read_ppm: truncated file");
    img.a[i] = c / 255.0;
  }
  return img;
}

}  // namespace scg
