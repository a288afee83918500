#include "rxsim/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "rxsim/rng.hpp"

namespace rxsim {
namespace {

constexpr double kTau = 6.283185307179586476925286766559;
constexpr int kSide = 28;
constexpr int kPixels = kSide * kSide;

struct Prim {
  bool is_arc;
  // seg: x0 y0 x1 y1; arc: cx cy r (ry/a0/a1/n below)
  double x0, y0, x1, y1;
  double ry, a0, a1;
  int n;
};

Prim seg(double x0, double y0, double x1, double y1) {
  return Prim{false, x0, y0, x1, y1, 0.0, 0.0, 0.0, 0};
}

Prim arc(double cx, double cy, double r, double a0, double a1, int n, double ry = -1.0) {
  return Prim{true, cx, cy, r, 0.0, ry < 0.0 ? r : ry, a0, a1, n};
}

using Variant = std::vector<Prim>;
using Style = std::vector<Variant>;

const std::vector<Style>& styles() {
  static const std::vector<Style> table = [] {
    const double pi = kTau / 2.0;
    std::vector<Style> t(10);
    t[0] = {{arc(0.5, 0.5, 0.30, 0, kTau, 40, 0.40)},
            {arc(0.5, 0.5, 0.24, 0, kTau, 40, 0.41)}};
    t[1] = {{seg(0.5, 0.10, 0.5, 0.90)},
            {seg(0.5, 0.10, 0.5, 0.90), seg(0.34, 0.26, 0.5, 0.10), seg(0.34, 0.90, 0.66, 0.90)}};
    t[2] = {{arc(0.5, 0.32, 0.22, -pi * 0.9, 0.15, 18), seg(0.70, 0.40, 0.30, 0.90),
             seg(0.30, 0.90, 0.73, 0.90)},
            {arc(0.5, 0.30, 0.20, -pi * 0.95, 0.0, 18), seg(0.70, 0.30, 0.28, 0.88),
             arc(0.5, 0.82, 0.22, pi, pi * 1.6, 10), seg(0.28, 0.88, 0.74, 0.86)}};
    t[3] = {{arc(0.47, 0.30, 0.20, -pi * 0.75, pi * 0.5, 18), arc(0.47, 0.68, 0.24, -pi * 0.5, pi * 0.75, 18)},
            {seg(0.30, 0.12, 0.70, 0.12), seg(0.70, 0.12, 0.45, 0.45),
             arc(0.47, 0.66, 0.24, -pi * 0.45, pi * 0.7, 18)}};
    t[4] = {{seg(0.62, 0.10, 0.25, 0.62), seg(0.25, 0.62, 0.80, 0.62), seg(0.62, 0.10, 0.62, 0.90)},
            {seg(0.55, 0.10, 0.28, 0.55), seg(0.28, 0.55, 0.78, 0.55), seg(0.68, 0.30, 0.68, 0.90)}};
    t[5] = {{seg(0.70, 0.12, 0.32, 0.12), seg(0.32, 0.12, 0.30, 0.45),
             arc(0.47, 0.65, 0.24, -pi * 0.55, pi * 0.7, 18)},
            {seg(0.72, 0.10, 0.30, 0.10), seg(0.30, 0.10, 0.30, 0.42), seg(0.30, 0.42, 0.52, 0.40),
             arc(0.5, 0.66, 0.25, -pi * 0.5, pi * 0.75, 18)}};
    t[6] = {{seg(0.60, 0.10, 0.38, 0.45), arc(0.50, 0.66, 0.23, 0, kTau, 32)},
            {arc(0.72, 0.46, 0.40, pi * 0.62, pi * 0.98, 14, 0.52), arc(0.50, 0.68, 0.22, 0, kTau, 32)}};
    t[7] = {{seg(0.25, 0.12, 0.76, 0.12), seg(0.76, 0.12, 0.40, 0.90)},
            {seg(0.25, 0.12, 0.76, 0.12), seg(0.76, 0.12, 0.42, 0.90), seg(0.38, 0.50, 0.62, 0.50)}};
    t[8] = {{arc(0.5, 0.30, 0.185, 0, kTau, 28), arc(0.5, 0.68, 0.23, 0, kTau, 32)},
            {arc(0.5, 0.28, 0.16, 0, kTau, 28), arc(0.5, 0.66, 0.25, 0, kTau, 32)}};
    t[9] = {{arc(0.52, 0.33, 0.21, 0, kTau, 28), seg(0.73, 0.36, 0.60, 0.90)},
            {arc(0.50, 0.30, 0.20, 0, kTau, 28), seg(0.70, 0.33, 0.70, 0.88)}};
    return t;
  }();
  return table;
}

struct FlatSeg {
  double x0, y0, x1, y1;
};

// Expand primitives into jittered polyline segments. Arcs get a correlated
// wobble: jittered center, scaled radii, and a shared phase offset.
std::vector<FlatSeg> prims_to_segs(const Variant& prims, Rng& rng, double jit) {
  std::vector<FlatSeg> segs;
  for (const Prim& p : prims) {
    if (!p.is_arc) {
      const double x0 = p.x0 + rng.normal(0.0, jit);
      const double y0 = p.y0 + rng.normal(0.0, jit);
      const double x1 = p.x1 + rng.normal(0.0, jit);
      const double y1 = p.y1 + rng.normal(0.0, jit);
      segs.push_back({x0, y0, x1, y1});
    } else {
      const double cx = p.x0 + rng.normal(0.0, jit);
      const double cy = p.y0 + rng.normal(0.0, jit);
      const double r = p.x1 * rng.uniform(0.85, 1.15);
      const double ry = p.ry * rng.uniform(0.85, 1.15);
      const double da = rng.normal(0.0, 0.115);
      const double a0 = p.a0 + da;
      const double a1 = p.a1 + da;
      const int n = p.n;
      double px = cx + r * std::cos(a0);
      double py = cy + ry * std::sin(a0);
      for (int i = 1; i < n; ++i) {
        const double t = a0 + (a1 - a0) * static_cast<double>(i) / (n - 1);
        const double qx = cx + r * std::cos(t);
        const double qy = cy + ry * std::sin(t);
        segs.push_back({px, py, qx, qy});
        px = qx;
        py = qy;
      }
    }
  }
  return segs;
}

double seg_dist_sq(double px, double py, const FlatSeg& s) {
  const double dx = s.x1 - s.x0;
  const double dy = s.y1 - s.y0;
  const double len_sq = dx * dx + dy * dy;
  double cx, cy;
  if (len_sq < 1e-12) {
    cx = s.x0;
    cy = s.y0;
  } else {
    double t = ((px - s.x0) * dx + (py - s.y0) * dy) / len_sq;
    t = std::clamp(t, 0.0, 1.0);
    cx = s.x0 + t * dx;
    cy = s.y0 + t * dy;
  }
  const double ex = px - cx;
  const double ey = py - cy;
  return ex * ex + ey * ey;
}

void sample_batch(const std::vector<std::int32_t>& labels, Rng& rng, const SynthConfig& cfg,
                  Tensor& out) {
  // Pixel centers in [0,1]^2, row-major (y outer, x inner).
  static thread_local std::vector<double> pcx, pcy;
  if (pcx.empty()) {
    pcx.resize(kPixels);
    pcy.resize(kPixels);
    for (int y = 0; y < kSide; ++y)
      for (int x = 0; x < kSide; ++x) {
        pcx[y * kSide + x] = (x + 0.5) / kSide;
        pcy[y * kSide + x] = (y + 0.5) / kSide;
      }
  }

  std::vector<double> img(kPixels);
  std::vector<double> gx(kPixels), gy(kPixels);
  const auto& style_table = styles();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int lab = labels[i];
    const Style& variants = style_table[static_cast<std::size_t>(lab)];
    const auto pick = rng.uniform_int(variants.size());
    const std::vector<FlatSeg> segs = prims_to_segs(variants[pick], rng, cfg.jitter);

    const double th = rng.uniform(-0.35, 0.35);
    const double sx = rng.uniform(0.765, 1.235);
    const double sy = rng.uniform(0.765, 1.235);
    const double shr = rng.uniform(-0.235, 0.235);
    const double tx = rng.uniform(-0.118, 0.118);
    const double ty = rng.uniform(-0.118, 0.118);
    const double thick = cfg.bold * rng.uniform(0.6, 1.3);
    const double inten = rng.uniform(0.95, 1.0);
    const double c = std::cos(th);
    const double s = std::sin(th);

    // Inverse warp of every pixel center into glyph space.
    for (int p = 0; p < kPixels; ++p) {
      const double ux = pcx[p] - 0.5 - tx;
      const double uy = pcy[p] - 0.5 - ty;
      double rx = c * ux + s * uy;
      double ry = -s * ux + c * uy;
      rx /= sx;
      ry /= sy;
      rx -= shr * ry;
      gx[p] = rx + 0.5;
      gy[p] = ry + 0.5;
    }
    for (int p = 0; p < kPixels; ++p) {
      double best = 1e18;
      for (const FlatSeg& sg : segs) {
        const double d = seg_dist_sq(gx[p], gy[p], sg);
        if (d < best) best = d;
      }
      const double dist = std::sqrt(best);
      img[p] = std::clamp((thick - dist) / 0.02 + 0.5, 0.0, 1.0) * inten;
    }

    // Distractor strokes, drawn in pixel space (they ignore the glyph warp).
    const int reps = 1 + static_cast<int>(rng.uniform_int(2));
    for (int rep = 0; rep < reps; ++rep) {
      const double bx = rng.uniform(0.1, 0.9);
      const double by = rng.uniform(0.1, 0.9);
      const double ang = rng.uniform(0.0, kTau);
      const double len = rng.uniform(0.08, 0.28);
      const FlatSeg stroke{bx, by, bx + len * std::cos(ang), by + len * std::sin(ang)};
      const double level = rng.uniform(0.2, 0.4);
      for (int p = 0; p < kPixels; ++p) {
        const double dd = std::sqrt(seg_dist_sq(pcx[p], pcy[p], stroke));
        const double v = std::clamp((0.03 - dd) / 0.02 + 0.5, 0.0, 1.0) * level;
        if (v > img[p]) img[p] = v;
      }
    }

    // Occlusion patch (the gate always consumes one draw).
    if (rng.uniform() < 0.30) {
      const int ox = 2 + static_cast<int>(rng.uniform_int(20));
      const int oy = 2 + static_cast<int>(rng.uniform_int(20));
      const int sz = 3 + static_cast<int>(rng.uniform_int(3));
      const double factor = rng.uniform(0.0, 0.35);
      for (int y = oy; y < oy + sz; ++y)
        for (int x = ox; x < ox + sz; ++x) img[y * kSide + x] *= factor;
    }

    const double bg = rng.uniform(0.17, 0.25);
    float* row = out.data.data() + static_cast<std::size_t>(i) * kPixels;
    for (int p = 0; p < kPixels; ++p) {
      const double v = bg + 0.30 * img[p] + rng.normal(0.0, cfg.noise);
      row[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
}

}  // namespace

SynthData generate_synthetic(const SynthConfig& cfg) {
  if (cfg.train_count < 0 || cfg.test_count < 0)
    throw std::invalid_argument("generate_synthetic: counts must be non-negative");
  Rng rng(cfg.seed);

  SynthData data;
  data.train.labels.resize(static_cast<std::size_t>(cfg.train_count));
  for (auto& y : data.train.labels) y = static_cast<std::int32_t>(rng.uniform_int(10));
  data.test.labels.resize(static_cast<std::size_t>(cfg.test_count));
  for (auto& y : data.test.labels) y = static_cast<std::int32_t>(rng.uniform_int(10));

  data.train.images = Tensor({cfg.train_count, kPixels});
  data.test.images = Tensor({cfg.test_count, kPixels});
  data.train.sample_shape = {kSide, kSide};
  data.test.sample_shape = {kSide, kSide};
  data.train.num_classes = 10;
  data.test.num_classes = 10;

  sample_batch(data.train.labels, rng, cfg, data.train.images);
  sample_batch(data.test.labels, rng, cfg, data.test.images);
  return data;
}

}  // namespace rxsim
