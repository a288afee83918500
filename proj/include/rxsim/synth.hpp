#pragma once
// Synthetic digit corpus: ten glyph classes, two stroke-style variants each,
// rendered as distance-to-stroke coverage at 28x28 pixel centers, with
// per-sample control-point jitter, affine warp (rotation, anisotropic scale,
// shear, translation), distractor strokes, occlusion patches, a dim gray
// background, and Gaussian pixel noise. All randomness comes from one counter
// RNG, so a seed fully determines the corpus.
#include <cstdint>

#include "rxsim/dataset.hpp"

namespace rxsim {

struct SynthConfig {
  std::int64_t train_count = 60000;
  std::int64_t test_count = 10000;
  std::uint64_t seed = 1;
  double bold = 0.085;    // stroke half-width scale
  double noise = 0.05;    // background Gaussian noise sigma
  double jitter = 0.018;  // control-point jitter sigma
};

struct SynthData {
  Dataset train;
  Dataset test;
};

// Draw order per corpus: train labels, test labels, train images, test
// images. Per sample: style pick, control-point jitter, warp parameters,
// stroke width, intensity, distractors, occlusion, background, pixel noise.
SynthData generate_synthetic(const SynthConfig& cfg);

}  // namespace rxsim
