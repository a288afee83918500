#pragma once
// Labeled image datasets and their on-disk formats: IDX (big-endian magic and
// dimensions, u8 pixels) and the CIFAR-10 binary batch layout.
#include <cstdint>
#include <string>
#include <vector>

#include "rxsim/tensor.hpp"

namespace rxsim {

struct Dataset {
  Tensor images;                          // (N, D) rows, pixel values in [0,1]
  std::vector<std::int32_t> labels;       // length N
  std::vector<std::int64_t> sample_shape; // e.g. {1,28,28}; D = product
  int num_classes = 10;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

// First n samples (n<=0 or n>=size returns a full copy).
Dataset subset(const Dataset& ds, std::int64_t n);

// IDX image+label file pair. Pixels are scaled to [0,1] as value/255.
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path);

// Writers quantize [0,1] floats to u8 via round(clamp(v)*255).
void save_idx_images(const std::string& path, const Tensor& images, std::int64_t rows, std::int64_t cols);
void save_idx_labels(const std::string& path, const std::vector<std::int32_t>& labels);

// CIFAR-10 binary batches (3072-byte RGB records preceded by a label byte).
Dataset load_cifar10_batches(const std::vector<std::string>& paths);

}  // namespace rxsim
