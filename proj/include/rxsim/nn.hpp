#pragma once
// From-scratch inference and training for desk-scale classifiers (MLP and a
// small CNN): forward pass, softmax cross-entropy backprop, SGD with momentum,
// and masked fine-tuning that keeps pruned weights at exactly zero.
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rxsim/dataset.hpp"
#include "rxsim/tensor.hpp"

namespace rxsim {

enum class LayerKind { Dense, Conv2d, ReLU, MaxPool2d, Flatten };

const char* layer_kind_name(LayerKind k);
LayerKind parse_layer_kind(const std::string& name);

struct Layer {
  LayerKind kind{};
  Tensor weights;  // Dense: (in, out); Conv2d: (out_c, in_c, kh, kw)
  Tensor bias;     // Dense: (out); Conv2d: (out_c)
  std::vector<std::uint8_t> prune_mask;  // congruent to weights; empty = all live
  int stride = 1;
  int padding = 0;
  int pool = 2;  // MaxPool2d window and step

  bool has_weights() const { return !weights.empty(); }

  static Layer dense(std::int64_t in, std::int64_t out);
  static Layer conv2d(std::int64_t out_c, std::int64_t in_c, int kh, int kw, int stride = 1, int padding = 0);
  static Layer relu();
  static Layer maxpool2d(int pool);
  static Layer flatten();
};

struct Model {
  std::string name;
  std::vector<std::int64_t> input_shape;  // per sample, e.g. {784} or {1,28,28}
  int num_classes = 10;
  std::vector<Layer> layers;

  std::vector<int> prunable_layers() const;  // indices of layers with weights
  std::int64_t weight_count() const;
};

// Reference architectures. Weight init: uniform(-L, L), L = sqrt(6/(fan_in+fan_out)).
Model make_mlp(std::int64_t in, std::int64_t hidden, int classes, std::uint64_t init_seed);
Model make_reference_mlp(std::uint64_t init_seed);  // 784-128-10
Model make_reference_cnn(std::uint64_t init_seed);  // conv1->8 5x5, pool2, conv8->16 5x5, pool2, dense 256->10

// Class logits, shape (batch, classes). Throws on shape mismatch, naming the layer index.
Tensor forward(const Model& model, const Tensor& batch);

// Mean softmax cross-entropy of a labeled batch.
double loss_softmax_ce(const Model& model, const Tensor& batch, const std::vector<std::int32_t>& labels);

struct Gradients {
  std::vector<Tensor> weight_grads;  // per layer; empty tensor where layer has none
  std::vector<Tensor> bias_grads;
  double loss = 0.0;
};

// Backprop of mean softmax cross-entropy through the whole model.
Gradients backward_softmax_ce(const Model& model, const Tensor& batch, const std::vector<std::int32_t>& labels);

struct TrainConfig {
  int epochs = 5;
  float lr = 0.1f;
  float momentum = 0.9f;
  int batch_size = 128;
  std::uint64_t seed = 0;     // drives the per-epoch shuffle
  bool respect_mask = false;  // zero gradients at masked-off weights each step
};

// Plain SGD with momentum (velocity form: v <- m*v - lr*g; w <- w + v).
// Single-threaded and bit-reproducible for a fixed seed. Throws if the loss
// turns non-finite, reporting epoch and step.
[[nodiscard]] Model train_sgd(const Model& model, const Dataset& train, const TrainConfig& cfg);

// argmax predictions; ties resolve to the lowest class index.
std::vector<std::int32_t> predict(const Model& model, const Tensor& batch);

// Fraction of samples whose argmax logit equals the label.
double evaluate_accuracy(const Model& model, const Dataset& ds);

}  // namespace rxsim
