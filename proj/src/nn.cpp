#include "rxsim/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "rxsim/rng.hpp"

namespace rxsim {
namespace {

[[noreturn]] void layer_error(int index, LayerKind kind, const std::string& what) {
  throw std::runtime_error("layer " + std::to_string(index) + " (" + layer_kind_name(kind) + "): " + what);
}

struct ConvDims {
  std::int64_t n, c, h, w, oc, kh, kw, oh, ow;
};

ConvDims conv_dims(const Layer& l, const Tensor& x, int index) {
  if (x.rank() != 4) layer_error(index, l.kind, "expected rank-4 input, got " + x.shape_str());
  ConvDims d{};
  d.n = x.dim(0);
  d.c = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.oc = l.weights.dim(0);
  d.kh = l.weights.dim(2);
  d.kw = l.weights.dim(3);
  if (l.weights.dim(1) != d.c)
    layer_error(index, l.kind,
                "expected " + std::to_string(l.weights.dim(1)) + " input channels, got " + std::to_string(d.c));
  d.oh = (d.h + 2 * l.padding - d.kh) / l.stride + 1;
  d.ow = (d.w + 2 * l.padding - d.kw) / l.stride + 1;
  if (d.oh <= 0 || d.ow <= 0) layer_error(index, l.kind, "kernel does not fit input " + x.shape_str());
  return d;
}

// (N,C,H,W) -> (N*OH*OW, C*KH*KW); out-of-bounds taps read as zero.
Tensor im2col(const Tensor& x, const ConvDims& d, int stride, int padding) {
  Tensor cols({d.n * d.oh * d.ow, d.c * d.kh * d.kw});
  std::int64_t row = 0;
  for (std::int64_t n = 0; n < d.n; ++n) {
    for (std::int64_t oh = 0; oh < d.oh; ++oh) {
      for (std::int64_t ow = 0; ow < d.ow; ++ow, ++row) {
        float* dst = cols.data.data() + row * cols.dim(1);
        for (std::int64_t c = 0; c < d.c; ++c) {
          for (std::int64_t kh = 0; kh < d.kh; ++kh) {
            const std::int64_t ih = oh * stride - padding + kh;
            for (std::int64_t kw = 0; kw < d.kw; ++kw) {
              const std::int64_t iw = ow * stride - padding + kw;
              const std::int64_t col = (c * d.kh + kh) * d.kw + kw;
              dst[col] = (ih >= 0 && ih < d.h && iw >= 0 && iw < d.w) ? x(n, c, ih, iw) : 0.0f;
            }
          }
        }
      }
    }
  }
  return cols;
}

void col2im_accumulate(const Tensor& cols, const ConvDims& d, int stride, int padding, Tensor& dx) {
  std::int64_t row = 0;
  for (std::int64_t n = 0; n < d.n; ++n) {
    for (std::int64_t oh = 0; oh < d.oh; ++oh) {
      for (std::int64_t ow = 0; ow < d.ow; ++ow, ++row) {
        const float* src = cols.data.data() + row * cols.dim(1);
        for (std::int64_t c = 0; c < d.c; ++c) {
          for (std::int64_t kh = 0; kh < d.kh; ++kh) {
            const std::int64_t ih = oh * stride - padding + kh;
            if (ih < 0 || ih >= d.h) continue;
            for (std::int64_t kw = 0; kw < d.kw; ++kw) {
              const std::int64_t iw = ow * stride - padding + kw;
              if (iw < 0 || iw >= d.w) continue;
              dx(n, c, ih, iw) += src[(c * d.kh + kh) * d.kw + kw];
            }
          }
        }
      }
    }
  }
}

// Conv weights (OC,IC,KH,KW) flattened to (IC*KH*KW, OC) to share the matmul path.
Tensor conv_weight_matrix(const Tensor& w) {
  const std::int64_t oc = w.dim(0), ic = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  Tensor f({ic * kh * kw, oc});
  for (std::int64_t o = 0; o < oc; ++o)
    for (std::int64_t c = 0; c < ic; ++c)
      for (std::int64_t a = 0; a < kh; ++a)
        for (std::int64_t b = 0; b < kw; ++b) f((c * kh + a) * kw + b, o) = w(o, c, a, b);
  return f;
}

struct LayerTrace {
  Tensor output;
  Tensor cols;                        // Conv2d: im2col of the input
  std::vector<std::int64_t> argmax;   // MaxPool2d: winning flat input index per output cell
  ConvDims dims{};                    // Conv2d / MaxPool2d geometry
};

Tensor reshape_input(const Model& model, const Tensor& batch) {
  std::int64_t d = 1;
  for (auto v : model.input_shape) d *= v;
  if (batch.rank() != 2 || batch.dim(1) != d)
    throw std::runtime_error("model " + model.name + ": expected batch of width " + std::to_string(d) + ", got " +
                             batch.shape_str());
  if (model.input_shape.size() == 3) {
    Tensor x({batch.dim(0), model.input_shape[0], model.input_shape[1], model.input_shape[2]});
    x.data = batch.data;
    return x;
  }
  return batch;
}

Tensor run_forward(const Model& model, const Tensor& batch, std::vector<LayerTrace>* traces) {
  Tensor cur = reshape_input(model, batch);
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const Layer& l = model.layers[li];
    const int idx = static_cast<int>(li);
    LayerTrace trace;
    switch (l.kind) {
      case LayerKind::Dense: {
        if (cur.rank() != 2) layer_error(idx, l.kind, "expected rank-2 input, got " + cur.shape_str() + " (missing flatten?)");
        if (cur.dim(1) != l.weights.dim(0))
          layer_error(idx, l.kind,
                      "expected input width " + std::to_string(l.weights.dim(0)) + ", got " + std::to_string(cur.dim(1)));
        Tensor y = matmul(cur, l.weights);
        add_row_vector(y, l.bias);
        cur = std::move(y);
        break;
      }
      case LayerKind::Conv2d: {
        const ConvDims d = conv_dims(l, cur, idx);
        Tensor cols = im2col(cur, d, l.stride, l.padding);
        Tensor ymat = matmul(cols, conv_weight_matrix(l.weights));  // (N*OH*OW, OC)
        Tensor y({d.n, d.oc, d.oh, d.ow});
        std::int64_t row = 0;
        for (std::int64_t n = 0; n < d.n; ++n)
          for (std::int64_t oh = 0; oh < d.oh; ++oh)
            for (std::int64_t ow = 0; ow < d.ow; ++ow, ++row)
              for (std::int64_t o = 0; o < d.oc; ++o) y(n, o, oh, ow) = ymat(row, o) + l.bias[o];
        if (traces) {
          trace.cols = std::move(cols);
          trace.dims = d;
        }
        cur = std::move(y);
        break;
      }
      case LayerKind::ReLU: {
        Tensor y = cur;
        for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
        cur = std::move(y);
        break;
      }
      case LayerKind::MaxPool2d: {
        if (cur.rank() != 4) layer_error(idx, l.kind, "expected rank-4 input, got " + cur.shape_str());
        const std::int64_t n = cur.dim(0), c = cur.dim(1), h = cur.dim(2), w = cur.dim(3);
        const std::int64_t oh = h / l.pool, ow = w / l.pool;
        if (oh == 0 || ow == 0) layer_error(idx, l.kind, "pool window exceeds input " + cur.shape_str());
        Tensor y({n, c, oh, ow});
        if (traces) trace.argmax.resize(static_cast<std::size_t>(y.numel()));
        std::int64_t out_i = 0;
        for (std::int64_t ni = 0; ni < n; ++ni)
          for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t yo = 0; yo < oh; ++yo)
              for (std::int64_t xo = 0; xo < ow; ++xo, ++out_i) {
                float best = -std::numeric_limits<float>::infinity();
                std::int64_t best_idx = 0;
                for (int dy = 0; dy < l.pool; ++dy)
                  for (int dx = 0; dx < l.pool; ++dx) {
                    const std::int64_t yi = yo * l.pool + dy, xi = xo * l.pool + dx;
                    const std::int64_t flat = ((ni * c + ci) * h + yi) * w + xi;
                    const float v = cur[flat];
                    if (v > best) {
                      best = v;
                      best_idx = flat;
                    }
                  }
                y[out_i] = best;
                if (traces) trace.argmax[static_cast<std::size_t>(out_i)] = best_idx;
              }
        if (traces) {
          trace.dims.n = n;
          trace.dims.c = c;
          trace.dims.h = h;
          trace.dims.w = w;
        }
        cur = std::move(y);
        break;
      }
      case LayerKind::Flatten: {
        if (cur.rank() == 2) break;
        Tensor y({cur.dim(0), cur.numel() / cur.dim(0)});
        y.data = cur.data;
        cur = std::move(y);
        break;
      }
    }
    if (traces) {
      trace.output = cur;
      traces->push_back(std::move(trace));
    }
  }
  if (cur.rank() != 2 || cur.dim(1) != model.num_classes)
    throw std::runtime_error("model " + model.name + ": final output " + cur.shape_str() + " is not (batch, " +
                             std::to_string(model.num_classes) + ")");
  return cur;
}

// softmax rows and mean cross-entropy; dlogits = (softmax - onehot)/N.
double softmax_ce_grad(const Tensor& logits, const std::vector<std::int32_t>& labels, Tensor& dlogits) {
  const std::int64_t n = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw std::invalid_argument("labels size does not match batch size");
  dlogits = Tensor({n, c});
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = logits.data.data() + i * c;
    float mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    const std::int32_t y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw std::invalid_argument("label out of range: " + std::to_string(y));
    loss -= static_cast<double>(row[y] - mx) - std::log(denom);
    for (std::int64_t j = 0; j < c; ++j) {
      const double p = std::exp(static_cast<double>(row[j] - mx)) / denom;
      dlogits(i, j) = static_cast<float>((p - (j == y ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  return loss / static_cast<double>(n);
}

Tensor column_sums(const Tensor& a) {
  Tensor s({a.dim(1)});
  for (std::int64_t i = 0; i < a.dim(0); ++i)
    for (std::int64_t j = 0; j < a.dim(1); ++j) s[j] += a(i, j);
  return s;
}

void init_uniform(Tensor& w, Rng& rng, std::int64_t fan_in, std::int64_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : w.data) v = static_cast<float>(rng.uniform(-limit, limit));
}

}  // namespace

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool2d: return "maxpool2d";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& name) {
  if (name == "dense") return LayerKind::Dense;
  if (name == "conv2d") return LayerKind::Conv2d;
  if (name == "relu") return LayerKind::ReLU;
  if (name == "maxpool2d") return LayerKind::MaxPool2d;
  if (name == "flatten") return LayerKind::Flatten;
  throw std::invalid_argument("unknown layer kind: " + name);
}

Layer Layer::dense(std::int64_t in, std::int64_t out) {
  Layer l;
  l.kind = LayerKind::Dense;
  l.weights = Tensor({in, out});
  l.bias = Tensor({out});
  return l;
}

Layer Layer::conv2d(std::int64_t out_c, std::int64_t in_c, int kh, int kw, int stride, int padding) {
  Layer l;
  l.kind = LayerKind::Conv2d;
  l.weights = Tensor({out_c, in_c, kh, kw});
  l.bias = Tensor({out_c});
  l.stride = stride;
  l.padding = padding;
  return l;
}

Layer Layer::relu() {
  Layer l;
  l.kind = LayerKind::ReLU;
  return l;
}

Layer Layer::maxpool2d(int pool) {
  Layer l;
  l.kind = LayerKind::MaxPool2d;
  l.pool = pool;
  return l;
}

Layer Layer::flatten() {
  Layer l;
  l.kind = LayerKind::Flatten;
  return l;
}

std::vector<int> Model::prunable_layers() const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].has_weights()) idx.push_back(static_cast<int>(i));
  return idx;
}

std::int64_t Model::weight_count() const {
  std::int64_t n = 0;
  for (const auto& l : layers) n += l.weights.numel();
  return n;
}

Model make_mlp(std::int64_t in, std::int64_t hidden, int classes, std::uint64_t init_seed) {
  Model m;
  m.name = "mlp-" + std::to_string(in) + "-" + std::to_string(hidden) + "-" + std::to_string(classes);
  m.input_shape = {in};
  m.num_classes = classes;
  m.layers.push_back(Layer::dense(in, hidden));
  m.layers.push_back(Layer::relu());
  m.layers.push_back(Layer::dense(hidden, classes));
  Rng rng(init_seed);
  init_uniform(m.layers[0].weights, rng, in, hidden);
  init_uniform(m.layers[2].weights, rng, hidden, classes);
  return m;
}

Model make_reference_mlp(std::uint64_t init_seed) { return make_mlp(784, 128, 10, init_seed); }

Model make_reference_cnn(std::uint64_t init_seed) {
  Model m;
  m.name = "cnn-8-16";
  m.input_shape = {1, 28, 28};
  m.num_classes = 10;
  m.layers.push_back(Layer::conv2d(8, 1, 5, 5));
  m.layers.push_back(Layer::relu());
  m.layers.push_back(Layer::maxpool2d(2));
  m.layers.push_back(Layer::conv2d(16, 8, 5, 5));
  m.layers.push_back(Layer::relu());
  m.layers.push_back(Layer::maxpool2d(2));
  m.layers.push_back(Layer::flatten());
  m.layers.push_back(Layer::dense(256, 10));
  Rng rng(init_seed);
  init_uniform(m.layers[0].weights, rng, 1 * 5 * 5, 8 * 5 * 5);
  init_uniform(m.layers[3].weights, rng, 8 * 5 * 5, 16 * 5 * 5);
  init_uniform(m.layers[7].weights, rng, 256, 10);
  return m;
}

Tensor forward(const Model& model, const Tensor& batch) { return run_forward(model, batch, nullptr); }

double loss_softmax_ce(const Model& model, const Tensor& batch, const std::vector<std::int32_t>& labels) {
  const Tensor logits = forward(model, batch);
  Tensor unused;
  return softmax_ce_grad(logits, labels, unused);
}

Gradients backward_softmax_ce(const Model& model, const Tensor& batch, const std::vector<std::int32_t>& labels) {
  std::vector<LayerTrace> traces;
  traces.reserve(model.layers.size());
  const Tensor input = reshape_input(model, batch);
  const Tensor logits = run_forward(model, batch, &traces);

  Gradients g;
  g.weight_grads.resize(model.layers.size());
  g.bias_grads.resize(model.layers.size());
  Tensor dy;
  g.loss = softmax_ce_grad(logits, labels, dy);

  for (int li = static_cast<int>(model.layers.size()) - 1; li >= 0; --li) {
    const Layer& l = model.layers[static_cast<std::size_t>(li)];
    const Tensor& x = li == 0 ? input : traces[static_cast<std::size_t>(li - 1)].output;
    LayerTrace& t = traces[static_cast<std::size_t>(li)];
    switch (l.kind) {
      case LayerKind::Dense: {
        g.weight_grads[static_cast<std::size_t>(li)] = matmul(transpose2d(x), dy);
        g.bias_grads[static_cast<std::size_t>(li)] = column_sums(dy);
        dy = matmul(dy, transpose2d(l.weights));
        break;
      }
      case LayerKind::Conv2d: {
        const ConvDims& d = t.dims;
        Tensor dymat({d.n * d.oh * d.ow, d.oc});
        std::int64_t row = 0;
        for (std::int64_t n = 0; n < d.n; ++n)
          for (std::int64_t oh = 0; oh < d.oh; ++oh)
            for (std::int64_t ow = 0; ow < d.ow; ++ow, ++row)
              for (std::int64_t o = 0; o < d.oc; ++o) dymat(row, o) = dy(n, o, oh, ow);
        const Tensor wf = conv_weight_matrix(l.weights);
        const Tensor dwf = matmul(transpose2d(t.cols), dymat);  // (IC*KH*KW, OC)
        Tensor dw(l.weights.shape);
        for (std::int64_t o = 0; o < d.oc; ++o)
          for (std::int64_t c = 0; c < l.weights.dim(1); ++c)
            for (std::int64_t a = 0; a < d.kh; ++a)
              for (std::int64_t b = 0; b < d.kw; ++b) dw(o, c, a, b) = dwf((c * d.kh + a) * d.kw + b, o);
        g.weight_grads[static_cast<std::size_t>(li)] = std::move(dw);
        g.bias_grads[static_cast<std::size_t>(li)] = column_sums(dymat);
        const Tensor dcols = matmul(dymat, transpose2d(wf));
        Tensor dx(x.shape);
        col2im_accumulate(dcols, d, l.stride, l.padding, dx);
        dy = std::move(dx);
        break;
      }
      case LayerKind::ReLU: {
        Tensor dx = dy;
        for (std::int64_t i = 0; i < dx.numel(); ++i)
          if (t.output[i] <= 0.0f) dx[i] = 0.0f;
        dy = std::move(dx);
        break;
      }
      case LayerKind::MaxPool2d: {
        Tensor dx(x.shape);
        for (std::int64_t i = 0; i < dy.numel(); ++i) dx[t.argmax[static_cast<std::size_t>(i)]] += dy[i];
        dy = std::move(dx);
        break;
      }
      case LayerKind::Flatten: {
        Tensor dx(x.shape);
        dx.data = dy.data;
        dy = std::move(dx);
        break;
      }
    }
  }
  return g;
}

Model train_sgd(const Model& model, const Dataset& train, const TrainConfig& cfg) {
  if (train.size() == 0) throw std::invalid_argument("train_sgd: empty dataset");
  if (cfg.lr <= 0.0f) throw std::invalid_argument("train_sgd: lr must be positive");
  Model m = model;
  std::vector<Tensor> vel_w(m.layers.size()), vel_b(m.layers.size());
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (!m.layers[i].has_weights()) continue;
    vel_w[i] = Tensor(m.layers[i].weights.shape);
    vel_b[i] = Tensor(m.layers[i].bias.shape);
  }

  Rng rng(cfg.seed);
  const std::int64_t n = train.size();
  const std::int64_t d = train.images.dim(1);
  const std::int64_t bs = std::max(1, cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = rng.permutation(n);
    for (std::int64_t start = 0, step = 0; start < n; start += bs, ++step) {
      const std::int64_t cur = std::min(bs, n - start);
      Tensor xb({cur, d});
      std::vector<std::int32_t> yb(static_cast<std::size_t>(cur));
      for (std::int64_t i = 0; i < cur; ++i) {
        const std::int64_t src = order[static_cast<std::size_t>(start + i)];
        std::copy_n(train.images.data.begin() + src * d, d, xb.data.begin() + i * d);
        yb[static_cast<std::size_t>(i)] = train.labels[static_cast<std::size_t>(src)];
      }

      Gradients g = backward_softmax_ce(m, xb, yb);
      if (!std::isfinite(g.loss))
        throw std::runtime_error("training diverged: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step));

      for (std::size_t li = 0; li < m.layers.size(); ++li) {
        Layer& l = m.layers[li];
        if (!l.has_weights()) continue;
        Tensor& gw = g.weight_grads[li];
        if (cfg.respect_mask && !l.prune_mask.empty())
          for (std::int64_t i = 0; i < gw.numel(); ++i)
            if (!l.prune_mask[static_cast<std::size_t>(i)]) gw[i] = 0.0f;
        for (std::int64_t i = 0; i < gw.numel(); ++i) {
          vel_w[li][i] = cfg.momentum * vel_w[li][i] - cfg.lr * gw[i];
          l.weights[i] += vel_w[li][i];
        }
        if (cfg.respect_mask && !l.prune_mask.empty())
          for (std::int64_t i = 0; i < l.weights.numel(); ++i)
            if (!l.prune_mask[static_cast<std::size_t>(i)]) l.weights[i] = 0.0f;
        Tensor& gb = g.bias_grads[li];
        for (std::int64_t i = 0; i < gb.numel(); ++i) {
          vel_b[li][i] = cfg.momentum * vel_b[li][i] - cfg.lr * gb[i];
          l.bias[i] += vel_b[li][i];
        }
      }
    }
  }
  return m;
}

std::vector<std::int32_t> predict(const Model& model, const Tensor& batch) {
  const Tensor logits = forward(model, batch);
  const std::int64_t n = logits.dim(0), c = logits.dim(1);
  std::vector<std::int32_t> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = logits.data.data() + i * c;
    int best = 0;
    for (std::int64_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = static_cast<int>(j);  // ties keep the lowest class
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

double evaluate_accuracy(const Model& model, const Dataset& ds) {
  if (ds.size() == 0) throw std::invalid_argument("evaluate_accuracy: empty dataset");
  bool has_conv = false;
  for (const auto& l : model.layers) has_conv |= l.kind == LayerKind::Conv2d;
  const std::int64_t chunk = has_conv ? 256 : 8192;
  const std::int64_t n = ds.size(), d = ds.images.dim(1);
  std::int64_t correct = 0;
  for (std::int64_t start = 0; start < n; start += chunk) {
    const std::int64_t cur = std::min(chunk, n - start);
    Tensor xb({cur, d});
    std::copy_n(ds.images.data.begin() + start * d, cur * d, xb.data.begin());
    const auto preds = predict(model, xb);
    for (std::int64_t i = 0; i < cur; ++i)
      if (preds[static_cast<std::size_t>(i)] == ds.labels[static_cast<std::size_t>(start + i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace rxsim
