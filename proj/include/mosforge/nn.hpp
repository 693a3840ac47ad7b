#pragma once

// Small reverse-mode network library: the layer kinds needed by the MOS
// regression heads, the natural/synthetic classifier and the ensemble net.
// Everything runs in double precision on the CPU, one sample at a time.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mosforge/common.hpp"
#include "mosforge/featureio.hpp"

namespace mosforge::nn {

struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}
  explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
    data.assign(std::accumulate(shape.begin(), shape.end(), size_t{1}, std::multiplies<>()), 0.0);
  }

  static Tensor vector(std::vector<double> values) {
    auto n = values.size();
    return Tensor({n}, std::move(values));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  size_t rank() const { return shape.size(); }
  size_t size() const { return data.size(); }

  bool operator==(const Tensor&) const = default;
};

inline std::string shape_string(const std::vector<size_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

enum class LayerKind : uint8_t { linear = 1, relu = 2, conv2d = 3, global_mean_pool = 4, sigmoid = 5 };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::linear: return "linear";
    case LayerKind::relu: return "relu";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::global_mean_pool: return "global_mean_pool";
    case LayerKind::sigmoid: return "sigmoid";
  }
  return "?";
}

/// One layer and its parameters.
///  linear:  weight [out, in], bias [out]; input rank 1 of size `in`.
///  conv2d:  weight [out, in, kernel, kernel], bias [out]; input [in, H, W],
///           valid padding.
///  global_mean_pool: [N, D] -> [D] (mean over rows), [C, H, W] -> [C].
struct Layer {
  LayerKind kind = LayerKind::relu;
  size_t in = 0;
  size_t out = 0;
  size_t kernel = 0;
  size_t stride = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  size_t fan_in() const { return kind == LayerKind::conv2d ? in * kernel * kernel : in; }
  size_t parameter_count() const { return weight.size() + bias.size(); }

  bool operator==(const Layer&) const = default;
};

inline Layer linear(size_t in, size_t out) {
  return {LayerKind::linear, in, out, 0, 0, std::vector<double>(in * out, 0.0), std::vector<double>(out, 0.0)};
}
inline Layer relu() { return {LayerKind::relu, 0, 0, 0, 0, {}, {}}; }
inline Layer sigmoid() { return {LayerKind::sigmoid, 0, 0, 0, 0, {}, {}}; }
inline Layer global_mean_pool() { return {LayerKind::global_mean_pool, 0, 0, 0, 0, {}, {}}; }
inline Layer conv2d(size_t in_ch, size_t out_ch, size_t kernel, size_t stride) {
  return {LayerKind::conv2d, in_ch, out_ch, kernel, stride, std::vector<double>(out_ch * in_ch * kernel * kernel, 0.0),
          std::vector<double>(out_ch, 0.0)};
}

struct Model {
  std::vector<Layer> layers;

  size_t parameter_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
  }

  bool operator==(const Model&) const = default;
};

/// Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline void initialize_parameters(Model& model, uint64_t seed) {
  Rng rng(seed);
  for (auto& l : model.layers) {
    if (l.weight.empty() && l.bias.empty()) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<size_t>(1, l.fan_in())));
    for (double& w : l.weight) w = rng.uniform(-bound, bound);
    for (double& b : l.bias) b = rng.uniform(-bound, bound);
  }
}

// ---------------------------------------------------------------------------
// Head architectures

inline Model make_pool_linear_head(size_t dim) {
  if (dim == 0) throw Error(ErrorCode::invalid_argument, "dim must be >= 1");
  return Model{{global_mean_pool(), linear(dim, 1)}};
}

/// Input is a 1-channel image [1, frames, dim]; needs frames, dim >= 7.
inline Model make_conv_head(size_t dim) {
  if (dim == 0) throw Error(ErrorCode::invalid_argument, "dim must be >= 1");
  return Model{{conv2d(1, 16, 3, 2), relu(), conv2d(16, 32, 3, 2), relu(), global_mean_pool(), linear(32, 32), relu(),
                linear(32, 16), relu(), linear(16, 1)}};
}

inline Model make_binary_classifier(size_t dim) {
  if (dim == 0) throw Error(ErrorCode::invalid_argument, "dim must be >= 1");
  return Model{{global_mean_pool(), linear(dim, 1), sigmoid()}};
}

inline Model make_ensemble_net(size_t in_dim) {
  if (in_dim == 0) throw Error(ErrorCode::invalid_argument, "in_dim must be >= 1");
  return Model{{linear(in_dim, 128), relu(), linear(128, 64), relu(), linear(64, 1)}};
}

/// [frames, dim] tensor for pooling heads.
inline Tensor frames_tensor(const FeatureMatrix& m) { return Tensor({m.frames, m.dim}, m.values); }
/// [1, frames, dim] tensor for the convolutional head.
inline Tensor image_tensor(const FeatureMatrix& m) { return Tensor({1, m.frames, m.dim}, m.values); }

// ---------------------------------------------------------------------------
// Forward

namespace detail {

[[noreturn]] inline void shape_error(size_t index, const Layer& l, const std::string& msg) {
  throw Error(ErrorCode::shape_mismatch, "layer " + std::to_string(index) + " (" + to_string(l.kind) + "): " + msg);
}

inline size_t conv_out(size_t n, size_t k, size_t s) { return (n - k) / s + 1; }

inline Tensor forward_layer(const Layer& l, const Tensor& x, size_t index) {
  switch (l.kind) {
    case LayerKind::linear: {
      if (x.rank() != 1 || x.size() != l.in) {
        shape_error(index, l, "expected input [" + std::to_string(l.in) + "], got " + shape_string(x.shape));
      }
      Tensor y({l.out});
      for (size_t o = 0; o < l.out; ++o) {
        double s = l.bias[o];
        const double* w = l.weight.data() + o * l.in;
        for (size_t i = 0; i < l.in; ++i) s += w[i] * x.data[i];
        y.data[o] = s;
      }
      return y;
    }
    case LayerKind::relu: {
      Tensor y = x;
      for (double& v : y.data) v = v > 0.0 ? v : 0.0;
      return y;
    }
    case LayerKind::sigmoid: {
      Tensor y = x;
      for (double& v : y.data) v = 1.0 / (1.0 + std::exp(-v));
      return y;
    }
    case LayerKind::global_mean_pool: {
      if (x.rank() == 2) {
        const size_t n = x.shape[0], d = x.shape[1];
        if (n == 0) shape_error(index, l, "cannot pool zero rows");
        Tensor y({d});
        for (size_t r = 0; r < n; ++r) {
          for (size_t c = 0; c < d; ++c) y.data[c] += x.data[r * d + c];
        }
        for (double& v : y.data) v /= static_cast<double>(n);
        return y;
      }
      if (x.rank() == 3) {
        const size_t c = x.shape[0], area = x.shape[1] * x.shape[2];
        if (area == 0) shape_error(index, l, "cannot pool an empty plane");
        Tensor y({c});
        for (size_t ch = 0; ch < c; ++ch) {
          double s = 0.0;
          for (size_t i = 0; i < area; ++i) s += x.data[ch * area + i];
          y.data[ch] = s / static_cast<double>(area);
        }
        return y;
      }
      shape_error(index, l, "expected rank 2 or 3 input, got " + shape_string(x.shape));
    }
    case LayerKind::conv2d: {
      if (x.rank() != 3 || x.shape[0] != l.in) {
        shape_error(index, l, "expected input [" + std::to_string(l.in) + ",H,W], got " + shape_string(x.shape));
      }
      const size_t h = x.shape[1], w = x.shape[2], k = l.kernel, s = l.stride;
      if (h < k || w < k) shape_error(index, l, "input " + shape_string(x.shape) + " smaller than kernel");
      const size_t ho = conv_out(h, k, s), wo = conv_out(w, k, s);
      Tensor y({l.out, ho, wo});
      for (size_t o = 0; o < l.out; ++o) {
        for (size_t i = 0; i < ho; ++i) {
          for (size_t j = 0; j < wo; ++j) {
            double acc = l.bias[o];
            for (size_t c = 0; c < l.in; ++c) {
              const double* wk = l.weight.data() + ((o * l.in + c) * k) * k;
              const double* xc = x.data.data() + c * h * w;
              for (size_t a = 0; a < k; ++a) {
                const double* xr = xc + (i * s + a) * w + j * s;
                for (size_t b = 0; b < k; ++b) acc += wk[a * k + b] * xr[b];
              }
            }
            y.data[(o * ho + i) * wo + j] = acc;
          }
        }
      }
      return y;
    }
  }
  shape_error(index, l, "unknown layer kind");
}

}  // namespace detail

/// Activations at every layer boundary; front() is the input, back() the output.
inline std::vector<Tensor> forward_trace(const Model& model, const Tensor& input) {
  std::vector<Tensor> acts;
  acts.reserve(model.layers.size() + 1);
  acts.push_back(input);
  for (size_t i = 0; i < model.layers.size(); ++i) acts.push_back(detail::forward_layer(model.layers[i], acts.back(), i));
  return acts;
}

inline Tensor forward(const Model& model, const Tensor& input) {
  Tensor x = input;
  for (size_t i = 0; i < model.layers.size(); ++i) x = detail::forward_layer(model.layers[i], x, i);
  return x;
}

// ---------------------------------------------------------------------------
// Losses and backward

enum class LossKind { mse, binary_cross_entropy };

inline constexpr double kProbabilityFloor = 1e-15;

inline double loss_value(LossKind kind, const Tensor& out, const Tensor& target) {
  if (out.size() != target.size()) {
    throw Error(ErrorCode::shape_mismatch, "target " + shape_string(target.shape) + " does not match output " + shape_string(out.shape));
  }
  double s = 0.0;
  for (size_t i = 0; i < out.size(); ++i) {
    if (kind == LossKind::mse) {
      const double d = out.data[i] - target.data[i];
      s += d * d;
    } else {
      const double p = std::clamp(out.data[i], kProbabilityFloor, 1.0 - kProbabilityFloor);
      const double t = target.data[i];
      s -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
  }
  return s / static_cast<double>(out.size());
}

inline Tensor loss_gradient(LossKind kind, const Tensor& out, const Tensor& target) {
  Tensor g(out.shape);
  const double n = static_cast<double>(out.size());
  for (size_t i = 0; i < out.size(); ++i) {
    if (kind == LossKind::mse) {
      g.data[i] = 2.0 * (out.data[i] - target.data[i]) / n;
    } else {
      const double raw = out.data[i];
      if (raw <= kProbabilityFloor || raw >= 1.0 - kProbabilityFloor) continue;
      g.data[i] = (raw - target.data[i]) / (raw * (1.0 - raw)) / n;
    }
  }
  return g;
}

/// Parameter gradients, laid out like the model's layers.
struct Gradients {
  std::vector<std::vector<double>> weight;
  std::vector<std::vector<double>> bias;

  static Gradients zeros_like(const Model& m) {
    Gradients g;
    for (const auto& l : m.layers) {
      g.weight.emplace_back(l.weight.size(), 0.0);
      g.bias.emplace_back(l.bias.size(), 0.0);
    }
    return g;
  }

  void add(const Gradients& o, double scale = 1.0) {
    for (size_t i = 0; i < weight.size(); ++i) {
      for (size_t j = 0; j < weight[i].size(); ++j) weight[i][j] += scale * o.weight[i][j];
      for (size_t j = 0; j < bias[i].size(); ++j) bias[i][j] += scale * o.bias[i][j];
    }
  }
};

struct BackwardResult {
  double loss = 0.0;
  Tensor output;
  Gradients gradients;
};

/// Loss and exact gradients of the loss with respect to every parameter.
inline BackwardResult backward(const Model& model, const Tensor& input, LossKind kind, const Tensor& target) {
  auto acts = forward_trace(model, input);
  BackwardResult res;
  res.output = acts.back();
  res.loss = loss_value(kind, res.output, target);
  res.gradients = Gradients::zeros_like(model);

  Tensor g = loss_gradient(kind, res.output, target);
  for (size_t li = model.layers.size(); li-- > 0;) {
    const Layer& l = model.layers[li];
    const Tensor& x = acts[li];
    const Tensor& y = acts[li + 1];
    Tensor gx(x.shape);
    switch (l.kind) {
      case LayerKind::linear: {
        auto& gw = res.gradients.weight[li];
        auto& gb = res.gradients.bias[li];
        for (size_t o = 0; o < l.out; ++o) {
          const double go = g.data[o];
          gb[o] += go;
          const double* w = l.weight.data() + o * l.in;
          double* gwr = gw.data() + o * l.in;
          for (size_t i = 0; i < l.in; ++i) {
            gwr[i] += go * x.data[i];
            gx.data[i] += w[i] * go;
          }
        }
        break;
      }
      case LayerKind::relu:
        for (size_t i = 0; i < x.size(); ++i) gx.data[i] = x.data[i] > 0.0 ? g.data[i] : 0.0;
        break;
      case LayerKind::sigmoid:
        for (size_t i = 0; i < x.size(); ++i) gx.data[i] = g.data[i] * y.data[i] * (1.0 - y.data[i]);
        break;
      case LayerKind::global_mean_pool:
        if (x.rank() == 2) {
          const size_t n = x.shape[0], d = x.shape[1];
          for (size_t r = 0; r < n; ++r) {
            for (size_t c = 0; c < d; ++c) gx.data[r * d + c] = g.data[c] / static_cast<double>(n);
          }
        } else {
          const size_t c = x.shape[0], area = x.shape[1] * x.shape[2];
          for (size_t ch = 0; ch < c; ++ch) {
            for (size_t i = 0; i < area; ++i) gx.data[ch * area + i] = g.data[ch] / static_cast<double>(area);
          }
        }
        break;
      case LayerKind::conv2d: {
        const size_t h = x.shape[1], w = x.shape[2], k = l.kernel, s = l.stride;
        const size_t ho = y.shape[1], wo = y.shape[2];
        auto& gw = res.gradients.weight[li];
        auto& gb = res.gradients.bias[li];
        for (size_t o = 0; o < l.out; ++o) {
          for (size_t i = 0; i < ho; ++i) {
            for (size_t j = 0; j < wo; ++j) {
              const double go = g.data[(o * ho + i) * wo + j];
              if (go == 0.0) continue;
              gb[o] += go;
              for (size_t c = 0; c < l.in; ++c) {
                const size_t wbase = ((o * l.in + c) * k) * k;
                const size_t xbase = c * h * w;
                for (size_t a = 0; a < k; ++a) {
                  const size_t xrow = xbase + (i * s + a) * w + j * s;
                  for (size_t b = 0; b < k; ++b) {
                    gw[wbase + a * k + b] += go * x.data[xrow + b];
                    gx.data[xrow + b] += go * l.weight[wbase + a * k + b];
                  }
                }
              }
            }
          }
        }
        break;
      }
    }
    g = std::move(gx);
  }
  return res;
}

/// Largest relative discrepancy between backward() and central differences
/// over all parameters. Denominators are floored at 1e-6 so gradients that
/// are numerically zero compare by absolute error.
inline double grad_check(const Model& model, const Tensor& input, const Tensor& target, LossKind kind, double epsilon = 1e-5) {
  const auto analytic = backward(model, input, kind, target).gradients;
  Model probe = model;
  double worst = 0.0;
  auto check = [&](double& param, double grad) {
    const double saved = param;
    param = saved + epsilon;
    const double up = loss_value(kind, forward(probe, input), target);
    param = saved - epsilon;
    const double down = loss_value(kind, forward(probe, input), target);
    param = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double denom = std::max({std::abs(numeric), std::abs(grad), 1e-6});
    worst = std::max(worst, std::abs(numeric - grad) / denom);
  };
  for (size_t li = 0; li < probe.layers.size(); ++li) {
    auto& l = probe.layers[li];
    for (size_t j = 0; j < l.weight.size(); ++j) check(l.weight[j], analytic.weight[li][j]);
    for (size_t j = 0; j < l.bias.size(); ++j) check(l.bias[j], analytic.bias[li][j]);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 1e-3;
  size_t batch_size = 32;
  size_t max_epochs = 200;
  size_t patience = 10;
  uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
};

struct EpochRecord {
  double train_loss = 0.0;
  double dev_loss = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct Sample {
  Tensor input;
  Tensor target;
};

struct TrainedModel {
  Model model;
  std::vector<EpochRecord> history;
  size_t best_epoch = 0;
};

/// Adaptive-moment optimizer state for one model.
class Adam {
 public:
  Adam(const Model& model, const TrainConfig& cfg) : cfg_(cfg), m_(Gradients::zeros_like(model)), v_(Gradients::zeros_like(model)) {}

  void step(Model& model, const Gradients& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto update = [&](std::vector<double>& p, const std::vector<double>& gr, std::vector<double>& m, std::vector<double>& v) {
      for (size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gr[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gr[i] * gr[i];
        p[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_epsilon);
      }
    };
    for (size_t li = 0; li < model.layers.size(); ++li) {
      update(model.layers[li].weight, g.weight[li], m_.weight[li], v_.weight[li]);
      update(model.layers[li].bias, g.bias[li], m_.bias[li], v_.bias[li]);
    }
  }

 private:
  TrainConfig cfg_;
  Gradients m_, v_;
  uint64_t t_ = 0;
};

inline double mean_loss(const Model& model, std::span<const Sample> samples, LossKind kind) {
  double s = 0.0;
  for (const auto& smp : samples) s += loss_value(kind, forward(model, smp.input), smp.target);
  return s / static_cast<double>(samples.size());
}

/// Minibatch training from the model's current parameters. Stops once the
/// dev loss has not improved for `patience` epochs and returns the
/// parameters of the best epoch.
inline TrainedModel train(Model model, std::span<const Sample> train_set, std::span<const Sample> dev_set, LossKind kind,
                          const TrainConfig& cfg) {
  if (train_set.empty() || dev_set.empty()) throw Error(ErrorCode::invalid_argument, "train and dev sets must be non-empty");
  if (!(cfg.learning_rate > 0.0) || cfg.batch_size == 0 || cfg.max_epochs == 0 || cfg.patience == 0) {
    throw Error(ErrorCode::invalid_argument, "invalid train config");
  }
  Rng rng(cfg.seed);
  Adam opt(model, cfg);
  TrainedModel result;
  result.model = model;
  double best = std::numeric_limits<double>::infinity();
  size_t since_best = 0;

  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      auto grad = Gradients::zeros_like(model);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (size_t b = start; b < end; ++b) {
        const auto& smp = train_set[order[b]];
        auto r = backward(model, smp.input, kind, smp.target);
        epoch_loss += r.loss;
        grad.add(r.gradients, scale);
      }
      opt.step(model, grad);
    }
    EpochRecord rec{epoch_loss / static_cast<double>(order.size()), mean_loss(model, dev_set, kind)};
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.dev_loss)) {
      throw Error(ErrorCode::divergence, "non-finite loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
    if (rec.dev_loss < best) {
      best = rec.dev_loss;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint: `MOSM`, version u16, layer count u32, then per layer the kind
// (u8), in/out/kernel/stride (u32 each) and its weight and bias as float64.

inline constexpr std::array<char, 4> kModelMagic = {'M', 'O', 'S', 'M'};
inline constexpr uint16_t kModelVersion = 1;

inline void write_model(const Model& model, std::ostream& out) {
  out.write(kModelMagic.data(), 4);
  le::put(out, kModelVersion);
  le::put(out, static_cast<uint32_t>(model.layers.size()));
  for (const auto& l : model.layers) {
    le::put(out, static_cast<uint8_t>(l.kind));
    le::put(out, static_cast<uint32_t>(l.in));
    le::put(out, static_cast<uint32_t>(l.out));
    le::put(out, static_cast<uint32_t>(l.kernel));
    le::put(out, static_cast<uint32_t>(l.stride));
    for (double w : l.weight) le::put_f64(out, w);
    for (double b : l.bias) le::put_f64(out, b);
  }
}

inline Model read_model(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (in.gcount() != 4 || magic != kModelMagic) throw Error(ErrorCode::bad_magic, "bad magic: not a MOSM checkpoint");
  uint16_t version = 0;
  uint32_t n = 0;
  if (!le::get(in, version)) throw Error(ErrorCode::truncated_payload, "truncated checkpoint header");
  if (version != kModelVersion) throw Error(ErrorCode::version_mismatch, "checkpoint version mismatch: " + std::to_string(version));
  if (!le::get(in, n)) throw Error(ErrorCode::truncated_payload, "truncated checkpoint header");
  Model model;
  for (uint32_t i = 0; i < n; ++i) {
    uint8_t kind = 0;
    uint32_t lin = 0, lout = 0, k = 0, s = 0;
    if (!le::get(in, kind) || !le::get(in, lin) || !le::get(in, lout) || !le::get(in, k) || !le::get(in, s)) {
      throw Error(ErrorCode::truncated_payload, "truncated layer header " + std::to_string(i));
    }
    Layer l;
    switch (static_cast<LayerKind>(kind)) {
      case LayerKind::linear: l = linear(lin, lout); break;
      case LayerKind::conv2d: l = conv2d(lin, lout, k, s); break;
      case LayerKind::relu: l = relu(); break;
      case LayerKind::sigmoid: l = sigmoid(); break;
      case LayerKind::global_mean_pool: l = global_mean_pool(); break;
      default: throw Error(ErrorCode::parse_error, "unknown layer kind " + std::to_string(kind));
    }
    for (double& w : l.weight) {
      if (!le::get_f64(in, w)) throw Error(ErrorCode::truncated_payload, "truncated parameters in layer " + std::to_string(i));
    }
    for (double& b : l.bias) {
      if (!le::get_f64(in, b)) throw Error(ErrorCode::truncated_payload, "truncated parameters in layer " + std::to_string(i));
    }
    model.layers.push_back(std::move(l));
  }
  return model;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
          {"patience", c.patience},           {"seed", c.seed},             {"beta1", c.beta1},
          {"beta2", c.beta2},                 {"adam_epsilon", c.adam_epsilon}};
}

/// Reads known keys, leaving defaults for the rest.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  return c;
}

/// JSON sidecar stored next to a checkpoint.
inline nlohmann::json history_json(const TrainedModel& m, const TrainConfig& c) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : m.history) hist.push_back({{"train_loss", r.train_loss}, {"dev_loss", r.dev_loss}});
  return {{"config", to_json(c)}, {"history", hist}, {"best_epoch", m.best_epoch}};
}

}  // namespace mosforge::nn
