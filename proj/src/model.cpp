// Copyright 2026 The cetq Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cetq/model.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <random>
#include <thread>

#include "cetq/checksum.hpp"
#include "cetq/error.hpp"
#include "dual.hpp"

namespace cetq {

// ---------------------------------------------------------------------------
// Names

std::string to_string(LayerKind kind) { return kind == LayerKind::kDense ? "dense" : "conv2d"; }

std::string to_string(Activation act) {
  switch (act) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
  }
  return "identity";
}

std::string to_string(LossKind kind) {
  return kind == LossKind::kCrossEntropy ? "cross_entropy" : "mse";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kCalibration: return "calibration";
    case Split::kEval: return "eval";
  }
  return "train";
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "dense") return LayerKind::kDense;
  if (s == "conv2d") return LayerKind::kConv2d;
  throw ConfigError("unknown layer kind '" + s + "'");
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity" || s == "linear") return Activation::kIdentity;
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + s + "'");
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "cross_entropy" || s == "ce") return LossKind::kCrossEntropy;
  if (s == "mse") return LossKind::kMeanSquaredError;
  throw ConfigError("unknown loss kind '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "calibration" || s == "calib") return Split::kCalibration;
  if (s == "eval") return Split::kEval;
  throw ConfigError("unknown split '" + s + "'");
}

// ---------------------------------------------------------------------------
// Specs

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, Activation act) {
  return {LayerKind::kDense, {in, 1, 1}, {out, 1, 1}, 0, act};
}

LayerSpec LayerSpec::conv2d(Shape in, std::size_t out_channels, std::size_t kernel, Activation act) {
  if (kernel == 0 || kernel > in.height || kernel > in.width) {
    throw ConfigError("conv2d kernel does not fit the input");
  }
  Shape out{out_channels, in.height - kernel + 1, in.width - kernel + 1};
  return {LayerKind::kConv2d, in, out, kernel, act};
}

std::size_t LayerSpec::weight_count() const {
  if (kind == LayerKind::kDense) return input.size() * output.size();
  return output.channels * input.channels * kernel * kernel;
}

ModelSpec ModelSpec::mlp(std::span<const std::size_t> widths, Activation hidden, LossKind loss) {
  if (widths.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
  ModelSpec spec;
  spec.loss = loss;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    bool last = i + 2 == widths.size();
    spec.layers.push_back(
        LayerSpec::dense(widths[i], widths[i + 1], last ? Activation::kIdentity : hidden));
  }
  return spec;
}

void ModelSpec::validate() const {
  if (layers.empty()) throw ConfigError("model has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.input.size() == 0 || l.output.size() == 0) {
      throw ConfigError("layer " + std::to_string(i) + " has an empty shape");
    }
    if (l.kind == LayerKind::kConv2d) {
      if (l.kernel == 0 || l.kernel > l.input.height || l.kernel > l.input.width ||
          l.output.height != l.input.height - l.kernel + 1 ||
          l.output.width != l.input.width - l.kernel + 1) {
        throw ConfigError("conv2d layer " + std::to_string(i) + " has inconsistent shapes");
      }
    }
    if (i > 0 && layers[i - 1].output.size() != l.input.size()) {
      throw ConfigError("layer " + std::to_string(i - 1) + " output (" +
                        std::to_string(layers[i - 1].output.size()) + ") does not feed layer " +
                        std::to_string(i) + " input (" + std::to_string(l.input.size()) + ")");
    }
    if (i > 0 && l.kind == LayerKind::kConv2d && !(layers[i - 1].output == l.input)) {
      throw ConfigError("conv2d layer " + std::to_string(i) + " input shape mismatch");
    }
  }
}

std::size_t ModelSpec::num_params() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.param_count();
  return n;
}

SegmentMap ModelSpec::segment_map() const {
  std::vector<std::size_t> lengths;
  for (const auto& l : layers) lengths.push_back(l.param_count());
  return SegmentMap::from_lengths(lengths);
}

std::uint64_t checksum(const ModelSpec& spec) {
  Checksum c;
  c.update(to_string(spec.loss));
  for (const auto& l : spec.layers) {
    c.update(to_string(l.kind)).update(to_string(l.activation));
    for (std::size_t v : {l.input.channels, l.input.height, l.input.width, l.output.channels,
                          l.output.height, l.output.width, l.kernel}) {
      c.update(static_cast<std::uint64_t>(v));
    }
  }
  return c.value();
}

std::uint64_t checksum(const ParameterVector& params) {
  Checksum c;
  for (const auto& s : params.segments()) {
    c.update(static_cast<std::uint64_t>(s.layer_id)).update(static_cast<std::uint64_t>(s.length));
  }
  c.update(params.span());
  return c.value();
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(Shape input_shape, std::size_t num_classes, Split split, std::size_t target_dim)
    : input_shape_(input_shape), num_classes_(num_classes), target_dim_(target_dim), split_(split) {}

void Dataset::add(std::span<const double> input, std::int32_t label, std::span<const double> target) {
  if (input.size() != input_shape_.size()) throw ConfigError("sample input has the wrong size");
  if (target.size() != target_dim_) throw ConfigError("sample target has the wrong size");
  if (num_classes_ > 0 && (label < 0 || static_cast<std::size_t>(label) >= num_classes_)) {
    throw ConfigError("label " + std::to_string(label) + " outside [0, " +
                      std::to_string(num_classes_) + ")");
  }
  inputs_.insert(inputs_.end(), input.begin(), input.end());
  labels_.push_back(label);
  targets_.insert(targets_.end(), target.begin(), target.end());
}

std::span<const double> Dataset::input(std::size_t i) const {
  std::size_t d = input_shape_.size();
  return {inputs_.data() + i * d, d};
}

std::span<const double> Dataset::target(std::size_t i) const {
  return {targets_.data() + i * target_dim_, target_dim_};
}

Dataset Dataset::slice(std::size_t begin, std::size_t end, Split split) const {
  if (begin > end || end > size()) throw ContractViolation("dataset slice out of range");
  Dataset out(input_shape_, num_classes_, split, target_dim_);
  for (std::size_t i = begin; i < end; ++i) out.add(input(i), label(i), target(i));
  return out;
}

void Dataset::validate() const {
  if (inputs_.size() != labels_.size() * input_shape_.size() ||
      targets_.size() != labels_.size() * target_dim_) {
    throw ConfigError("dataset buffers are inconsistent");
  }
  for (auto l : labels_) {
    if (num_classes_ > 0 && (l < 0 || static_cast<std::size_t>(l) >= num_classes_)) {
      throw ConfigError("dataset label out of range");
    }
  }
  if (split_ == Split::kCalibration && empty()) throw ConfigError("calibration split is empty");
}

std::uint64_t Dataset::checksum() const {
  Checksum c;
  for (std::size_t v : {input_shape_.channels, input_shape_.height, input_shape_.width, num_classes_,
                        target_dim_}) {
    c.update(static_cast<std::uint64_t>(v));
  }
  c.update(std::span<const double>(inputs_));
  for (auto l : labels_) c.update(static_cast<std::uint64_t>(static_cast<std::uint32_t>(l)));
  c.update(std::span<const double>(targets_));
  return c.value();
}

// ---------------------------------------------------------------------------
// Evaluation engine

namespace {

using detail::Dual;
using detail::finite;
using detail::value;

constexpr std::size_t kBlockSize = 32;

template <class T>
T activate(Activation act, const T& z) {
  switch (act) {
    case Activation::kIdentity: return z;
    case Activation::kRelu: return value(z) > 0.0 ? z : T(0.0);
    case Activation::kTanh: {
      using std::tanh;
      using detail::tanh;
      return tanh(z);
    }
  }
  return z;
}

// d act / d z, expressed through the pre-activation z and the output a.
template <class T>
T activation_slope(Activation act, const T& z, const T& a) {
  switch (act) {
    case Activation::kIdentity: return T(1.0);
    case Activation::kRelu: return value(z) > 0.0 ? T(1.0) : T(0.0);
    case Activation::kTanh: return T(1.0) - a * a;
  }
  return T(1.0);
}

template <class T>
void layer_forward(const LayerSpec& l, const T* w, const std::vector<T>& in, std::vector<T>& out) {
  out.assign(l.output.size(), T(0.0));
  const T* bias = w + l.weight_count();
  if (l.kind == LayerKind::kDense) {
    const std::size_t n_in = l.input.size();
    for (std::size_t o = 0; o < out.size(); ++o) {
      T acc = bias[o];
      const T* row = w + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * in[i];
      out[o] = acc;
    }
    return;
  }
  const std::size_t c_in = l.input.channels, h = l.input.height, wd = l.input.width;
  const std::size_t k = l.kernel, oh = l.output.height, ow = l.output.width;
  for (std::size_t o = 0; o < l.output.channels; ++o) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        T acc = bias[o];
        for (std::size_t c = 0; c < c_in; ++c) {
          const T* ker = w + ((o * c_in + c) * k) * k;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const T* src = &in[(c * h + y + ky) * wd + x];
            for (std::size_t kx = 0; kx < k; ++kx) acc += ker[ky * k + kx] * src[kx];
          }
        }
        out[(o * oh + y) * ow + x] = acc;
      }
    }
  }
}

// Accumulates parameter gradients for one layer given dL/dz, and (when
// `din` is non-null) writes dL/d(input).
template <class T>
void layer_backward(const LayerSpec& l, const T* w, const std::vector<T>& in,
                    const std::vector<T>& dz, T* grad, std::vector<T>* din) {
  T* gbias = grad + l.weight_count();
  if (din) din->assign(l.input.size(), T(0.0));
  if (l.kind == LayerKind::kDense) {
    const std::size_t n_in = l.input.size();
    for (std::size_t o = 0; o < dz.size(); ++o) {
      const T g = dz[o];
      gbias[o] += g;
      T* grow = grad + o * n_in;
      const T* row = w + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) grow[i] += g * in[i];
      if (din) {
        for (std::size_t i = 0; i < n_in; ++i) (*din)[i] += row[i] * g;
      }
    }
    return;
  }
  const std::size_t c_in = l.input.channels, h = l.input.height, wd = l.input.width;
  const std::size_t k = l.kernel, oh = l.output.height, ow = l.output.width;
  for (std::size_t o = 0; o < l.output.channels; ++o) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const T g = dz[(o * oh + y) * ow + x];
        gbias[o] += g;
        for (std::size_t c = 0; c < c_in; ++c) {
          const std::size_t kbase = ((o * c_in + c) * k) * k;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::size_t ibase = (c * h + y + ky) * wd + x;
            for (std::size_t kx = 0; kx < k; ++kx) {
              grad[kbase + ky * k + kx] += g * in[ibase + kx];
              if (din) (*din)[ibase + kx] += w[kbase + ky * k + kx] * g;
            }
          }
        }
      }
    }
  }
}

template <class T>
struct Workspace {
  std::vector<std::vector<T>> act;  // act[0] is the input, act[l + 1] the output of layer l
  std::vector<std::vector<T>> pre;
  std::vector<T> upstream;
  std::vector<T> downstream;
};

template <class T>
void forward_pass(const ModelSpec& spec, std::span<const T> w, std::span<const double> x,
                  Workspace<T>& ws) {
  const std::size_t n = spec.layers.size();
  ws.act.resize(n + 1);
  ws.pre.resize(n);
  ws.act[0].assign(x.begin(), x.end());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < n; ++l) {
    const LayerSpec& layer = spec.layers[l];
    layer_forward(layer, w.data() + offset, ws.act[l], ws.pre[l]);
    auto& out = ws.act[l + 1];
    out.resize(ws.pre[l].size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!finite(ws.pre[l][i])) throw NumericalError("non-finite activation", l);
      out[i] = activate(layer.activation, ws.pre[l][i]);
    }
    offset += layer.param_count();
  }
}

// Per-sample loss; writes dL/d(output) into `dout`.
template <class T>
T output_loss(LossKind kind, const std::vector<T>& out, std::int32_t label,
              std::span<const double> target, std::vector<T>& dout) {
  using std::exp;
  using std::log;
  using detail::exp;
  using detail::log;
  dout.resize(out.size());
  if (kind == LossKind::kCrossEntropy) {
    double shift = value(out[0]);
    for (const T& z : out) shift = std::max(shift, value(z));
    T sum(0.0);
    for (std::size_t j = 0; j < out.size(); ++j) {
      dout[j] = exp(out[j] - T(shift));
      sum += dout[j];
    }
    const T lse = log(sum) + T(shift);
    for (std::size_t j = 0; j < out.size(); ++j) {
      dout[j] = dout[j] / sum;
      if (static_cast<std::int32_t>(j) == label) dout[j] -= T(1.0);
    }
    return lse - out[static_cast<std::size_t>(label)];
  }
  const double inv = 1.0 / static_cast<double>(out.size());
  T total(0.0);
  for (std::size_t j = 0; j < out.size(); ++j) {
    double t = target.empty() ? (static_cast<std::int32_t>(j) == label ? 1.0 : 0.0) : target[j];
    T diff = out[j] - T(t);
    total += diff * diff;
    dout[j] = T(2.0 * inv) * diff;
  }
  return total * T(inv);
}

// Loss of one sample; accumulates its gradient into `grad` when non-empty.
template <class T>
T sample_pass(const ModelSpec& spec, std::span<const T> w, const Dataset& batch, std::size_t i,
              Workspace<T>& ws, std::span<T> grad) {
  forward_pass(spec, w, batch.input(i), ws);
  const std::size_t n = spec.layers.size();
  T l = output_loss(spec.loss, ws.act[n], batch.label(i), batch.target(i), ws.upstream);
  if (!finite(l)) throw NumericalError("non-finite loss", n - 1);
  if (grad.empty()) return l;

  std::vector<std::size_t> offsets(n);
  for (std::size_t k = 0, off = 0; k < n; ++k) {
    offsets[k] = off;
    off += spec.layers[k].param_count();
  }
  for (std::size_t k = n; k-- > 0;) {
    const LayerSpec& layer = spec.layers[k];
    auto& dz = ws.upstream;
    for (std::size_t j = 0; j < dz.size(); ++j) {
      dz[j] *= activation_slope(layer.activation, ws.pre[k][j], ws.act[k + 1][j]);
    }
    layer_backward(layer, w.data() + offsets[k], ws.act[k], dz, grad.data() + offsets[k],
                   k > 0 ? &ws.downstream : nullptr);
    if (k > 0) std::swap(ws.upstream, ws.downstream);
  }
  return l;
}

// Runs fn(block) for each block, optionally on several threads. Results are
// written per block so the caller reduces them in a fixed order.
void for_each_block(std::size_t blocks, std::size_t threads,
                    const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || blocks <= 1) {
    for (std::size_t b = 0; b < blocks; ++b) fn(b);
    return;
  }
  const std::size_t workers = std::min(threads, blocks);
  std::vector<std::exception_ptr> errors(blocks);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t b = t; b < blocks; b += workers) {
        try {
          fn(b);
        } catch (...) {
          errors[b] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

template <class T>
T batch_pass(const ModelSpec& spec, std::span<const T> w, const Dataset& batch, std::size_t threads,
             std::vector<T>* grad) {
  const std::size_t m = batch.size();
  const std::size_t blocks = (m + kBlockSize - 1) / kBlockSize;
  std::vector<T> block_loss(blocks, T(0.0));
  std::vector<std::vector<T>> block_grad(grad ? blocks : 0);
  for_each_block(blocks, threads, [&](std::size_t b) {
    Workspace<T> ws;
    std::span<T> g;
    if (grad) {
      block_grad[b].assign(w.size(), T(0.0));
      g = block_grad[b];
    }
    T acc(0.0);
    const std::size_t end = std::min(m, (b + 1) * kBlockSize);
    for (std::size_t i = b * kBlockSize; i < end; ++i) acc += sample_pass(spec, w, batch, i, ws, g);
    block_loss[b] = acc;
  });
  const T inv(1.0 / static_cast<double>(m));
  T total(0.0);
  for (const T& v : block_loss) total += v;
  if (grad) {
    grad->assign(w.size(), T(0.0));
    for (const auto& bg : block_grad) {
      for (std::size_t j = 0; j < bg.size(); ++j) (*grad)[j] += bg[j];
    }
    for (auto& v : *grad) v = v * inv;
  }
  return total * inv;
}

void check_inputs(const ModelSpec& spec, const ParameterVector& params, const Dataset& batch) {
  spec.validate();
  if (params.size() != spec.num_params()) {
    throw ConfigError("parameter count " + std::to_string(params.size()) +
                      " does not match the model (" + std::to_string(spec.num_params()) + ")");
  }
  if (!(params.segments() == spec.segment_map())) {
    throw ConfigError("parameter segment map does not match the model layers");
  }
  if (batch.empty()) throw ContractViolation("batch is empty");
  if (batch.input_shape().size() != spec.input_shape().size()) {
    throw ConfigError("dataset input size " + std::to_string(batch.input_shape().size()) +
                      " does not match model input " + std::to_string(spec.input_shape().size()));
  }
  const std::size_t out = spec.output_size();
  if (spec.loss == LossKind::kCrossEntropy) {
    if (batch.num_classes() == 0 || batch.num_classes() > out) {
      throw ConfigError("cross-entropy needs labels in [0, " + std::to_string(out) + ")");
    }
  } else if (batch.target_dim() != 0 ? batch.target_dim() != out : batch.num_classes() != out) {
    throw ConfigError("MSE targets do not match the model output width");
  }
}

}  // namespace

LossAndGradient loss_and_gradient(const ModelSpec& spec, const ParameterVector& params,
                                  const Dataset& batch, std::size_t threads) {
  check_inputs(spec, params, batch);
  std::vector<double> g;
  double l = batch_pass<double>(spec, params.span(), batch, threads, &g);
  Eigen::VectorXd gv = Eigen::Map<Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
  return {l, ParameterVector(params.segments(), std::move(gv))};
}

double loss(const ModelSpec& spec, const ParameterVector& params, const Dataset& batch,
            std::size_t threads) {
  check_inputs(spec, params, batch);
  return batch_pass<double>(spec, params.span(), batch, threads, nullptr);
}

ParameterVector gradient(const ModelSpec& spec, const ParameterVector& params, const Dataset& batch,
                         std::size_t threads) {
  return loss_and_gradient(spec, params, batch, threads).gradient;
}

ParameterVector hvp(const ModelSpec& spec, const ParameterVector& params, const Dataset& batch,
                    const ParameterVector& v, std::size_t threads) {
  check_inputs(spec, params, batch);
  if (!v.aligned_with(params)) throw ConfigError("hvp direction is not aligned with the parameters");
  std::vector<Dual> w(params.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = Dual(params[i], v[i]);
  std::vector<Dual> g;
  batch_pass<Dual>(spec, w, batch, threads, &g);
  ParameterVector out(params.segments());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i].d;
  return out;
}

double perturbed_loss(const ModelSpec& spec, const ParameterVector& params,
                      const ParameterVector& delta, const Dataset& batch, std::size_t threads) {
  if (!delta.aligned_with(params)) throw ConfigError("perturbation is not aligned with the parameters");
  return loss(spec, params + delta, batch, threads);
}

std::vector<double> predict(const ModelSpec& spec, const ParameterVector& params,
                            std::span<const double> input) {
  spec.validate();
  if (params.size() != spec.num_params()) throw ConfigError("parameter count mismatch");
  if (input.size() != spec.input_shape().size()) throw ConfigError("input size mismatch");
  Workspace<double> ws;
  forward_pass<double>(spec, params.span(), input, ws);
  return ws.act.back();
}

double accuracy(const ModelSpec& spec, const ParameterVector& params, const Dataset& batch) {
  check_inputs(spec, params, batch);
  Workspace<double> ws;
  const bool regression = batch.target_dim() != 0;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    forward_pass<double>(spec, params.span(), batch.input(i), ws);
    const auto& out = ws.act.back();
    if (regression) {
      auto t = batch.target(i);
      double se = 0.0;
      for (std::size_t j = 0; j < out.size(); ++j) se += (out[j] - t[j]) * (out[j] - t[j]);
      total += se / static_cast<double>(out.size());
    } else {
      auto best = std::max_element(out.begin(), out.end()) - out.begin();
      total += best == batch.label(i) ? 1.0 : 0.0;
    }
  }
  return total / static_cast<double>(batch.size());
}

ParameterVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParameterVector p(spec.segment_map());
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& layer = spec.layers[l];
    const double fan_in = layer.kind == LayerKind::kDense
                              ? static_cast<double>(layer.input.size())
                              : static_cast<double>(layer.input.channels * layer.kernel * layer.kernel);
    std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    auto seg = p.segment(l);
    for (std::size_t j = 0; j < layer.weight_count(); ++j) seg[j] = dist(rng);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Objectives

NetworkObjective::NetworkObjective(ModelSpec spec, ParameterVector params, Dataset batch,
                                   std::size_t threads)
    : spec_(std::move(spec)), params_(std::move(params)), batch_(std::move(batch)), threads_(threads) {
  check_inputs(spec_, params_, batch_);
}

double NetworkObjective::loss_at(const ParameterVector& w) const {
  return cetq::loss(spec_, w, batch_, threads_);
}

ParameterVector NetworkObjective::gradient_at(const ParameterVector& w) const {
  return cetq::gradient(spec_, w, batch_, threads_);
}

ParameterVector NetworkObjective::hvp_at(const ParameterVector& w, const ParameterVector& v) const {
  return cetq::hvp(spec_, w, batch_, v, threads_);
}

std::uint64_t NetworkObjective::model_checksum() const {
  return Checksum().update(checksum(spec_)).update(checksum(params_)).value();
}

std::uint64_t NetworkObjective::data_checksum() const { return batch_.checksum(); }

QuadraticObjective::QuadraticObjective(Eigen::MatrixXd a, ParameterVector point)
    : QuadraticObjective(a, Eigen::VectorXd::Zero(a.rows()), std::move(point)) {}

QuadraticObjective::QuadraticObjective(Eigen::MatrixXd a, Eigen::VectorXd b, ParameterVector point)
    : a_(std::move(a)), b_(std::move(b)), point_(std::move(point)) {
  const auto n = static_cast<Eigen::Index>(point_.size());
  if (a_.rows() != n || a_.cols() != n || b_.size() != n) {
    throw ConfigError("quadratic objective dimensions do not match the point");
  }
  const double scale = std::max(1.0, a_.cwiseAbs().maxCoeff());
  if ((a_ - a_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw ContractViolation("quadratic objective matrix is not symmetric");
  }
}

double QuadraticObjective::loss_at(const ParameterVector& w) const {
  if (!w.aligned_with(point_)) throw ConfigError("point is not aligned with the objective");
  return 0.5 * w.values().dot(a_ * w.values()) + b_.dot(w.values());
}

ParameterVector QuadraticObjective::gradient_at(const ParameterVector& w) const {
  if (!w.aligned_with(point_)) throw ConfigError("point is not aligned with the objective");
  return ParameterVector(point_.segments(), a_ * w.values() + b_);
}

ParameterVector QuadraticObjective::hvp_at(const ParameterVector& w, const ParameterVector& v) const {
  if (!w.aligned_with(point_) || !v.aligned_with(point_)) {
    throw ConfigError("vector is not aligned with the objective");
  }
  return ParameterVector(point_.segments(), a_ * v.values());
}

std::uint64_t QuadraticObjective::model_checksum() const {
  Checksum c;
  c.update(std::span<const double>(a_.data(), static_cast<std::size_t>(a_.size())));
  c.update(std::span<const double>(b_.data(), static_cast<std::size_t>(b_.size())));
  c.update(checksum(point_));
  return c.value();
}

std::uint64_t QuadraticObjective::data_checksum() const { return Checksum().update("quadratic").value(); }

}  // namespace cetq
