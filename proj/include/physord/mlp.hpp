#pragma once

// Dense MLPs with a linear final layer, evaluated in double or recorded on the
// tape as a single block, plus Adam.

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "physord/autodiff.hpp"
#include "physord/errors.hpp"
#include "physord/linalg.hpp"

namespace physord::nn {

enum class Activation { tanh, relu };

inline std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + s + "'");
}

struct LayerDims {
  int in = 0;
  int out = 0;
  friend bool operator==(const LayerDims&, const LayerDims&) = default;
};

struct MlpSpec {
  std::vector<LayerDims> layers;
  Activation activation = Activation::tanh;

  void validate() const {
    if (layers.empty()) throw DimMismatch("an MLP needs at least one layer");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].in <= 0 || layers[i].out <= 0) throw DimMismatch("layer dimensions must be positive");
      if (i > 0 && layers[i].in != layers[i - 1].out) {
        throw DimMismatch("layer " + std::to_string(i) + " input " + std::to_string(layers[i].in) +
                          " does not chain with previous output " + std::to_string(layers[i - 1].out));
      }
    }
  }

  int input_dim() const { return layers.front().in; }
  int output_dim() const { return layers.back().out; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.in) * l.out + l.out;
    return n;
  }

  std::string canonical() const {
    std::string s = to_string(activation);
    for (const auto& l : layers) s += "(" + std::to_string(l.in) + "," + std::to_string(l.out) + ")";
    return s;
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

inline double activate(Activation a, double z) { return a == Activation::tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0); }

// Derivative expressed through the activation output y.
inline double activate_grad(Activation a, double y) {
  return a == Activation::tanh ? 1.0 - y * y : (y > 0.0 ? 1.0 : 0.0);
}

// Fixed per-channel affine map (x - shift) * scale applied before the first
// layer. Not trainable.
struct InputNorm {
  std::vector<double> shift;
  std::vector<double> scale;
  bool empty() const { return shift.empty(); }
};

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(MlpSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    params_.assign(spec_.param_count(), 0.0);
    std::size_t off = 0;
    for (const auto& l : spec_.layers) {
      w_off_.push_back(off);
      off += static_cast<std::size_t>(l.in) * l.out;
      b_off_.push_back(off);
      off += static_cast<std::size_t>(l.out);
    }
  }

  const MlpSpec& spec() const { return spec_; }
  std::size_t param_count() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t layer_count() const { return spec_.layers.size(); }

  // Row-major out x in.
  std::span<double> weights(std::size_t l) {
    return {params_.data() + w_off_[l], static_cast<std::size_t>(spec_.layers[l].in) * spec_.layers[l].out};
  }
  std::span<const double> weights(std::size_t l) const {
    return {params_.data() + w_off_[l], static_cast<std::size_t>(spec_.layers[l].in) * spec_.layers[l].out};
  }
  std::span<double> bias(std::size_t l) {
    return {params_.data() + b_off_[l], static_cast<std::size_t>(spec_.layers[l].out)};
  }
  std::span<const double> bias(std::size_t l) const {
    return {params_.data() + b_off_[l], static_cast<std::size_t>(spec_.layers[l].out)};
  }
  std::size_t weight_offset(std::size_t l) const { return w_off_[l]; }
  std::size_t bias_offset(std::size_t l) const { return b_off_[l]; }

  const InputNorm& input_norm() const { return norm_; }
  void set_input_norm(InputNorm n) {
    if (!n.empty() && (n.shift.size() != static_cast<std::size_t>(spec_.input_dim()) ||
                       n.scale.size() != n.shift.size())) {
      throw DimMismatch("input normalization size does not match the first layer");
    }
    norm_ = std::move(n);
  }

  // Uniform(+-sqrt(6 / (in + out))) weights, zero biases.
  void init(std::mt19937_64& rng) {
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const auto& d = spec_.layers[l];
      const double lim = std::sqrt(6.0 / (d.in + d.out));
      std::uniform_real_distribution<double> u(-lim, lim);
      for (double& w : weights(l)) w = u(rng);
      for (double& b : bias(l)) b = 0.0;
    }
  }

  void scale_output_layer(double k) {
    for (double& w : weights(layer_count() - 1)) w *= k;
  }

  std::int64_t forward_flops() const {
    std::int64_t f = 0;
    for (const auto& l : spec_.layers) f += 2LL * l.in * l.out + l.out;
    return f;
  }

  std::vector<double> normalized_input(std::span<const double> in) const {
    std::vector<double> x(in.begin(), in.end());
    if (!norm_.empty()) {
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - norm_.shift[i]) * norm_.scale[i];
    }
    return x;
  }

  std::vector<double> forward(std::span<const double> in) const {
    check_input(in.size());
    std::vector<double> x = normalized_input(in);
    std::vector<double> y;
    for (std::size_t l = 0; l < layer_count(); ++l) {
      affine(l, x, y);
      if (l + 1 < layer_count()) {
        for (double& v : y) v = activate(spec_.activation, v);
      }
      x.swap(y);
    }
    return x;
  }

  // Records one block on the active tape; outputs are fresh tape nodes.
  std::vector<ad::Var> forward(std::span<const ad::Var> in) const {
    check_input(in.size());
    ad::Tape* tape = ad::active_tape();
    std::vector<double> xin(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) xin[i] = in[i].val;
    if (tape == nullptr) {
      std::vector<double> y = forward(xin);
      return {y.begin(), y.end()};
    }

    // acts[0] = normalized input, acts[l + 1] = output of layer l.
    auto acts = std::make_shared<std::vector<std::vector<double>>>();
    acts->push_back(normalized_input(xin));
    for (std::size_t l = 0; l < layer_count(); ++l) {
      std::vector<double> y;
      affine(l, acts->back(), y);
      if (l + 1 < layer_count()) {
        for (double& v : y) v = activate(spec_.activation, v);
      }
      acts->push_back(std::move(y));
    }

    std::vector<int> in_ids(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) in_ids[i] = in[i].id;
    const std::vector<double>& yout = acts->back();
    std::vector<ad::Var> out(yout.size());
    int first = -1;
    for (std::size_t k = 0; k < yout.size(); ++k) {
      const int id = tape->push_leaf();
      if (k == 0) first = id;
      out[k] = ad::Var(yout[k], id);
    }
    const int last = first + static_cast<int>(yout.size()) - 1;

    tape->add_block(
        last,
        [this, acts, in_ids = std::move(in_ids), first](ad::Tape& t) {
          std::vector<double> delta(acts->back().size());
          bool any = false;
          for (std::size_t k = 0; k < delta.size(); ++k) {
            delta[k] = t.adjoint_ref(first + static_cast<int>(k));
            any = any || delta[k] != 0.0;
          }
          if (!any) return;
          std::vector<double>& grad = t.param_grad(this, param_count());
          std::vector<double> in_adj = backprop(*acts, delta, grad);
          for (std::size_t i = 0; i < in_ids.size(); ++i) {
            if (in_ids[i] < 0) continue;
            const double s = norm_.empty() ? 1.0 : norm_.scale[i];
            t.adjoint_ref(in_ids[i]) += in_adj[i] * s;
          }
        },
        forward_flops());
    return out;
  }

  // Reverse pass through recorded activations. Accumulates parameter
  // gradients into `grad` and returns the adjoint of the normalized input.
  std::vector<double> backprop(const std::vector<std::vector<double>>& acts, std::vector<double> delta,
                               std::vector<double>& grad) const {
    for (std::size_t l = layer_count(); l-- > 0;) {
      const auto& d = spec_.layers[l];
      const std::vector<double>& x = acts[l];
      const double* w = params_.data() + w_off_[l];
      double* gw = grad.data() + w_off_[l];
      double* gb = grad.data() + b_off_[l];
      std::vector<double> prev(static_cast<std::size_t>(d.in), 0.0);
      for (int o = 0; o < d.out; ++o) {
        const double g = delta[static_cast<std::size_t>(o)];
        if (g == 0.0) continue;
        gb[o] += g;
        const std::size_t row = static_cast<std::size_t>(o) * d.in;
        for (int i = 0; i < d.in; ++i) {
          gw[row + i] += g * x[static_cast<std::size_t>(i)];
          prev[static_cast<std::size_t>(i)] += g * w[row + i];
        }
      }
      if (l > 0) {
        for (std::size_t i = 0; i < prev.size(); ++i) prev[i] *= activate_grad(spec_.activation, x[i]);
      }
      delta.swap(prev);
    }
    return delta;
  }

 private:
  void check_input(std::size_t n) const {
    if (n != static_cast<std::size_t>(spec_.input_dim())) {
      throw DimMismatch("MLP expects " + std::to_string(spec_.input_dim()) + " inputs, got " + std::to_string(n));
    }
  }

  void affine(std::size_t l, const std::vector<double>& x, std::vector<double>& y) const {
    const auto& d = spec_.layers[l];
    const double* w = params_.data() + w_off_[l];
    const double* b = params_.data() + b_off_[l];
    y.assign(static_cast<std::size_t>(d.out), 0.0);
    for (int o = 0; o < d.out; ++o) {
      double acc = b[o];
      const double* row = w + static_cast<std::size_t>(o) * d.in;
      for (int i = 0; i < d.in; ++i) acc += row[i] * x[static_cast<std::size_t>(i)];
      y[static_cast<std::size_t>(o)] = acc;
    }
  }

  MlpSpec spec_;
  std::vector<double> params_;
  std::vector<std::size_t> w_off_;
  std::vector<std::size_t> b_off_;
  InputNorm norm_;
};

// Parameters as tape leaves registered under `key`, or plain doubles.
template <class T>
std::vector<T> params_as(std::span<const double> p, const void* key) {
  if constexpr (std::is_same_v<T, double>) {
    return {p.begin(), p.end()};
  } else {
    std::vector<T> out(p.size());
    ad::Tape* tape = ad::active_tape();
    if (tape == nullptr || p.empty()) {
      for (std::size_t i = 0; i < p.size(); ++i) out[i] = T(p[i]);
      return out;
    }
    int first = -1;
    for (std::size_t i = 0; i < p.size(); ++i) {
      out[i] = tape->variable(p[i]);
      if (i == 0) first = out[i].id;
    }
    tape->register_leaves(key, first, p.size());
    return out;
  }
}

template <class T>
T activate_t(Activation a, const T& z) {
  using std::tanh;
  if (a == Activation::tanh) return tanh(z);
  return value(z) > 0.0 ? z : T(0.0);
}

// Gradient of the scalar output of `net` with respect to its input, written
// in T so that it can itself be differentiated (w.r.t. inputs and weights).
template <class T>
std::vector<T> input_gradient(const Mlp& net, std::span<const T> in) {
  using std::tanh;
  const MlpSpec& spec = net.spec();
  if (spec.output_dim() != 1) throw DimMismatch("input_gradient needs a scalar-output network");
  if (in.size() != static_cast<std::size_t>(spec.input_dim())) throw DimMismatch("input_gradient input size");
  const std::vector<T> w = params_as<T>(net.params(), &net);
  const InputNorm& norm = net.input_norm();

  std::vector<std::vector<T>> acts;
  std::vector<T> x(in.begin(), in.end());
  if (!norm.empty()) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - norm.shift[i]) * norm.scale[i];
  }
  acts.push_back(x);
  const std::size_t L = net.layer_count();
  for (std::size_t l = 0; l + 1 < L; ++l) {
    const auto& d = spec.layers[l];
    std::vector<T> y(static_cast<std::size_t>(d.out));
    for (int o = 0; o < d.out; ++o) {
      T acc = w[net.bias_offset(l) + static_cast<std::size_t>(o)];
      for (int i = 0; i < d.in; ++i) {
        acc = acc + w[net.weight_offset(l) + static_cast<std::size_t>(o) * d.in + i] * acts.back()[static_cast<std::size_t>(i)];
      }
      y[static_cast<std::size_t>(o)] = activate_t(spec.activation, acc);
    }
    acts.push_back(std::move(y));
  }
  // Reverse pass: d(out)/d(acts) starting from the linear final layer.
  const auto& last = spec.layers[L - 1];
  std::vector<T> delta(static_cast<std::size_t>(last.in));
  for (int i = 0; i < last.in; ++i) delta[static_cast<std::size_t>(i)] = w[net.weight_offset(L - 1) + i];
  for (std::size_t l = L - 1; l-- > 0;) {
    const auto& d = spec.layers[l];
    const std::vector<T>& y = acts[l + 1];
    std::vector<T> pre(static_cast<std::size_t>(d.out));
    for (int o = 0; o < d.out; ++o) {
      const T& yo = y[static_cast<std::size_t>(o)];
      const T dact = spec.activation == Activation::tanh ? T(1.0) - yo * yo : T(value(yo) > 0.0 ? 1.0 : 0.0);
      pre[static_cast<std::size_t>(o)] = delta[static_cast<std::size_t>(o)] * dact;
    }
    std::vector<T> prev(static_cast<std::size_t>(d.in), T(0.0));
    for (int i = 0; i < d.in; ++i) {
      T acc(0.0);
      for (int o = 0; o < d.out; ++o) {
        acc = acc + w[net.weight_offset(l) + static_cast<std::size_t>(o) * d.in + i] * pre[static_cast<std::size_t>(o)];
      }
      prev[static_cast<std::size_t>(i)] = acc;
    }
    delta.swap(prev);
  }
  if (!norm.empty()) {
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = delta[i] * norm.scale[i];
  }
  return delta;
}

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Bias-corrected Adam; increments state.t before the update.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      const AdamHyper& hp) {
  if (params.size() != grads.size() || state.m.size() != params.size()) {
    throw DimMismatch("adam_step: parameter, gradient and moment sizes differ");
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * grads[i];
    state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
  }
}

}  // namespace physord::nn
