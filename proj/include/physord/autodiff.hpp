#pragma once

// Tape-based reverse-mode differentiation.
//
// Scalar arithmetic on `Var` records one node per operation on the thread's
// active tape. Dense sub-computations (MLP layers) record a single block whose
// backward callback propagates adjoints for all of its outputs at once and
// accumulates parameter gradients into per-key buffers on the tape.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "physord/errors.hpp"

namespace physord::ad {

class Tape;

namespace detail {
inline thread_local Tape* active = nullptr;
}

struct Var {
  double val = 0.0;
  int id = -1;

  Var() = default;
  Var(double v) : val(v) {}  // NOLINT: constants convert implicitly
  Var(double v, int node) : val(v), id(node) {}

  bool on_tape() const { return id >= 0; }
};

inline double value(const Var& v) { return v.val; }

class Tape {
 public:
  struct Node {
    int a;
    int b;
    double da;
    double db;
  };

  Tape() { nodes_.reserve(1 << 14); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int push(int a, double da, int b, double db) {
    nodes_.push_back({a, b, da, db});
    ++scalar_ops_;
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Parentless node; leaves and block outputs.
  int push_leaf() {
    nodes_.push_back({-1, -1, 0.0, 0.0});
    return static_cast<int>(nodes_.size()) - 1;
  }

  Var variable(double v) { return Var(v, push_leaf()); }

  // `fire` runs once the adjoints of every node with index >= fire_at are final.
  void add_block(int fire_at, std::function<void(Tape&)> fire, std::int64_t flops) {
    blocks_.push_back({fire_at, std::move(fire)});
    block_flops_ += flops;
  }

  // Leaves [first, first + count) are parameters stored under `key`; after
  // backward their adjoints are added to param_grad(key).
  void register_leaves(const void* key, int first, std::size_t count) {
    leaf_groups_.push_back({key, first, count});
  }

  std::vector<double>& param_grad(const void* key, std::size_t size) {
    auto& g = grads_[key];
    if (g.size() < size) g.resize(size, 0.0);
    return g;
  }

  // Returns nullptr if nothing was accumulated under key.
  const std::vector<double>* find_param_grad(const void* key) const {
    auto it = grads_.find(key);
    return it == grads_.end() ? nullptr : &it->second;
  }

  double& adjoint_ref(int id) { return adj_[static_cast<std::size_t>(id)]; }

  double adjoint(const Var& v) const {
    if (!v.on_tape() || adj_.empty()) return 0.0;
    return adj_[static_cast<std::size_t>(v.id)];
  }

  void backward(const Var& out, double seed = 1.0) {
    std::pair<Var, double> s{out, seed};
    backward(std::span<const std::pair<Var, double>>(&s, 1));
  }

  void backward(std::span<const std::pair<Var, double>> seeds) {
    if (consumed_) throw TapeConsumed("backward already ran on this tape");
    consumed_ = true;
    adj_.assign(nodes_.size(), 0.0);
    for (const auto& [v, g] : seeds) {
      if (v.on_tape()) adj_[static_cast<std::size_t>(v.id)] += g;
    }
    auto block = blocks_.rbegin();
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      while (block != blocks_.rend() && block->fire_at == i) {
        block->fire(*this);
        ++block;
      }
      const double a = adj_[static_cast<std::size_t>(i)];
      if (a == 0.0) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.a >= 0) adj_[static_cast<std::size_t>(n.a)] += n.da * a;
      if (n.b >= 0) adj_[static_cast<std::size_t>(n.b)] += n.db * a;
    }
    for (const auto& lg : leaf_groups_) {
      auto& g = param_grad(lg.key, lg.count);
      for (std::size_t k = 0; k < lg.count; ++k) g[k] += adj_[static_cast<std::size_t>(lg.first) + k];
    }
  }

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }
  std::int64_t scalar_ops() const { return scalar_ops_; }
  std::int64_t block_flops() const { return block_flops_; }

 private:
  struct Block {
    int fire_at;
    std::function<void(Tape&)> fire;
  };
  struct LeafGroup {
    const void* key;
    int first;
    std::size_t count;
  };

  std::vector<Node> nodes_;
  std::vector<double> adj_;
  std::vector<Block> blocks_;
  std::vector<LeafGroup> leaf_groups_;
  std::unordered_map<const void*, std::vector<double>> grads_;
  std::int64_t scalar_ops_ = 0;
  std::int64_t block_flops_ = 0;
  bool consumed_ = false;
};

inline Tape* active_tape() { return detail::active; }

// Makes `tape` the recording target for the current thread while alive.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(detail::active) { detail::active = &tape; }
  ~TapeScope() { detail::active = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

inline Var unary(double v, const Var& x, double dx) {
  if (!x.on_tape()) return Var(v);
  return Var(v, active->push(x.id, dx, -1, 0.0));
}

inline Var binary(double v, const Var& x, double dx, const Var& y, double dy) {
  if (!x.on_tape() && !y.on_tape()) return Var(v);
  if (!y.on_tape()) return Var(v, active->push(x.id, dx, -1, 0.0));
  if (!x.on_tape()) return Var(v, active->push(y.id, dy, -1, 0.0));
  return Var(v, active->push(x.id, dx, y.id, dy));
}

}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::binary(a.val + b.val, a, 1.0, b, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return detail::binary(a.val - b.val, a, 1.0, b, -1.0); }
inline Var operator*(const Var& a, const Var& b) { return detail::binary(a.val * b.val, a, b.val, b, a.val); }
inline Var operator/(const Var& a, const Var& b) {
  const double inv = 1.0 / b.val;
  return detail::binary(a.val * inv, a, inv, b, -a.val * inv * inv);
}
inline Var operator-(const Var& a) { return detail::unary(-a.val, a, -1.0); }

inline Var operator+(const Var& a, double b) { return detail::unary(a.val + b, a, 1.0); }
inline Var operator+(double a, const Var& b) { return detail::unary(a + b.val, b, 1.0); }
inline Var operator-(const Var& a, double b) { return detail::unary(a.val - b, a, 1.0); }
inline Var operator-(double a, const Var& b) { return detail::unary(a - b.val, b, -1.0); }
inline Var operator*(const Var& a, double b) { return detail::unary(a.val * b, a, b); }
inline Var operator*(double a, const Var& b) { return detail::unary(a * b.val, b, a); }
inline Var operator/(const Var& a, double b) { return detail::unary(a.val / b, a, 1.0 / b); }
inline Var operator/(double a, const Var& b) { return detail::unary(a / b.val, b, -a / (b.val * b.val)); }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }

inline Var sin(const Var& x) { return detail::unary(std::sin(x.val), x, std::cos(x.val)); }
inline Var cos(const Var& x) { return detail::unary(std::cos(x.val), x, -std::sin(x.val)); }
inline Var exp(const Var& x) {
  const double e = std::exp(x.val);
  return detail::unary(e, x, e);
}
inline Var log(const Var& x) { return detail::unary(std::log(x.val), x, 1.0 / x.val); }
inline Var sqrt(const Var& x) {
  const double s = std::sqrt(x.val);
  return detail::unary(s, x, s > 0.0 ? 0.5 / s : 0.0);
}
inline Var tanh(const Var& x) {
  const double t = std::tanh(x.val);
  return detail::unary(t, x, 1.0 - t * t);
}
inline Var acos(const Var& x) { return detail::unary(std::acos(x.val), x, -1.0 / std::sqrt(1.0 - x.val * x.val)); }
inline Var asin(const Var& x) { return detail::unary(std::asin(x.val), x, 1.0 / std::sqrt(1.0 - x.val * x.val)); }
inline Var abs(const Var& x) { return detail::unary(std::abs(x.val), x, x.val >= 0.0 ? 1.0 : -1.0); }
inline Var relu(const Var& x) { return x.val > 0.0 ? x : Var(0.0); }

}  // namespace physord::ad
