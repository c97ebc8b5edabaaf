#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>

#include "basrec/errors.hpp"
#include "basrec/numkernel/tensor.hpp"

namespace basrec {

/// Bit flags carried through every op so that downstream code can assert
/// which augmentation path a representation came from.
enum Provenance : std::uint32_t {
  kClean = 0,
  kSingleAug = 1u << 0,
  kCrossMixed = 1u << 1,
};

template <typename Real>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename Real>
struct Var {
  Tape<Real>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<Real>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
  std::uint32_t provenance() const { return tape->provenance(id); }
};

/// Append-only computation record for reverse-mode differentiation.
/// Nodes live in a deque so references to earlier values stay valid while
/// later ops are pushed.
template <typename Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> constant(Tensor<Real> value, std::uint32_t provenance = kClean) {
    check_finite(value, "constant");
    Node n;
    n.owned = std::move(value);
    n.provenance = provenance;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Leaf bound to externally owned storage; gradients accumulate into `grad`.
  Var<Real> param(const Tensor<Real>& value, Tensor<Real>& grad) {
    if (grad.shape() != value.shape()) grad = Tensor<Real>(value.shape());
    Node n;
    n.external_value = &value;
    n.external_grad = &grad;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var<Real> push(Tensor<Real> value, std::initializer_list<Var<Real>> inputs, BackwardFn fn,
                 std::string_view op) {
    return push(std::move(value), std::span<const Var<Real>>(inputs.begin(), inputs.size()),
                std::move(fn), op);
  }

  Var<Real> push(Tensor<Real> value, std::span<const Var<Real>> inputs, BackwardFn fn,
                 std::string_view op) {
    check_finite(value, op);
    Node n;
    n.owned = std::move(value);
    for (const auto& in : inputs) {
      n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
      n.provenance |= nodes_[in.id].provenance;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor<Real>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external_value ? *n.external_value : n.owned;
  }

  /// Gradient buffer for a node, zero-initialized on first touch.
  Tensor<Real>& grad(std::size_t id) {
    Node& n = nodes_[id];
    Tensor<Real>& g = n.external_grad ? *n.external_grad : n.grad;
    if (!n.external_grad && g.shape() != value(id).shape()) g = Tensor<Real>(value(id).shape());
    return g;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::uint32_t provenance(std::size_t id) const { return nodes_[id].provenance; }
  void add_provenance(Var<Real> v, std::uint32_t flags) { nodes_[v.id].provenance |= flags; }
  std::size_t size() const { return nodes_.size(); }

  /// Hash of the branch taken by every piecewise op (currently relu) on this
  /// tape, recorded only when tracking is on. Two evaluations with equal
  /// signatures lie on the same smooth piece.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  bool tracks_kinks() const { return track_kinks_; }
  std::uint64_t kink_signature() const { return kinks_; }
  void note_branch(bool taken) {
    kinks_ = (kinks_ ^ (taken ? 0x9e3779b97f4a7c15ULL : 0x7f4a7c159e3779b9ULL)) * 0x100000001b3ULL;
  }

  void backward(Var<Real> loss) {
    if (value(loss.id).numel() != 1) {
      throw ShapeError("backward: loss must be a scalar, got " + shape_str(value(loss.id).shape()));
    }
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss.id)[0] += Real{1};
    touched_.assign(nodes_.size(), false);
    touched_[loss.id] = true;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || !touched_[i]) continue;
      n.backward(*this, i);
    }
  }

  /// Called by backward closures when they write into an input's gradient.
  Tensor<Real>& accumulate(std::size_t id) {
    if (id < touched_.size()) touched_[id] = true;
    return grad(id);
  }

 private:
  struct Node {
    Tensor<Real> owned;
    Tensor<Real> grad;
    const Tensor<Real>* external_value = nullptr;
    Tensor<Real>* external_grad = nullptr;
    BackwardFn backward;
    std::uint32_t provenance = kClean;
    bool requires_grad = false;
  };

  static void check_finite(const Tensor<Real>& t, std::string_view op) {
    if (!t.all_finite()) {
      throw NumericError("non-finite value produced by op '" + std::string(op) + "' with shape " +
                         shape_str(t.shape()));
    }
  }

  std::deque<Node> nodes_;
  std::vector<bool> touched_;
  std::uint64_t kinks_ = 0xcbf29ce484222325ULL;
  bool track_kinks_ = false;
};

}  // namespace basrec
