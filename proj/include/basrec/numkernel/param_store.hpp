#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>

#include "basrec/errors.hpp"
#include "basrec/numkernel/tape.hpp"
#include "basrec/numkernel/tensor.hpp"

namespace basrec {

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
  Tensor<Real> first_moment;
  Tensor<Real> second_moment;
  /// Row forced back to zero after every optimizer step (embedding padding).
  std::optional<std::size_t> pinned_zero_row;
};

/// Named parameters in declaration order plus optimizer state. References
/// returned by add()/get() stay valid for the store's lifetime.
template <typename Real>
class ParamStore {
 public:
  Parameter<Real>& add(std::string name, Shape shape) {
    if (find(name)) throw ConfigError("ParamStore: duplicate parameter '" + name + "'");
    Parameter<Real> p;
    p.name = std::move(name);
    p.value = Tensor<Real>(shape);
    p.grad = Tensor<Real>(shape);
    p.first_moment = Tensor<Real>(shape);
    p.second_moment = Tensor<Real>(shape);
    params_.push_back(std::move(p));
    return params_.back();
  }

  Parameter<Real>* find(std::string_view name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
  const Parameter<Real>* find(std::string_view name) const {
    for (const auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
  Parameter<Real>& get(std::string_view name) {
    if (auto* p = find(name)) return *p;
    throw ConfigError("ParamStore: unknown parameter '" + std::string(name) + "'");
  }
  const Parameter<Real>& get(std::string_view name) const {
    if (const auto* p = find(name)) return *p;
    throw ConfigError("ParamStore: unknown parameter '" + std::string(name) + "'");
  }

  Var<Real> bind(Tape<Real>& tape, std::string_view name) {
    auto& p = get(name);
    return tape.param(p.value, p.grad);
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(Real{0});
  }

  std::deque<Parameter<Real>>& params() { return params_; }
  const std::deque<Parameter<Real>>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  std::int64_t step() const { return step_; }
  void advance_step() { ++step_; }

  /// Value-only copy in another precision (optimizer state starts fresh).
  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& p : params_) {
      auto& q = out.add(p.name, p.value.shape());
      q.value = p.value.template cast<Other>();
      q.pinned_zero_row = p.pinned_zero_row;
    }
    return out;
  }

 private:
  std::deque<Parameter<Real>> params_;
  std::int64_t step_ = 0;
};

}  // namespace basrec
