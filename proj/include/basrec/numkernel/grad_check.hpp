#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "basrec/numkernel/param_store.hpp"
#include "basrec/numkernel/tape.hpp"

namespace basrec {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  /// Probes discarded because x +/- eps crossed a relu kink.
  std::size_t kink_skips = 0;

  bool empty() const { return probes == 0; }
};

/// Builds the scalar loss on the given tape from parameters bound out of the store.
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

/// Central-difference check of reverse-mode gradients in double precision.
/// The relative error of one coordinate is
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
/// Every parameter tensor gets at least min(numel, 4) probes; the rest of the
/// `probes` budget is spread evenly. A probe whose +/- eps evaluations take a
/// different relu branch than the base point is not differentiable over the
/// stencil; it is counted in kink_skips and replaced by another coordinate of
/// the same tensor when one is left. Throws NumericError on a non-finite loss.
GradCheckReport grad_check(const LossBuilder& loss_fn, ParamStore<double>& params,
                           double eps = 1e-6, std::size_t probes = 200, std::uint64_t seed = 0);

}  // namespace basrec
