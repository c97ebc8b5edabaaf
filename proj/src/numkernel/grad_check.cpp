#include "basrec/numkernel/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "basrec/numkernel/rng.hpp"

namespace basrec {
namespace {

struct Eval {
  double value;
  std::uint64_t kinks;
};

Eval evaluate(const LossBuilder& loss_fn) {
  Tape<double> tape;
  tape.set_track_kinks(true);
  const double v = loss_fn(tape).value()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return {v, tape.kink_signature()};
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& loss_fn, ParamStore<double>& params, double eps,
                           std::size_t probes, std::uint64_t seed) {
  GradCheckReport report;
  if (params.total_elements() == 0) return report;

  params.zero_grad();
  std::uint64_t base_kinks = 0;
  {
    Tape<double> tape;
    tape.set_track_kinks(true);
    Var<double> loss = loss_fn(tape);
    if (!std::isfinite(loss.value()[0])) throw NumericError("grad_check: non-finite loss");
    base_kinks = tape.kink_signature();
    tape.backward(loss);
  }

  // Water-fill the probe budget: small tensors are probed exhaustively and
  // their unused share flows to the larger ones.
  std::vector<Parameter<double>*> order;
  for (auto& p : params.params()) order.push_back(&p);
  std::stable_sort(order.begin(), order.end(),
                   [](auto* a, auto* b) { return a->value.numel() < b->value.numel(); });
  Generator rng(splitmix64(seed));
  std::size_t remaining = probes;
  for (std::size_t i = 0; i < order.size(); ++i) {
    Parameter<double>& p = *order[i];
    const std::size_t n = p.value.numel();
    const std::size_t left = order.size() - i;
    const std::size_t share = std::max<std::size_t>(4, (remaining + left - 1) / left);
    const std::size_t quota = std::min(n, share);
    remaining -= std::min(remaining, quota);
    // Random order over the whole tensor; the first `quota` smooth
    // coordinates are checked.
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (quota < n) rng.shuffle(std::span<std::size_t>(coords));
    std::size_t done = 0;
    for (std::size_t k = 0; k < n && done < quota; ++k) {
      const std::size_t c = coords[k];
      const double saved = p.value[c];
      p.value[c] = saved + eps;
      const Eval up = evaluate(loss_fn);
      p.value[c] = saved - eps;
      const Eval down = evaluate(loss_fn);
      p.value[c] = saved;
      if (up.kinks != base_kinks || down.kinks != base_kinks) {
        ++report.kink_skips;
        continue;
      }
      ++done;
      const double numeric = (up.value - down.value) / (2.0 * eps);
      const double analytic = p.grad[c];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.probes;
      if (report.probes == 1 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_index = c;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace basrec
