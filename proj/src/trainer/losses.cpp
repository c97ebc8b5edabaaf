#include "basrec/trainer/losses.hpp"

#include <cmath>

#include "basrec/errors.hpp"
#include "basrec/evaluate/similarity.hpp"
#include "basrec/log.hpp"
#include "basrec/numkernel/ops.hpp"

namespace basrec::trainer {
namespace {

template <typename Real>
std::vector<Real> row_major_weights(std::span<const std::uint8_t> mask, double scale) {
  std::vector<Real> w(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) w[i] = mask[i] ? static_cast<Real>(scale) : Real{0};
  return w;
}

std::size_t count_valid(std::span<const std::uint8_t> mask) {
  std::size_t n = 0;
  for (auto m : mask) n += m != 0;
  return n;
}

}  // namespace

template <typename Real>
Var<Real> weighted_bce_loss(Var<Real> H, Var<Real> pos_repr, Var<Real> neg_repr, std::span<const Real> weights) {
  return ops::weighted_bce(ops::rowdot(H, pos_repr), ops::rowdot(H, neg_repr), weights);
}

template <typename Real>
Var<Real> bce_loss(Var<Real> H, Var<Real> pos_repr, Var<Real> neg_repr, std::span<const std::uint8_t> mask) {
  const std::size_t valid = count_valid(mask);
  if (valid == 0) throw DataError("bce_loss: no valid positions in batch");
  const auto w = row_major_weights<Real>(mask, 1.0 / static_cast<double>(valid));
  return weighted_bce_loss(H, pos_repr, neg_repr, std::span<const Real>(w));
}

template <typename Real>
Var<Real> loss_ssa(encoders::Model<Real>& model, Var<Real> table, Var<Real> E,
                   const std::array<augment::AugRecords, 2>& records, const datapipe::SequenceBatch& batch,
                   Var<Real> pos_repr, Var<Real> neg_repr, bool raw_ops, Generator* dropout_rng,
                   SimilaritySample* similarity, const Tensor<Real>* clean_last) {
  const std::size_t B = batch.batch_size;
  const std::size_t N = batch.max_len;
  const std::size_t valid = batch.valid_positions();
  if (valid == 0) throw DataError("loss_ssa: no valid positions in batch");

  // Both operators' copies run through the encoder as one [2B, N, D] batch.
  std::vector<datapipe::ItemId> ids(records[0].ids);
  ids.insert(ids.end(), records[1].ids.begin(), records[1].ids.end());
  std::vector<std::uint8_t> mask(batch.mask);
  mask.insert(mask.end(), batch.mask.begin(), batch.mask.end());
  Var<Real> E_prime = model.lookup(table, ids);

  Var<Real> E_in;
  std::vector<Real> weights(2 * B * N, Real{0});
  const double norm = 1.0 / (2.0 * static_cast<double>(valid));
  if (raw_ops) {
    E_in = E_prime;
    E_in.tape->add_provenance(E_in, kSingleAug);
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = mask[i] ? static_cast<Real>(norm) : Real{0};
  } else {
    std::vector<double> lambdas(records[0].lambdas);
    lambdas.insert(lambdas.end(), records[1].lambdas.begin(), records[1].lambdas.end());
    const Var<Real> parts[] = {E, E};
    E_in = augment::mix_single(ops::concat_rows(std::span<const Var<Real>>(parts)), E_prime,
                               std::span<const double>(lambdas));
    for (std::size_t k = 0; k < 2; ++k) {
      for (std::size_t b = 0; b < B; ++b) {
        const double w = records[k].omegas[b] * norm;
        for (std::size_t t = 0; t < N; ++t) {
          const std::size_t i = (k * B + b) * N + t;
          if (mask[i]) weights[i] = static_cast<Real>(w);
        }
      }
    }
  }

  Var<Real> H_in = model.encode(E_in, mask, dropout_rng);
  const Var<Real> pos_parts[] = {pos_repr, pos_repr};
  const Var<Real> neg_parts[] = {neg_repr, neg_repr};
  Var<Real> loss = weighted_bce_loss(H_in, ops::concat_rows(std::span<const Var<Real>>(pos_parts)),
                                     ops::concat_rows(std::span<const Var<Real>>(neg_parts)),
                                     std::span<const Real>(weights));

  if (similarity && clean_last) {
    const auto last = encoders::last_state(H_in, mask).value();
    const std::size_t D = last.dim(1);
    for (std::size_t k = 0; k < 2; ++k) {
      for (std::size_t b = 0; b < B; ++b) {
        if (batch.last_valid(b) == ops::kNoPosition) continue;
        similarity->add(evaluate::cosine(last.data() + (k * B + b) * D, clean_last->data() + b * D, D));
      }
    }
  }
  return loss;
}

template <typename Real>
Var<Real> loss_csa(Var<Real> H, Var<Real> pos_repr, Var<Real> neg_repr,
                   std::span<const augment::CrossMixPlan<Real>> plans, std::span<const std::uint8_t> mask,
                   SimilaritySample* similarity) {
  Tape<Real>& tape = *H.tape;
  if (plans.empty()) {
    if (H.shape().at(0) < 2) log::warn("loss_csa: batch smaller than 2, cross-sequence loss is 0");
    return tape.constant(Tensor<Real>(Shape{1}));
  }
  const std::size_t N = H.shape().at(1);
  std::vector<Var<Real>> terms;
  std::optional<Tensor<Real>> clean_last;
  if (similarity) clean_last = encoders::last_state(H, mask).value();
  for (const auto& plan : plans) {
    const auto m = augment::mixed_mask(mask, plan.perm, N);
    const std::size_t valid = count_valid(m);
    if (valid == 0) continue;
    Var<Real> Hm = augment::apply_cross_mix(H, plan);
    Var<Real> Pm = augment::apply_cross_mix(pos_repr, plan);
    Var<Real> Nm = augment::apply_cross_mix(neg_repr, plan);
    const auto w = row_major_weights<Real>(m, 1.0 / static_cast<double>(valid));
    terms.push_back(weighted_bce_loss(Hm, Pm, Nm, std::span<const Real>(w)));
    if (similarity) {
      const auto last = encoders::last_state(Hm, mask).value();
      const std::size_t D = last.dim(1);
      for (std::size_t b = 0; b < plan.perm.size(); ++b) {
        bool any = false;
        for (std::size_t t = 0; t < N; ++t) any = any || mask[b * N + t];
        if (any) similarity->add(evaluate::cosine(last.data() + b * D, clean_last->data() + b * D, D));
      }
    }
  }
  if (terms.empty()) return tape.constant(Tensor<Real>(Shape{1}));
  Var<Real> total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
  return ops::scale(total, 1.0 / static_cast<double>(terms.size()));
}

template <typename Real>
void adam_step(ParamStore<Real>& store, const AdamOptions& o) {
  store.advance_step();
  const double t = static_cast<double>(store.step());
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  const Real b1 = static_cast<Real>(o.beta1), b2 = static_cast<Real>(o.beta2);
  for (auto& p : store.params()) {
    Real* x = p.value.data();
    const Real* g = p.grad.data();
    Real* m = p.first_moment.data();
    Real* v = p.second_moment.data();
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      m[i] = b1 * m[i] + (Real{1} - b1) * g[i];
      v[i] = b2 * v[i] + (Real{1} - b2) * g[i] * g[i];
      const double m_hat = static_cast<double>(m[i]) / c1;
      const double v_hat = static_cast<double>(v[i]) / c2;
      x[i] -= static_cast<Real>(o.lr * m_hat / (std::sqrt(v_hat) + o.eps));
    }
    if (p.pinned_zero_row) {
      const std::size_t cols = p.value.dim(1);
      std::fill_n(x + *p.pinned_zero_row * cols, cols, Real{0});
    }
  }
}

LossSwitches loss_switches(const TrainConfig& config, bool stage2) {
  LossSwitches s;
  if (!stage2) return s;
  if (config.aug == AugMode::kRawOps) {
    s.ssa = true;
    s.raw_ops = true;
  } else if (config.aug == AugMode::kBasrec) {
    s.ssa = config.use_ssa;
    s.csa = config.use_csa && config.cross_rounds > 0;
  }
  return s;
}

template <typename Real>
StepSample<Real> draw_step_sample(const datapipe::SequenceBatch& batch, const TrainConfig& config,
                                  const LossSwitches& switches, const augment::SimilarityIndex* index,
                                  RngStream& rng) {
  StepSample<Real> sample;
  sample.dropout_seed = rng.stream(streams::kDropout).next_u64();
  if (switches.ssa) {
    if (!index) throw std::logic_error("draw_step_sample: single-sequence augmentation needs a similarity index");
    const augment::SingleAugConfig cfg{config.rate_min, config.rate_max, config.alpha, config.omega_floor};
    sample.single = augment::sample_single_augmentation(batch, *index, cfg, rng.stream(streams::kOperator),
                                                        rng.stream(streams::kMixup));
  }
  if (switches.csa) {
    for (std::size_t q = 0; q < config.cross_rounds; ++q) {
      const auto kind = config.cross_kinds[q % config.cross_kinds.size()];
      auto plan = augment::make_cross_plan<Real>(batch.batch_size, batch.max_len, config.dim, kind, config.alpha,
                                                 rng.stream(streams::kMixup));
      if (!plan) break;
      sample.plans.push_back(std::move(*plan));
    }
  }
  return sample;
}

template <typename Real>
StepLoss<Real> step_loss(encoders::Model<Real>& model, Tape<Real>& tape, const datapipe::SequenceBatch& batch,
                         const StepSample<Real>& sample, const LossSwitches& switches, SimilaritySample* similarity) {
  Generator drop(sample.dropout_seed);
  Var<Real> table = model.item_table(tape);
  Var<Real> E = model.lookup(table, batch.input_ids);
  Var<Real> H = model.encode(E, batch.mask, &drop);
  Var<Real> pos = model.lookup(table, batch.pos_ids);
  Var<Real> neg = model.lookup(table, batch.neg_ids);

  StepLoss<Real> out;
  Var<Real> main = bce_loss(H, pos, neg, batch.mask);
  out.main = static_cast<double>(main.value()[0]);
  out.total = main;

  std::optional<Tensor<Real>> clean_last;
  if (similarity) clean_last = encoders::last_state(H, batch.mask).value();
  if (switches.ssa && sample.single) {
    Var<Real> ssa = loss_ssa(model, table, E, *sample.single, batch, pos, neg, switches.raw_ops, &drop, similarity,
                             clean_last ? &*clean_last : nullptr);
    out.ssa = static_cast<double>(ssa.value()[0]);
    out.total = ops::add(out.total, ssa);
  }
  if (switches.csa) {
    Var<Real> csa = loss_csa(H, pos, neg, std::span<const augment::CrossMixPlan<Real>>(sample.plans), batch.mask,
                             similarity);
    out.csa = static_cast<double>(csa.value()[0]);
    out.total = ops::add(out.total, csa);
  }
  return out;
}

#define BASREC_INSTANTIATE_LOSSES(R)                                                                          \
  template Var<R> bce_loss(Var<R>, Var<R>, Var<R>, std::span<const std::uint8_t>);                           \
  template Var<R> weighted_bce_loss(Var<R>, Var<R>, Var<R>, std::span<const R>);                             \
  template Var<R> loss_ssa(encoders::Model<R>&, Var<R>, Var<R>, const std::array<augment::AugRecords, 2>&,   \
                           const datapipe::SequenceBatch&, Var<R>, Var<R>, bool, Generator*,                  \
                           SimilaritySample*, const Tensor<R>*);                                             \
  template Var<R> loss_csa(Var<R>, Var<R>, Var<R>, std::span<const augment::CrossMixPlan<R>>,                \
                           std::span<const std::uint8_t>, SimilaritySample*);                                \
  template void adam_step(ParamStore<R>&, const AdamOptions&);                                               \
  template StepSample<R> draw_step_sample<R>(const datapipe::SequenceBatch&, const TrainConfig&,             \
                                             const LossSwitches&, const augment::SimilarityIndex*, RngStream&); \
  template StepLoss<R> step_loss(encoders::Model<R>&, Tape<R>&, const datapipe::SequenceBatch&,              \
                                 const StepSample<R>&, const LossSwitches&, SimilaritySample*);

BASREC_INSTANTIATE_LOSSES(float)
BASREC_INSTANTIATE_LOSSES(double)

#undef BASREC_INSTANTIATE_LOSSES

}  // namespace basrec::trainer
