#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <vector>

#include "basrec/augment/augment.hpp"
#include "basrec/datapipe/synthetic.hpp"
#include "basrec/errors.hpp"
#include "basrec/log.hpp"
#include "basrec/numkernel/ops.hpp"
#include "basrec/trainer/config.hpp"
#include "basrec/trainer/losses.hpp"
#include "basrec/trainer/train.hpp"

using namespace basrec;
using namespace basrec::trainer;

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Tensor<double> random_tensor(Shape shape, Generator& g, double scale = 1.0) {
  Tensor<double> t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = scale * g.normal();
  return t;
}

// Scalar BCE of one position.
double position_loss(const Tensor<double>& H, const Tensor<double>& P, const Tensor<double>& Ng, std::size_t b,
                     std::size_t t) {
  double sp = 0, sn = 0;
  for (std::size_t d = 0; d < H.dim(2); ++d) {
    sp += H.at(b, t, d) * P.at(b, t, d);
    sn += H.at(b, t, d) * Ng.at(b, t, d);
  }
  return softplus(-sp) + softplus(sn);
}

TrainConfig small_config() {
  TrainConfig c;
  c.dim = 8;
  c.max_len = 8;
  c.layers = 1;
  c.batch_size = 16;
  c.stage1_epochs = 2;
  c.total_epochs = 4;
  c.patience = 0;
  c.rate_min = 0.2;
  c.rate_max = 0.7;
  return c;
}

datapipe::InteractionDataset small_dataset() {
  return datapipe::split_leave_one_out(datapipe::gen_synthetic(5, 60, 30, datapipe::SyntheticPattern::kMarkov));
}

}  // namespace

TEST(BceLoss, ZeroScoresGiveTwoLnTwo) {
  Tape<double> tape;
  const auto z = tape.constant(Tensor<double>(Shape{2, 3, 4}));
  const std::vector<std::uint8_t> mask{0, 1, 1, 1, 1, 1};
  EXPECT_NEAR(bce_loss(z, z, z, mask).value()[0], 2.0 * std::log(2.0), 1e-15);
}

TEST(BceLoss, SaturatedScoresVanish) {
  Tape<double> tape;
  Tensor<double> h(Shape{1, 1, 1}), p(Shape{1, 1, 1}), n(Shape{1, 1, 1});
  h[0] = 1.0;
  p[0] = 40.0;
  n[0] = -40.0;
  const std::vector<std::uint8_t> mask{1};
  EXPECT_LT(bce_loss(tape.constant(h), tape.constant(p), tape.constant(n), mask).value()[0], 1e-12);
}

TEST(BceLoss, InvariantToPadContentsAndRejectsEmptyMask) {
  Generator g(1);
  auto H = random_tensor({2, 3, 4}, g), P = random_tensor({2, 3, 4}, g), N = random_tensor({2, 3, 4}, g);
  const std::vector<std::uint8_t> mask{0, 1, 1, 0, 0, 1};
  Tape<double> tape;
  const double a = bce_loss(tape.constant(H), tape.constant(P), tape.constant(N), mask).value()[0];
  for (std::size_t d = 0; d < 4; ++d) H.at(0, 0, d) = 99.0, P.at(1, 1, d) = -7.0;
  const double b = bce_loss(tape.constant(H), tape.constant(P), tape.constant(N), mask).value()[0];
  EXPECT_EQ(a, b);
  const std::vector<std::uint8_t> none(6, 0);
  EXPECT_THROW(bce_loss(tape.constant(H), tape.constant(P), tape.constant(N), none), DataError);
}

namespace {

struct SsaFixture {
  encoders::Model<double> model{encoders::EncoderKind::kAttention, {9, 4, 5, 1}, 0.0};
  datapipe::SequenceBatch batch;
  SsaFixture() {
    Generator init(3);
    model.initialize(init);
    batch.batch_size = 2;
    batch.max_len = 5;
    batch.input_ids = {0, 1, 2, 3, 4, 0, 0, 0, 5, 6};
    batch.pos_ids = {0, 2, 3, 4, 7, 0, 0, 0, 6, 9};
    batch.neg_ids = {0, 8, 8, 9, 1, 0, 0, 0, 2, 3};
    batch.mask = {0, 1, 1, 1, 1, 0, 0, 0, 1, 1};
  }
  std::array<augment::AugRecords, 2> records(double lambda, double omega) const {
    std::array<augment::AugRecords, 2> r;
    r[0].ids = {0, 2, 1, 3, 4, 0, 0, 0, 6, 5};
    r[1].ids = {0, 1, 9, 3, 4, 0, 0, 0, 5, 8};
    for (auto& x : r) {
      x.rates = {0.5, 0.5};
      x.lambdas = {lambda, lambda};
      x.omegas = {omega, omega};
    }
    r[1].op = augment::Operator::kSubstitute;
    return r;
  }
};

}  // namespace

TEST(LossSsa, ZeroOmegaGivesZero) {
  SsaFixture f;
  Tape<double> tape;
  auto table = f.model.item_table(tape);
  auto E = f.model.lookup(table, f.batch.input_ids);
  auto P = f.model.lookup(table, f.batch.pos_ids), N = f.model.lookup(table, f.batch.neg_ids);
  EXPECT_EQ(loss_ssa(f.model, table, E, f.records(0.3, 0.0), f.batch, P, N, false, nullptr).value()[0], 0.0);
}

TEST(LossSsa, LambdaOneEqualsMainLoss) {
  SsaFixture f;
  Tape<double> tape;
  auto table = f.model.item_table(tape);
  auto E = f.model.lookup(table, f.batch.input_ids);
  auto P = f.model.lookup(table, f.batch.pos_ids), N = f.model.lookup(table, f.batch.neg_ids);
  const double main = bce_loss(f.model.encode(E, f.batch.mask, nullptr), P, N, f.batch.mask).value()[0];
  const double ssa = loss_ssa(f.model, table, E, f.records(1.0, 1.0), f.batch, P, N, false, nullptr).value()[0];
  EXPECT_NEAR(ssa, main, 1e-12);
}

TEST(LossSsa, TwoRecordScalarReference) {
  SsaFixture f;
  auto recs = f.records(0.3, 1.0);
  recs[0].lambdas = {0.25, 0.6};
  recs[0].omegas = {1.0, 0.05};
  recs[1].lambdas = {0.9, 0.1};
  recs[1].omegas = {0.4, 0.7};
  Tape<double> tape;
  auto table = f.model.item_table(tape);
  auto E = f.model.lookup(table, f.batch.input_ids);
  auto P = f.model.lookup(table, f.batch.pos_ids), N = f.model.lookup(table, f.batch.neg_ids);
  const double got = loss_ssa(f.model, table, E, recs, f.batch, P, N, false, nullptr).value()[0];

  // Reference: build each mixed row by hand, encode it alone, sum weighted
  // position losses.
  const auto& M = f.model.params().get("item_emb").value;
  double expect = 0.0;
  const double valid = 6.0;
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t b = 0; b < 2; ++b) {
      Tensor<double> row(Shape{1, 5, 4});
      for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t d = 0; d < 4; ++d) {
          const double l = recs[k].lambdas[b];
          row.at(0, t, d) = l * M.at(f.batch.input_ids[b * 5 + t], d) + (1 - l) * M.at(recs[k].ids[b * 5 + t], d);
        }
      Tape<double> t2;
      const std::vector<std::uint8_t> m(f.batch.mask.begin() + b * 5, f.batch.mask.begin() + b * 5 + 5);
      const auto H = f.model.encode(t2.constant(row), m, nullptr).value();
      Tensor<double> Pr(Shape{1, 5, 4}), Nr(Shape{1, 5, 4});
      for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t d = 0; d < 4; ++d) {
          Pr.at(0, t, d) = M.at(f.batch.pos_ids[b * 5 + t], d);
          Nr.at(0, t, d) = M.at(f.batch.neg_ids[b * 5 + t], d);
        }
      for (std::size_t t = 0; t < 5; ++t) {
        if (m[t]) expect += recs[k].omegas[b] * position_loss(H, Pr, Nr, 0, t) / (2.0 * valid);
      }
    }
  }
  EXPECT_NEAR(got, expect, 1e-12);
}

TEST(LossCsa, EndpointsEqualMainLoss) {
  Generator g(4);
  const auto H = random_tensor({3, 4, 2}, g), P = random_tensor({3, 4, 2}, g), N = random_tensor({3, 4, 2}, g);
  const std::vector<std::uint8_t> mask{0, 1, 1, 1, 1, 1, 1, 1, 0, 0, 1, 1};
  Tape<double> tape;
  const auto h = tape.constant(H), p = tape.constant(P), n = tape.constant(N);
  const double main = bce_loss(h, p, n, mask).value()[0];
  auto plan = *augment::make_cross_plan<double>(3, 4, 2, augment::CrossKind::kItemWise, 0.4, g);

  auto self_half = plan;
  self_half.perm = {0, 1, 2};
  self_half.weights.fill(0.5);
  const augment::CrossMixPlan<double> a[] = {self_half};
  EXPECT_NEAR(loss_csa(h, p, n, std::span<const augment::CrossMixPlan<double>>(a), mask).value()[0], main, 1e-15);

  // Lambda = 1 keeps every row; the AND mask only drops positions another row
  // lacks, so compare against the main loss under that mask.
  auto ones = plan;
  ones.weights.fill(1.0);
  ones.perm = {2, 0, 1};
  const augment::CrossMixPlan<double> b[] = {ones};
  const auto m = augment::mixed_mask(mask, ones.perm, 4);
  EXPECT_NEAR(loss_csa(h, p, n, std::span<const augment::CrossMixPlan<double>>(b), mask).value()[0],
              bce_loss(h, p, n, m).value()[0], 1e-15);
  const std::vector<std::uint8_t> full(12, 1);
  EXPECT_NEAR(loss_csa(h, p, n, std::span<const augment::CrossMixPlan<double>>(b), full).value()[0],
              bce_loss(h, p, n, full).value()[0], 1e-15);
}

TEST(LossCsa, OnePlanScalarReference) {
  Generator g(5);
  const auto H = random_tensor({2, 3, 2}, g), P = random_tensor({2, 3, 2}, g), N = random_tensor({2, 3, 2}, g);
  const std::vector<std::uint8_t> mask{1, 1, 1, 0, 1, 1};
  for (auto kind : {augment::CrossKind::kItemWise, augment::CrossKind::kFeatureWise}) {
    auto plan = *augment::make_cross_plan<double>(2, 3, 2, kind, 0.4, g);
    plan.perm = {1, 0};
    Tape<double> tape;
    const augment::CrossMixPlan<double> plans[] = {plan};
    const double got = loss_csa(tape.constant(H), tape.constant(P), tape.constant(N),
                                std::span<const augment::CrossMixPlan<double>>(plans), mask)
                           .value()[0];
    auto mix = [&](const Tensor<double>& x) {
      Tensor<double> out(x.shape());
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 3; ++t)
          for (std::size_t d = 0; d < 2; ++d) {
            const double w = kind == augment::CrossKind::kItemWise ? plan.weights.at(b, t) : plan.weights.at(b, d);
            out.at(b, t, d) = w * x.at(b, t, d) + (1 - w) * x.at(1 - b, t, d);
          }
      return out;
    };
    const auto Hm = mix(H), Pm = mix(P), Nm = mix(N);
    double sum = 0;
    int count = 0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < 3; ++t)
        if (mask[b * 3 + t] && mask[(1 - b) * 3 + t]) {
          sum += position_loss(Hm, Pm, Nm, b, t);
          ++count;
        }
    EXPECT_NEAR(got, sum / count, 1e-14);
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamStore<double> store;
  auto& p = store.add("w", {3});
  p.value[0] = 1.0, p.value[1] = -2.0, p.value[2] = 0.5;
  const auto before = p.value;
  adam_step(store, {});
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(store.step(), 1);
}

TEST(Adam, MatchesHandRolledRecurrence) {
  ParamStore<double> store;
  auto& p = store.add("x", {1});
  p.value[0] = 0.7;
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.3;
  double x = 0.7, m = 0, v = 0;
  for (int t = 1; t <= 3; ++t) {
    p.grad[0] = g;
    adam_step(store, {lr, b1, b2, eps});
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    EXPECT_NEAR(p.value[0], x, 1e-15) << "step " << t;
  }
}

TEST(Adam, MomentsDecayAfterGradientsStop) {
  ParamStore<double> store;
  auto& p = store.add("x", {1});
  p.grad[0] = 1.0;
  adam_step(store, {});
  p.grad[0] = 0.0;
  double m_prev = p.first_moment[0], v_prev = p.second_moment[0];
  for (int i = 0; i < 20; ++i) {
    adam_step(store, {});
    EXPECT_LT(p.first_moment[0], m_prev);
    EXPECT_LT(p.second_moment[0], v_prev);
    m_prev = p.first_moment[0];
    v_prev = p.second_moment[0];
  }
}

TEST(Adam, PaddingRowStaysZero) {
  encoders::Model<float> m(encoders::EncoderKind::kRecurrent, {5, 3, 4, 1});
  Generator init(1);
  m.initialize(init);
  auto& emb = m.params().get("item_emb");
  for (auto& p : m.params().params()) p.grad.fill(0.5f);
  adam_step(m.params(), {});
  for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(emb.value.at(0, d), 0.0f);
}

TEST(Config, ParseRoundTripAndErrors) {
  const auto c = parse_config("dim = 16\n# comment\naug = raw_ops\ncross_kinds = feature_wise\nseeds = 3,4,5\n");
  EXPECT_EQ(c.dim, 16u);
  EXPECT_EQ(c.aug, AugMode::kRawOps);
  EXPECT_EQ(c.cross_kinds, std::vector<augment::CrossKind>{augment::CrossKind::kFeatureWise});
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4, 5}));
  const auto again = parse_config(config_to_text(c));
  EXPECT_EQ(config_to_text(again), config_to_text(c));
  try {
    parse_config("learning_rate = 0.1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
  EXPECT_THROW(parse_config("dim = many\n"), ConfigError);
  EXPECT_THROW(parse_config("just words\n"), ConfigError);
  TrainConfig bad;
  bad.rate_min = 0.8;
  bad.rate_max = 0.6;
  EXPECT_THROW(validate(bad), ConfigError);
  bad = {};
  bad.stage1_epochs = bad.total_epochs;
  EXPECT_THROW(validate(bad), ConfigError);
  bad = {};
  bad.alpha = 0;
  EXPECT_THROW(validate(bad), ConfigError);
}

TEST(Train, NoneModeReportsZeroAugmentationLosses) {
  auto c = small_config();
  c.aug = AugMode::kNone;
  const auto r = train(c, small_dataset(), 1);
  ASSERT_EQ(r.epochs.size(), 4u);
  for (const auto& e : r.epochs) {
    EXPECT_EQ(e.loss_ssa, 0.0);
    EXPECT_EQ(e.loss_csa, 0.0);
  }
}

TEST(Train, StageOneReportsZeroAugmentationLossesAndStageTwoDoesNot) {
  const auto r = train(small_config(), small_dataset(), 2);
  ASSERT_EQ(r.epochs.size(), 4u);
  for (const auto& e : r.epochs) {
    if (e.stage == 1) {
      EXPECT_EQ(e.loss_ssa, 0.0);
      EXPECT_EQ(e.loss_csa, 0.0);
    } else {
      EXPECT_GT(e.loss_ssa, 0.0);
      EXPECT_GT(e.loss_csa, 0.0);
    }
    EXPECT_NEAR(e.loss_total, e.loss_main + e.loss_ssa + e.loss_csa, 1e-6 * e.loss_total);
  }
  EXPECT_EQ(r.operator_draws_after_stage1, 0u);
  EXPECT_EQ(r.mixup_draws_after_stage1, 0u);
}

TEST(Train, SameSeedIsBitwiseIdentical) {
  const auto d = small_dataset();
  const auto a = train(small_config(), d, 7);
  const auto b = train(small_config(), d, 7);
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    EXPECT_EQ(a.epochs[i].loss_total, b.epochs[i].loss_total);
    EXPECT_EQ(a.epochs[i].val.n10, b.epochs[i].val.n10);
  }
  for (std::size_t i = 0; i < a.model.params().size(); ++i) {
    EXPECT_EQ(a.model.params().params()[i].value, b.model.params().params()[i].value);
  }
}

TEST(Train, StageOneIdenticalAcrossAugmentationModes) {
  const auto d = small_dataset();
  std::vector<std::vector<double>> losses;
  for (auto mode : {AugMode::kNone, AugMode::kRawOps, AugMode::kBasrec}) {
    auto c = small_config();
    c.aug = mode;
    const auto r = train(c, d, 11);
    losses.push_back({r.epochs[0].loss_main, r.epochs[1].loss_main});
    EXPECT_EQ(r.operator_draws_after_stage1, 0u);
  }
  EXPECT_EQ(losses[0], losses[1]);
  EXPECT_EQ(losses[0], losses[2]);
}

TEST(Train, CrossMixAppliesEachPlanToThreeTensors) {
  auto c = small_config();
  c.stage1_epochs = 0;
  c.total_epochs = 1;
  augment::set_plan_recording(true);
  train(c, small_dataset(), 3);
  const auto log = augment::take_plan_log();
  augment::set_plan_recording(false);
  std::map<std::uint64_t, int> uses;
  for (auto id : log) ++uses[id];
  ASSERT_FALSE(uses.empty());
  for (const auto& [id, n] : uses) EXPECT_EQ(n, 3) << "plan " << id;
}

TEST(Train, EarlyStoppingOnlyInStageTwo) {
  auto c = small_config();
  c.patience = 1;
  c.stage1_epochs = 3;
  c.total_epochs = 30;
  c.lr = 1e-9;  // validation never improves after the first epoch
  const auto r = train(c, small_dataset(), 4);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.epochs.size(), 4u);
  EXPECT_EQ(r.epochs.back().stage, 2);
}

TEST(GradCheck, StageTwoLossOnToyInstance) {
  TrainConfig c;
  c.dim = 8;
  c.layers = 2;
  for (const auto& entry : run_gradcheck_suite(c, 1, 2e-5)) {
    EXPECT_GE(entry.report.probes, 100u) << entry.name;
    EXPECT_LT(entry.report.max_rel_error, 1e-5)
        << entry.name << " worst " << entry.report.worst_param << "[" << entry.report.worst_index << "] analytic "
        << entry.report.worst_analytic << " numeric " << entry.report.worst_numeric;
  }
}
