#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "basrec/augment/augment.hpp"
#include "basrec/errors.hpp"
#include "basrec/log.hpp"

using namespace basrec;
using namespace basrec::augment;

namespace {

Tensor<double> random_table(std::size_t V, std::size_t D, Generator& g) {
  Tensor<double> t(Shape{V + 1, D});
  for (std::size_t i = D; i < t.numel(); ++i) t[i] = g.normal();
  return t;
}

// O(|V|^2) scan with scalar loops; ties to the lowest id.
ItemId brute_top1(const Tensor<double>& table, ItemId v) {
  const std::size_t V = table.dim(0) - 1, D = table.dim(1);
  auto dot = [&](std::size_t a, std::size_t b) {
    double s = 0;
    for (std::size_t d = 0; d < D; ++d) s += table.at(a, d) * table.at(b, d);
    return s;
  };
  double best = -2.0;
  ItemId arg = 0;
  for (std::size_t u = 1; u <= V; ++u) {
    if (u == static_cast<std::size_t>(v)) continue;
    const double c = dot(v, u) / std::sqrt(dot(v, v) * dot(u, u));
    if (c > best) {
      best = c;
      arg = static_cast<ItemId>(u);
    }
  }
  return arg;
}

struct QuietWarnings {
  QuietWarnings() { prev = log::set_sink([this](std::string_view l, std::string_view) { count += l == "warn"; }); }
  ~QuietWarnings() { log::set_sink(prev); }
  log::Sink prev;
  int count = 0;
};

}  // namespace

TEST(EditCount, FloorWithMinimumOne) {
  EXPECT_EQ(edit_count(0.4, 5), 2u);
  EXPECT_EQ(edit_count(0.1, 5), 1u);
  EXPECT_EQ(edit_count(0.99, 5), 4u);
  EXPECT_EQ(edit_count(0.5, 1), 1u);
}

TEST(Reorder, NearFullRateIsPermutation) {
  Generator g(1);
  const std::vector<ItemId> s{1, 2, 3, 4, 5};
  for (int i = 0; i < 200; ++i) {
    auto out = op_reorder(s, 0.9999, g);
    std::sort(out.begin(), out.end());
    EXPECT_EQ(out, s);
  }
}

TEST(Reorder, SingleElementWindowIsIdentity) {
  Generator g(2);
  const std::vector<ItemId> s{4, 9, 2, 7};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(op_reorder(s, 0.2, g), s);
}

TEST(Reorder, RateFourTenthsMatchesExhaustiveEnumeration) {
  // c = 2: every start in 0..3 times both orders of the window.
  const std::vector<ItemId> s{1, 2, 3, 4, 5};
  std::set<std::vector<ItemId>> legal;
  for (std::size_t start = 0; start + 2 <= s.size(); ++start) {
    auto a = s;
    legal.insert(a);
    std::swap(a[start], a[start + 1]);
    legal.insert(a);
  }
  ASSERT_EQ(legal.size(), 5u);
  Generator g(3);
  std::set<std::vector<ItemId>> seen;
  for (int i = 0; i < 4000; ++i) {
    const auto out = op_reorder(s, 0.4, g);
    EXPECT_TRUE(legal.count(out)) << "illegal outcome";
    seen.insert(out);
    std::size_t diff = 0;
    for (std::size_t j = 0; j < 5; ++j) diff += out[j] != s[j];
    EXPECT_TRUE(diff == 0 || diff == 2);
  }
  EXPECT_EQ(seen, legal);
}

TEST(Substitute, FullRateReplacesEveryPosition) {
  Generator g(4), t(5);
  const auto table = random_table(10, 4, t);
  const auto index = build_similarity_index(table, 1, g);
  const std::vector<ItemId> s{1, 5, 7, 3};
  const auto out = op_substitute(s, 1.0, index, g);  // c == len
  ASSERT_EQ(out.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(out[i], index.top1(s[i]));
}

TEST(Substitute, EditsExactlyCPositions) {
  Generator g(6), t(7);
  const auto index = build_similarity_index(random_table(30, 6, t), 1, g);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<ItemId> s(1 + g.below(20));
    for (auto& v : s) v = static_cast<ItemId>(1 + g.below(30));
    const double rate = sample_rate(0.1, 0.9, g);
    const auto out = op_substitute(s, rate, index, g);
    ASSERT_EQ(out.size(), s.size());
    std::size_t diff = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (out[i] != s[i]) {
        ++diff;
        EXPECT_EQ(out[i], index.top1(s[i]));
      }
    }
    EXPECT_EQ(diff, edit_count(rate, s.size()));
  }
}

TEST(Substitute, OneHotTablePullsLowestTiedId) {
  // 20 orthogonal one-hot rows: every other item ties at cosine 0.
  Tensor<double> table(Shape{21, 20});
  for (std::size_t v = 1; v <= 20; ++v) table.at(v, v - 1) = 1.0;
  Generator g(8);
  const auto index = build_similarity_index(table, 1, g);
  for (ItemId v = 1; v <= 20; ++v) {
    EXPECT_EQ(index.top1(v), v == 1 ? 2 : 1);
    EXPECT_EQ(index.top1(v), brute_top1(table, v));
  }
}

TEST(SimilarityIndex, IdenticalRowsPointAtEachOther) {
  Generator g(9), t(10);
  auto table = random_table(8, 5, t);
  for (std::size_t d = 0; d < 5; ++d) table.at(6, d) = table.at(3, d);
  const auto index = build_similarity_index(table, 1, g);
  EXPECT_EQ(index.top1(3), 6);
  EXPECT_EQ(index.top1(6), 3);
}

TEST(SimilarityIndex, RandomTableMatchesBruteForce) {
  Generator g(11);
  for (int trial = 0; trial < 10; ++trial) {
    const auto table = random_table(20, 6, g);
    const auto index = build_similarity_index(table, 1, g);
    EXPECT_EQ(index.num_items(), 20);
    for (ItemId v = 1; v <= 20; ++v) {
      EXPECT_EQ(index.top1(v), brute_top1(table, v));
      EXPECT_NE(index.top1(v), v);
    }
  }
}

TEST(SimilarityIndex, TopKIsSortedAndExcludesSelf) {
  Generator g(12);
  const auto table = random_table(15, 4, g);
  const auto index = build_similarity_index(table, 3, g);
  for (ItemId v = 1; v <= 15; ++v) {
    std::set<ItemId> seen;
    for (std::size_t j = 0; j < 3; ++j) {
      const ItemId u = index.neighbors[static_cast<std::size_t>(v) * 3 + j];
      EXPECT_NE(u, v);
      EXPECT_TRUE(seen.insert(u).second);
    }
  }
}

TEST(SimilarityIndex, ZeroNormRowGetsRandomOtherItemWithWarning) {
  Generator g(13);
  auto table = random_table(6, 3, g);
  for (std::size_t d = 0; d < 3; ++d) table.at(4, d) = 0.0;
  QuietWarnings w;
  const auto index = build_similarity_index(table, 1, g);
  EXPECT_EQ(w.count, 1);
  EXPECT_NE(index.top1(4), 4);
  EXPECT_GE(index.top1(4), 1);
  for (ItemId v = 1; v <= 6; ++v) {
    if (v != 4) EXPECT_NE(index.top1(v), 4);
  }
}

TEST(SampleRate, BoundsAndErrors) {
  Generator g(14);
  for (int i = 0; i < 1000; ++i) {
    const double r = sample_rate(0.2, 0.7, g);
    EXPECT_GE(r, 0.2);
    EXPECT_LT(r, 0.7);
  }
  EXPECT_THROW(sample_rate(0.0, 0.5, g), ConfigError);
  EXPECT_THROW(sample_rate(0.5, 0.5, g), ConfigError);
  EXPECT_THROW(sample_rate(0.2, 1.0, g), ConfigError);
}

TEST(AdaptiveWeight, WorkedExample) {
  const std::vector<double> products{0.1, 0.2, 0.5};
  const auto w = adaptive_weights(products);
  EXPECT_NEAR(w[0], 1.0, 1e-12);
  EXPECT_NEAR(w[1], 0.375, 1e-12);
  EXPECT_NEAR(w[2], 0.05, 1e-12);
  EXPECT_NEAR(adaptive_weight(0.5, 0.4, products), 0.375, 1e-12);
}

TEST(AdaptiveWeight, DegenerateBatches) {
  const std::vector<double> one{0.3};
  EXPECT_EQ(adaptive_weight(0.5, 0.6, one), 1.0);
  const std::vector<double> same{0.2, 0.2, 0.2};
  for (double w : adaptive_weights(same)) EXPECT_EQ(w, 1.0);
}

TEST(AdaptiveWeight, ZeroProductIsClampedWithWarning) {
  QuietWarnings w;
  const std::vector<double> products{0.0, 0.5};
  const auto out = adaptive_weights(products);
  EXPECT_EQ(out[0], 1.0);
  EXPECT_EQ(out[1], 0.05);
  EXPECT_GE(w.count, 1);
}

TEST(MixSingle, EndpointsAndMidpoint) {
  Tape<double> tape;
  Tensor<double> a(Shape{2, 1, 2}), b(Shape{2, 1, 2});
  a.fill(2.0);
  b.fill(4.0);
  const auto E = tape.constant(a), Ep = tape.constant(b);
  EXPECT_EQ(mix_single(E, Ep, 1.0).value(), a);
  EXPECT_EQ(mix_single(E, Ep, 0.0).value(), b);
  const auto mid = mix_single(E, Ep, 0.5);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(mid.value()[i], 3.0);
  EXPECT_TRUE(mid.provenance() & kSingleAug);
  EXPECT_THROW(mix_single(E, Ep, 1.5), ConfigError);
  EXPECT_THROW(mix_single(E, tape.constant(Tensor<double>(Shape{2, 2, 2})), 0.5), ShapeError);
}

TEST(CrossPlan, SupportBijectionAndDeterminism) {
  for (auto kind : {CrossKind::kItemWise, CrossKind::kFeatureWise}) {
    Generator g1(15), g2(15);
    const auto p = make_cross_plan<double>(6, 4, 3, kind, 0.3, g1);
    const auto q = make_cross_plan<double>(6, 4, 3, kind, 0.3, g2);
    ASSERT_TRUE(p && q);
    EXPECT_EQ(p->perm, q->perm);
    EXPECT_EQ(p->weights, q->weights);
    EXPECT_NE(p->id, q->id);
    EXPECT_EQ(p->weights.shape(), (Shape{6, kind == CrossKind::kItemWise ? 4u : 3u}));
    for (std::size_t i = 0; i < p->weights.numel(); ++i) {
      EXPECT_GE(p->weights[i], 0.0);
      EXPECT_LE(p->weights[i], 1.0);
    }
    std::vector<std::size_t> inverse(6);
    for (std::size_t b = 0; b < 6; ++b) inverse[p->perm[b]] = b;
    for (std::size_t b = 0; b < 6; ++b) EXPECT_EQ(inverse[p->perm[b]], b);
  }
}

TEST(CrossPlan, TinyBatchIsSkipped) {
  QuietWarnings w;
  Generator g(16);
  EXPECT_FALSE(make_cross_plan<double>(1, 4, 3, CrossKind::kItemWise, 0.3, g).has_value());
  EXPECT_EQ(w.count, 1);
}

TEST(CrossMix, EndpointsAndScalarOracle) {
  Generator g(17);
  const std::size_t B = 5, N = 4, D = 3;
  Tensor<double> h(Shape{B, N, D});
  for (std::size_t i = 0; i < h.numel(); ++i) h[i] = g.normal();
  for (auto kind : {CrossKind::kItemWise, CrossKind::kFeatureWise}) {
    auto plan = *make_cross_plan<double>(B, N, D, kind, 0.4, g);
    Tape<double> tape;
    const auto x = tape.constant(h);
    const auto mixed = apply_cross_mix(x, plan).value();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < N; ++t)
        for (std::size_t d = 0; d < D; ++d) {
          const double w = kind == CrossKind::kItemWise ? plan.weights.at(b, t) : plan.weights.at(b, d);
          const double expect = w * h.at(b, t, d) + (1 - w) * h.at(plan.perm[b], t, d);
          EXPECT_NEAR(mixed.at(b, t, d), expect, 1e-15);
        }

    auto ones = plan;
    ones.weights.fill(1.0);
    EXPECT_EQ(apply_cross_mix(x, ones).value(), h);
    auto half = plan;
    half.weights.fill(0.5);
    std::iota(half.perm.begin(), half.perm.end(), std::size_t{0});
    EXPECT_EQ(apply_cross_mix(x, half).value(), h);
  }
}

TEST(CrossMix, RefusesSingleAugmentedInput) {
  Generator g(18);
  const auto plan = *make_cross_plan<double>(2, 1, 2, CrossKind::kItemWise, 0.4, g);
  Tape<double> tape;
  Tensor<double> a(Shape{2, 1, 2});
  const auto E = tape.constant(a);
  const auto single = mix_single(E, E, 0.3);
  EXPECT_THROW(apply_cross_mix(single, plan), std::logic_error);
  // Anything downstream of a single-augmented tensor stays tagged.
  EXPECT_THROW(apply_cross_mix(ops::scale(single, 2.0), plan), std::logic_error);
  EXPECT_TRUE(apply_cross_mix(E, plan).provenance() & kCrossMixed);
}

TEST(CrossMix, PlanLogRecordsEachApplication) {
  Generator g(19);
  const auto plan = *make_cross_plan<double>(3, 2, 2, CrossKind::kFeatureWise, 0.4, g);
  Tape<double> tape;
  const auto x = tape.constant(Tensor<double>(Shape{3, 2, 2}));
  set_plan_recording(true);
  apply_cross_mix(x, plan);
  apply_cross_mix(x, plan);
  const auto log = take_plan_log();
  set_plan_recording(false);
  EXPECT_EQ(log, (std::vector<std::uint64_t>{plan.id, plan.id}));
}

TEST(MixedMask, LogicalAndOfSourceRows) {
  const std::vector<std::uint8_t> mask{0, 1, 1, 1, 0, 0, 1, 1, 0, 1, 1, 1};
  const std::vector<std::size_t> perm{1, 2, 0};
  const auto m = mixed_mask(mask, perm, 4);
  EXPECT_EQ(m, (std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0, 1, 1, 0, 1, 1, 1}));
}

TEST(SingleAugmentation, RecordsPerRowAndPooledWeights) {
  datapipe::SequenceBatch batch;
  batch.batch_size = 3;
  batch.max_len = 5;
  batch.input_ids = {0, 1, 2, 3, 4, 0, 0, 0, 5, 6, 0, 0, 0, 0, 0};
  batch.mask = {0, 1, 1, 1, 1, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0};
  Generator t(20), g(21), op(22), mix(23);
  const auto index = build_similarity_index(random_table(8, 3, t), 1, g);
  const SingleAugConfig cfg{0.2, 0.8, 0.4, 0.05};
  const auto recs = sample_single_augmentation(batch, index, cfg, op, mix);
  EXPECT_EQ(recs[0].op, Operator::kReorder);
  EXPECT_EQ(recs[1].op, Operator::kSubstitute);
  std::vector<double> products;
  for (const auto& r : recs) {
    for (std::size_t i = 0; i < 15; ++i) EXPECT_EQ(r.ids[i] != 0, batch.mask[i] != 0);
    EXPECT_EQ(r.omegas[2], 0.0);
    for (std::size_t b = 0; b < 2; ++b) {
      EXPECT_GE(r.rates[b], 0.2);
      EXPECT_LT(r.rates[b], 0.8);
      EXPECT_GE(r.omegas[b], 0.05);
      EXPECT_LE(r.omegas[b], 1.0);
      products.push_back(r.rates[b] * r.lambdas[b]);
    }
  }
  const auto expect = adaptive_weights(products);
  EXPECT_EQ(recs[0].omegas[0], expect[0]);
  EXPECT_EQ(recs[1].omegas[0], expect[2]);
  EXPECT_EQ(recs[1].omegas[1], expect[3]);

  Generator op2(22), mix2(23);
  const auto again = sample_single_augmentation(batch, index, cfg, op2, mix2);
  EXPECT_EQ(again[1].ids, recs[1].ids);
}
