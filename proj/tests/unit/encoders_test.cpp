#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <vector>

#include "basrec/encoders/checkpoint.hpp"
#include "basrec/encoders/model.hpp"
#include "basrec/errors.hpp"
#include "basrec/numkernel/grad_check.hpp"
#include "basrec/numkernel/ops.hpp"

using namespace basrec;
using namespace basrec::encoders;

namespace {

struct ToyBatch {
  std::vector<ItemId> ids;
  std::vector<std::uint8_t> mask;
};

// Left-padded random rows; row lengths drawn from [0, N].
ToyBatch random_batch(std::size_t rows, std::size_t N, std::int32_t V, Generator& g, bool allow_empty = true) {
  ToyBatch b{std::vector<ItemId>(rows * N, 0), std::vector<std::uint8_t>(rows * N, 0)};
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t len = allow_empty ? g.below(N + 1) : 1 + g.below(N);
    for (std::size_t t = N - len; t < N; ++t) {
      b.ids[r * N + t] = static_cast<ItemId>(1 + g.below(static_cast<std::uint64_t>(V)));
      b.mask[r * N + t] = 1;
    }
  }
  return b;
}

template <typename Real>
bool bitwise_equal(const Real* a, const Real* b, std::size_t n) {
  return std::memcmp(a, b, n * sizeof(Real)) == 0;
}

class EncoderConformance : public ::testing::TestWithParam<EncoderKind> {
 protected:
  Model<double> make(std::size_t N = 6, std::size_t D = 8, std::int32_t V = 12, double dropout = 0.2) {
    Model<double> m(GetParam(), ModelDims{V, D, N, 2}, dropout);
    Generator init(17);
    m.initialize(init);
    return m;
  }
};

}  // namespace

TEST_P(EncoderConformance, ShapeContract) {
  auto m = make();
  Generator g(1);
  const auto b = random_batch(3, 6, 12, g);
  Tape<double> tape;
  const auto out = m.forward(tape, b.ids, b.mask, nullptr);
  EXPECT_EQ(out.H.shape(), (Shape{3, 6, 8}));
  EXPECT_EQ(out.last_state.shape(), (Shape{3, 8}));
  EXPECT_TRUE(out.H.value().all_finite());
  Tape<double> bad;
  EXPECT_THROW(m.encode(bad.constant(Tensor<double>(Shape{3, 5, 8})), b.mask, nullptr), ShapeError);
}

TEST_P(EncoderConformance, CausalityIsBitwise) {
  auto m = make(8, 8, 20);
  Generator g(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto b = random_batch(4, 8, 20, g, false);
    const std::size_t t = g.below(8);
    auto perturbed = b.ids;
    for (std::size_t r = 0; r < 4; ++r) {
      if (b.mask[r * 8 + t]) perturbed[r * 8 + t] = perturbed[r * 8 + t] % 20 + 1;
    }
    for (bool train : {false, true}) {
      Generator d1(50 + trial), d2(50 + trial);
      Tape<double> t1, t2;
      const auto h1 = m.forward(t1, b.ids, b.mask, train ? &d1 : nullptr).H.value();
      const auto h2 = m.forward(t2, perturbed, b.mask, train ? &d2 : nullptr).H.value();
      for (std::size_t r = 0; r < 4; ++r) {
        EXPECT_TRUE(bitwise_equal(h1.data() + r * 64, h2.data() + r * 64, t * 8)) << "row " << r << " t " << t;
      }
    }
  }
}

TEST_P(EncoderConformance, DeterministicForward) {
  auto m = make();
  Generator g(3);
  const auto b = random_batch(5, 6, 12, g);
  Generator d1(9), d2(9);
  Tape<double> t1, t2;
  const auto a = m.forward(t1, b.ids, b.mask, &d1).H.value();
  const auto c = m.forward(t2, b.ids, b.mask, &d2).H.value();
  EXPECT_TRUE(bitwise_equal(a.data(), c.data(), a.numel()));
}

TEST_P(EncoderConformance, GradientCheckOnTwoUserBatch) {
  auto m = make(5, 6, 9);
  Generator g(4);
  const auto b = random_batch(2, 5, 9, g, false);
  Tensor<double> dir(Shape{2, 5, 6});
  for (std::size_t i = 0; i < dir.numel(); ++i) dir[i] = g.normal();
  const auto loss = [&](Tape<double>& tape) {
    Generator drop(77);  // same dropout masks on every evaluation
    const auto out = m.forward(tape, b.ids, b.mask, &drop);
    auto proj = ops::sum(ops::mul(out.H, tape.constant(dir)));
    return ops::add(proj, ops::sum(ops::mul(out.last_state, out.last_state)));
  };
  const auto report = grad_check(loss, m.params(), 1e-6, 400, 5);
  EXPECT_GE(report.probes, 100u);
  EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_param << "[" << report.worst_index
                                        << "] analytic " << report.worst_analytic << " numeric "
                                        << report.worst_numeric;
}

TEST_P(EncoderConformance, LastStateMatchesBruteForceScan) {
  auto m = make(7, 4, 10);
  Generator g(6);
  for (int trial = 0; trial < 30; ++trial) {
    const auto b = random_batch(6, 7, 10, g);
    Tape<double> tape;
    const auto out = m.forward(tape, b.ids, b.mask, nullptr);
    const auto& H = out.H.value();
    const auto& L = out.last_state.value();
    for (std::size_t r = 0; r < 6; ++r) {
      int last = -1;
      for (std::size_t t = 0; t < 7; ++t) {
        if (b.mask[r * 7 + t]) last = static_cast<int>(t);
      }
      for (std::size_t d = 0; d < 4; ++d) {
        const double expect = last < 0 ? 0.0 : H.at(r, static_cast<std::size_t>(last), d);
        EXPECT_EQ(L.at(r, d), expect);
      }
    }
  }
}

TEST_P(EncoderConformance, AllPadRowHasZeroLastState) {
  auto m = make();
  std::vector<ItemId> ids(12, 0);
  std::vector<std::uint8_t> mask(12, 0);
  ids[11] = 3;
  mask[11] = 1;
  Tape<double> tape;
  const auto out = m.forward(tape, ids, mask, nullptr);
  for (std::size_t d = 0; d < 8; ++d) EXPECT_EQ(out.last_state.value().at(0, d), 0.0);
  EXPECT_NE(out.last_state.value().at(1, 0), 0.0);
}

TEST_P(EncoderConformance, InitialPaddingRowIsZero) {
  auto m = make();
  const auto& emb = m.params().get("item_emb");
  ASSERT_TRUE(emb.pinned_zero_row.has_value());
  for (std::size_t d = 0; d < 8; ++d) EXPECT_EQ(emb.value.at(0, d), 0.0);
}

INSTANTIATE_TEST_SUITE_P(Encoders, EncoderConformance,
                         ::testing::Values(EncoderKind::kAttention, EncoderKind::kRecurrent),
                         [](const auto& info) { return std::string(encoder_kind_name(info.param)); });

TEST(Lookup, PadRowsAreZeroAndUpdatesAreVisible) {
  Model<double> m(EncoderKind::kAttention, ModelDims{5, 3, 4, 1});
  Generator init(1);
  m.initialize(init);
  const std::vector<ItemId> ids{0, 0, 0, 0, 0, 2, 2, 4};
  Tape<double> tape;
  const auto E = m.lookup(m.item_table(tape), ids).value();
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(E[i], 0.0);
  EXPECT_EQ(E.at(1, 1, 2), m.params().get("item_emb").value.at(2, 2));

  m.params().get("item_emb").value.at(4, 0) = 42.0;
  Tape<double> tape2;
  EXPECT_EQ(m.lookup(m.item_table(tape2), ids).value().at(1, 3, 0), 42.0);
}

TEST(Lookup, SumGradientCountsOccurrences) {
  Model<double> m(EncoderKind::kRecurrent, ModelDims{6, 2, 5, 1});
  Generator init(2), g(3);
  m.initialize(init);
  std::vector<ItemId> ids(15);
  for (auto& v : ids) v = static_cast<ItemId>(g.below(7));
  m.params().zero_grad();
  Tape<double> tape;
  tape.backward(ops::sum(m.lookup(m.item_table(tape), ids)));
  const auto& grad = m.params().get("item_emb").grad;
  for (ItemId v = 0; v <= 6; ++v) {
    const double count = static_cast<double>(std::count(ids.begin(), ids.end(), v));
    EXPECT_EQ(grad.at(static_cast<std::size_t>(v), 0), count);
    EXPECT_EQ(grad.at(static_cast<std::size_t>(v), 1), count);
  }
}

TEST(Lookup, OutOfRangeIdIsIndexError) {
  Model<double> m(EncoderKind::kAttention, ModelDims{5, 3, 2, 1});
  Tape<double> tape;
  const std::vector<ItemId> ids{0, 6};
  EXPECT_THROW(m.lookup(m.item_table(tape), ids), IndexError);
}

TEST(Checkpoint, BitExactRoundTrip) {
  for (auto kind : {EncoderKind::kAttention, EncoderKind::kRecurrent}) {
    Model<float> m(kind, ModelDims{30, 8, 10, 2});
    Generator init(4);
    m.initialize(init);
    const auto bytes = encode_checkpoint(m);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "BASR");
    const auto back = decode_checkpoint(bytes);
    EXPECT_EQ(back.kind(), kind);
    EXPECT_EQ(back.dims().num_items, 30);
    ASSERT_EQ(back.params().size(), m.params().size());
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      const auto& a = m.params().params()[i].value;
      const auto& b = back.params().params()[i].value;
      ASSERT_EQ(a.shape(), b.shape());
      EXPECT_TRUE(bitwise_equal(a.data(), b.data(), a.numel()));
    }
    EXPECT_EQ(encode_checkpoint(back), bytes);

    const auto path = std::filesystem::temp_directory_path() / "basrec_ckpt_test.bin";
    save_checkpoint(path, m);
    EXPECT_EQ(encode_checkpoint(load_checkpoint(path)), bytes);
    std::filesystem::remove(path);
  }
}

TEST(Checkpoint, RejectsCorruption) {
  Model<float> m(EncoderKind::kRecurrent, ModelDims{5, 4, 3, 1});
  const auto bytes = encode_checkpoint(m);
  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), DataError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), DataError);
  auto kind = bytes;
  kind[8] = 9;
  EXPECT_THROW(decode_checkpoint(kind), DataError);
  EXPECT_THROW(load_checkpoint("/nonexistent/basrec.ckpt"), DataError);
}
