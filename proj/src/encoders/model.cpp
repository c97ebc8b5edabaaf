#include "basrec/encoders/model.hpp"

#include <cmath>
#include <string>

#include "basrec/errors.hpp"
#include "basrec/numkernel/ops.hpp"

namespace basrec::encoders {
namespace {

constexpr double kLayerNormEps = 1e-8;

std::string block_name(std::size_t l, const char* what) {
  return "block" + std::to_string(l) + "." + what;
}

template <typename Real>
void fill_normal(Tensor<Real>& t, Generator& rng, double stddev) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<Real>(stddev * rng.normal());
}

template <typename Real>
void fill_uniform(Tensor<Real>& t, Generator& rng, double bound) {
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<Real>(bound * (2.0 * rng.uniform01() - 1.0));
}

}  // namespace

EncoderKind parse_encoder_kind(std::string_view name) {
  if (name == "attention") return EncoderKind::kAttention;
  if (name == "recurrent") return EncoderKind::kRecurrent;
  throw ConfigError("unknown encoder '" + std::string(name) + "' (expected attention or recurrent)");
}

std::string_view encoder_kind_name(EncoderKind kind) {
  return kind == EncoderKind::kAttention ? "attention" : "recurrent";
}

std::vector<std::size_t> last_positions(std::span<const std::uint8_t> mask, std::size_t max_len) {
  if (max_len == 0 || mask.size() % max_len != 0) throw ShapeError("last_positions: mask size not a multiple of N");
  const std::size_t rows = mask.size() / max_len;
  std::vector<std::size_t> out(rows, ops::kNoPosition);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = max_len; t > 0; --t) {
      if (mask[r * max_len + t - 1]) {
        out[r] = t - 1;
        break;
      }
    }
  }
  return out;
}

template <typename Real>
Var<Real> last_state(Var<Real> H, std::span<const std::uint8_t> mask) {
  const auto idx = last_positions(mask, H.shape().at(1));
  return ops::take_positions(H, std::span<const std::size_t>(idx));
}

template <typename Real>
std::vector<Real> mask_factors(std::span<const std::uint8_t> mask) {
  std::vector<Real> out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? Real{1} : Real{0};
  return out;
}

template <typename Real>
Model<Real>::Model(EncoderKind kind, ModelDims dims, double dropout)
    : kind_(kind), dims_(dims), dropout_(dropout) {
  if (dims.num_items < 1) throw ConfigError("model: num_items must be positive");
  if (dims.dim < 1 || dims.max_len < 1) throw ConfigError("model: dim and max_len must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0, 1)");
  const std::size_t V = static_cast<std::size_t>(dims.num_items) + 1;
  const std::size_t D = dims.dim;
  store_.add("item_emb", {V, D}).pinned_zero_row = 0;
  if (kind == EncoderKind::kAttention) {
    if (dims.layers < 1) throw ConfigError("model: attention encoder needs at least one block");
    store_.add("pos_emb", {dims.max_len, D});
    for (std::size_t l = 0; l < dims.layers; ++l) {
      store_.add(block_name(l, "ln1_gain"), {D});
      store_.add(block_name(l, "ln1_bias"), {D});
      // No key bias: it shifts every score of a query row equally, so softmax
      // ignores it and its gradient is identically zero.
      store_.add(block_name(l, "wq"), {D, D});
      store_.add(block_name(l, "bq"), {D});
      store_.add(block_name(l, "wk"), {D, D});
      store_.add(block_name(l, "wv"), {D, D});
      store_.add(block_name(l, "bv"), {D});
      store_.add(block_name(l, "wo"), {D, D});
      store_.add(block_name(l, "bo"), {D});
      store_.add(block_name(l, "ln2_gain"), {D});
      store_.add(block_name(l, "ln2_bias"), {D});
      store_.add(block_name(l, "ffn_w1"), {D, 4 * D});
      store_.add(block_name(l, "ffn_b1"), {4 * D});
      store_.add(block_name(l, "ffn_w2"), {4 * D, D});
      store_.add(block_name(l, "ffn_b2"), {D});
    }
    store_.add("final_ln_gain", {D});
    store_.add("final_ln_bias", {D});
  } else {
    dims_.layers = 1;
    store_.add("gru_wx", {D, 3 * D});
    store_.add("gru_bx", {3 * D});
    store_.add("gru_wh", {D, 3 * D});
    store_.add("gru_bh", {3 * D});
  }
}

template <typename Real>
void Model<Real>::initialize(Generator& rng) {
  const double D = static_cast<double>(dims_.dim);
  for (auto& p : store_.params()) {
    const auto& shape = p.value.shape();
    const bool is_gain = p.name.find("gain") != std::string::npos;
    if (p.name == "item_emb" || p.name == "pos_emb") {
      fill_normal(p.value, rng, 1.0 / std::sqrt(D));
    } else if (shape.size() == 2) {
      // Glorot uniform for dense weights.
      fill_uniform(p.value, rng, std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1])));
    } else {
      p.value.fill(is_gain ? Real{1} : Real{0});
    }
    if (p.pinned_zero_row) {
      const std::size_t cols = shape[1];
      for (std::size_t j = 0; j < cols; ++j) p.value[*p.pinned_zero_row * cols + j] = Real{0};
    }
  }
}

template <typename Real>
Var<Real> Model<Real>::item_table(Tape<Real>& tape) {
  return store_.bind(tape, "item_emb");
}

template <typename Real>
Var<Real> Model<Real>::lookup(Var<Real> table, std::span<const ItemId> ids) const {
  const std::size_t N = dims_.max_len;
  if (ids.size() % N != 0) throw ShapeError("lookup: id count not a multiple of N");
  return ops::gather_rows(table, ids, Shape{ids.size() / N, N});
}

template <typename Real>
Var<Real> Model<Real>::encode(Var<Real> E, std::span<const std::uint8_t> mask, Generator* dropout_rng) {
  const auto& s = E.shape();
  if (s.size() != 3 || s[1] != dims_.max_len || s[2] != dims_.dim || mask.size() != s[0] * s[1]) {
    throw ShapeError("encode: expected [rows, " + std::to_string(dims_.max_len) + ", " +
                     std::to_string(dims_.dim) + "] with matching mask, got " + shape_str(s));
  }
  return kind_ == EncoderKind::kAttention ? encode_attention(E, mask, dropout_rng)
                                          : encode_recurrent(E, mask, dropout_rng);
}

template <typename Real>
Var<Real> Model<Real>::encode_attention(Var<Real> E, std::span<const std::uint8_t> mask, Generator* rng) {
  Tape<Real>& tape = *E.tape;
  const std::size_t rows = E.shape()[0];
  const std::size_t N = dims_.max_len;
  const std::size_t D = dims_.dim;
  const auto factors = mask_factors<Real>(mask);
  const std::span<const Real> keep(factors);
  auto p = [&](const std::string& name) { return store_.bind(tape, name); };

  // Positional rows broadcast over the batch through a gather.
  std::vector<std::int32_t> pos_ids(rows * N);
  for (std::size_t i = 0; i < pos_ids.size(); ++i) pos_ids[i] = static_cast<std::int32_t>(i % N);
  Var<Real> x = ops::add(E, ops::gather_rows(p("pos_emb"), std::span<const std::int32_t>(pos_ids), Shape{rows, N}));
  x = ops::mask_positions(ops::dropout(x, dropout_, rng), keep);

  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  for (std::size_t l = 0; l < dims_.layers; ++l) {
    auto b = [&](const char* what) { return p(block_name(l, what)); };
    Var<Real> h = ops::layer_norm(x, b("ln1_gain"), b("ln1_bias"), kLayerNormEps);
    Var<Real> q = ops::add_bias(ops::matmul(h, b("wq")), b("bq"));
    Var<Real> k = ops::matmul(h, b("wk"));
    Var<Real> v = ops::add_bias(ops::matmul(h, b("wv")), b("bv"));
    Var<Real> attn = ops::masked_softmax(ops::scores_qk(q, k, scale), mask, true);
    Var<Real> a = ops::add_bias(ops::matmul(ops::attend(attn, v), b("wo")), b("bo"));
    x = ops::add(x, ops::dropout(a, dropout_, rng));

    h = ops::layer_norm(x, b("ln2_gain"), b("ln2_bias"), kLayerNormEps);
    Var<Real> f = ops::relu(ops::add_bias(ops::matmul(h, b("ffn_w1")), b("ffn_b1")));
    f = ops::add_bias(ops::matmul(ops::dropout(f, dropout_, rng), b("ffn_w2")), b("ffn_b2"));
    x = ops::mask_positions(ops::add(x, ops::dropout(f, dropout_, rng)), keep);
  }
  return ops::mask_positions(ops::layer_norm(x, p("final_ln_gain"), p("final_ln_bias"), kLayerNormEps), keep);
}

template <typename Real>
Var<Real> Model<Real>::encode_recurrent(Var<Real> E, std::span<const std::uint8_t> mask, Generator* rng) {
  Tape<Real>& tape = *E.tape;
  const std::size_t rows = E.shape()[0];
  const std::size_t N = dims_.max_len;
  const std::size_t D = dims_.dim;
  Var<Real> wh = store_.bind(tape, "gru_wh");
  Var<Real> bh = store_.bind(tape, "gru_bh");

  Var<Real> x = ops::dropout(E, dropout_, rng);
  Var<Real> gx = ops::add_bias(ops::matmul(x, store_.bind(tape, "gru_wx")), store_.bind(tape, "gru_bx"));

  Var<Real> h = tape.constant(Tensor<Real>(Shape{rows, D}));
  std::vector<Var<Real>> states;
  states.reserve(N);
  std::vector<std::uint8_t> step_mask(rows);
  for (std::size_t t = 0; t < N; ++t) {
    for (std::size_t r = 0; r < rows; ++r) step_mask[r] = mask[r * N + t];
    Var<Real> gx_t = ops::slice_time(gx, t);
    Var<Real> gh = ops::add_bias(ops::matmul(h, wh), bh);
    Var<Real> r = ops::sigmoid(ops::add(ops::slice_cols(gx_t, 0, D), ops::slice_cols(gh, 0, D)));
    Var<Real> z = ops::sigmoid(ops::add(ops::slice_cols(gx_t, D, D), ops::slice_cols(gh, D, D)));
    Var<Real> n = ops::tanh(ops::add(ops::slice_cols(gx_t, 2 * D, D), ops::mul(r, ops::slice_cols(gh, 2 * D, D))));
    Var<Real> h_new = ops::add(n, ops::mul(z, ops::sub(h, n)));
    // Pad positions carry the previous state through unchanged.
    h = ops::select_rows(h_new, h, std::span<const std::uint8_t>(step_mask));
    states.push_back(h);
  }
  return ops::stack_time(std::span<const Var<Real>>(states));
}

template <typename Real>
EncoderOutput<Real> Model<Real>::forward(Tape<Real>& tape, std::span<const ItemId> ids,
                                         std::span<const std::uint8_t> mask, Generator* dropout_rng) {
  Var<Real> E = lookup(item_table(tape), ids);
  Var<Real> H = encode(E, mask, dropout_rng);
  return {H, last_state(H, mask)};
}

template class Model<float>;
template class Model<double>;
template Var<float> last_state(Var<float>, std::span<const std::uint8_t>);
template Var<double> last_state(Var<double>, std::span<const std::uint8_t>);
template std::vector<float> mask_factors<float>(std::span<const std::uint8_t>);
template std::vector<double> mask_factors<double>(std::span<const std::uint8_t>);

}  // namespace basrec::encoders
