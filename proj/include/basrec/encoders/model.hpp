#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "basrec/datapipe/dataset.hpp"
#include "basrec/numkernel/param_store.hpp"
#include "basrec/numkernel/rng.hpp"
#include "basrec/numkernel/tape.hpp"

namespace basrec::encoders {

using datapipe::ItemId;

enum class EncoderKind : std::uint32_t { kAttention = 1, kRecurrent = 2 };

EncoderKind parse_encoder_kind(std::string_view name);
std::string_view encoder_kind_name(EncoderKind kind);

struct ModelDims {
  std::int32_t num_items = 0;  // |V|; the table has |V|+1 rows
  std::size_t dim = 64;
  std::size_t max_len = 50;
  std::size_t layers = 2;  // attention blocks; the recurrent encoder has one layer
};

template <typename Real>
struct EncoderOutput {
  Var<Real> H;           // [rows, N, D]
  Var<Real> last_state;  // [rows, D]
};

/// Item embedding table plus one sequence encoder. Both encoders map
/// [rows, N, D] item representations and a validity mask to [rows, N, D]
/// with position t depending only on positions <= t.
template <typename Real>
class Model {
 public:
  Model(EncoderKind kind, ModelDims dims, double dropout = 0.2);

  /// Fresh random weights; the padding row is zero.
  void initialize(Generator& rng);

  EncoderKind kind() const { return kind_; }
  const ModelDims& dims() const { return dims_; }
  double dropout() const { return dropout_; }
  void set_dropout(double p) { dropout_ = p; }

  ParamStore<Real>& params() { return store_; }
  const ParamStore<Real>& params() const { return store_; }

  /// Binds the item table M_V ([|V|+1, D]) to the tape.
  Var<Real> item_table(Tape<Real>& tape);

  /// E[r, t, :] = M_V[ids[r*N + t], :]; ids.size() must be rows * N.
  Var<Real> lookup(Var<Real> table, std::span<const ItemId> ids) const;

  /// Sequence encoder. dropout_rng == nullptr means inference (no dropout).
  Var<Real> encode(Var<Real> E, std::span<const std::uint8_t> mask, Generator* dropout_rng);

  /// lookup + encode + last_state in one call.
  EncoderOutput<Real> forward(Tape<Real>& tape, std::span<const ItemId> ids,
                              std::span<const std::uint8_t> mask, Generator* dropout_rng);

  template <typename Other>
  Model<Other> cast() const {
    Model<Other> out(kind_, dims_, dropout_);
    out.params() = store_.template cast<Other>();
    return out;
  }

 private:
  Var<Real> encode_attention(Var<Real> E, std::span<const std::uint8_t> mask, Generator* rng);
  Var<Real> encode_recurrent(Var<Real> E, std::span<const std::uint8_t> mask, Generator* rng);

  EncoderKind kind_;
  ModelDims dims_;
  double dropout_;
  ParamStore<Real> store_;
};

/// Column of the final valid position in each row of a [rows, N] mask, or
/// ops::kNoPosition for an all-pad row.
std::vector<std::size_t> last_positions(std::span<const std::uint8_t> mask, std::size_t max_len);

/// H gathered at each row's final valid position; zero for all-pad rows.
template <typename Real>
Var<Real> last_state(Var<Real> H, std::span<const std::uint8_t> mask);

/// Mask bytes as per-position real factors for ops::mask_positions.
template <typename Real>
std::vector<Real> mask_factors(std::span<const std::uint8_t> mask);

}  // namespace basrec::encoders
