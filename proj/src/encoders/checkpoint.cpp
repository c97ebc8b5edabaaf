#include "basrec/encoders/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "basrec/errors.hpp"

namespace basrec::encoders {
namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

void put(std::vector<std::uint8_t>& out, std::uint64_t v, int width) {
  for (int i = 0; i < width; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint64_t read(int width) {
    if (pos_ + static_cast<std::size_t>(width) > bytes_.size()) throw DataError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(read(4)); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model) {
  std::vector<std::uint8_t> out{'B', 'A', 'S', 'R'};
  const auto& dims = model.dims();
  put(out, kCheckpointVersion, 4);
  put(out, static_cast<std::uint32_t>(model.kind()), 4);
  put(out, static_cast<std::uint32_t>(dims.num_items), 4);
  put(out, dims.dim, 4);
  put(out, dims.max_len, 4);
  put(out, dims.layers, 4);
  put(out, model.params().size(), 4);
  for (const auto& p : model.params().params()) {
    put(out, p.value.numel(), 8);
    for (std::size_t i = 0; i < p.value.numel(); ++i) put(out, std::bit_cast<std::uint32_t>(p.value[i]), 4);
  }
  return out;
}

Model<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, "BASR")) {
    throw DataError("checkpoint: bad magic");
  }
  Reader in(bytes.subspan(4));
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t kind = in.u32();
  if (kind != static_cast<std::uint32_t>(EncoderKind::kAttention) &&
      kind != static_cast<std::uint32_t>(EncoderKind::kRecurrent)) {
    throw DataError("checkpoint: unknown model kind " + std::to_string(kind));
  }
  ModelDims dims;
  dims.num_items = static_cast<std::int32_t>(in.u32());
  dims.dim = in.u32();
  dims.max_len = in.u32();
  dims.layers = in.u32();
  Model<float> model(static_cast<EncoderKind>(kind), dims);
  const std::uint32_t count = in.u32();
  if (count != model.params().size()) {
    throw DataError("checkpoint: expected " + std::to_string(model.params().size()) + " tensors, found " +
                    std::to_string(count));
  }
  for (auto& p : model.params().params()) {
    const std::uint64_t n = in.read(8);
    if (n != p.value.numel()) throw DataError("checkpoint: size mismatch for " + p.name);
    for (std::size_t i = 0; i < n; ++i) p.value[i] = std::bit_cast<float>(in.u32());
    if (!p.value.all_finite()) throw DataError("checkpoint: non-finite values in " + p.name);
  }
  if (!in.done()) throw DataError("checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("save_checkpoint: write failed for " + path.string());
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_checkpoint: cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace basrec::encoders
