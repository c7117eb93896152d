#pragma once

// Binary checkpoint container:
//   "LSRE-CKPT-v1"            12 bytes magic
//   u64 block_count
//   per block: u64 name_len, name bytes, u64 ndim, u64 dims[ndim], f64 values[prod(dims)]
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lsre/error.hpp"
#include "lsre/tensor_core.hpp"

namespace lsre {

inline constexpr std::string_view kCheckpointMagic = "LSRE-CKPT-v1";

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

inline void put_f64(std::string& out, double v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

  std::string_view bytes(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at offset " + std::to_string(pos_) + " while reading " + what);
    }
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint64_t u64(const char* what) {
    std::uint64_t v = 0;
    std::memcpy(&v, bytes(8, what).data(), 8);
    return v;
  }

  double f64(const char* what) {
    double v = 0;
    std::memcpy(&v, bytes(8, what).data(), 8);
    return v;
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<const ParamBlock*>& blocks) {
  std::string out(kCheckpointMagic);
  detail::put_u64(out, blocks.size());
  for (const ParamBlock* b : blocks) {
    detail::put_u64(out, b->name.size());
    out += b->name;
    detail::put_u64(out, b->shape.size());
    for (std::size_t d : b->shape) detail::put_u64(out, d);
    for (double v : b->values) detail::put_f64(out, v);
  }
  return out;
}

// Decoded blocks keyed by name; grads are zero.
inline std::map<std::string, ParamBlock> decode_checkpoint(std::string_view data) {
  detail::Reader in(data);
  const auto magic = in.bytes(kCheckpointMagic.size(), "magic");
  if (magic != kCheckpointMagic) {
    for (std::size_t i = 0; i < magic.size(); ++i) {
      if (magic[i] != kCheckpointMagic[i]) {
        throw FormatError("bad checkpoint magic at offset " + std::to_string(i) + " (expected \"" +
                          std::string(kCheckpointMagic) + "\")");
      }
    }
  }
  const std::uint64_t count = in.u64("block count");
  std::map<std::string, ParamBlock> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::size_t at = in.offset();
    const std::uint64_t name_len = in.u64("name length");
    if (name_len > 4096) throw FormatError("implausible block name length at offset " + std::to_string(at));
    std::string name(in.bytes(name_len, "block name"));
    const std::uint64_t ndim = in.u64("rank");
    if (ndim > 8) throw FormatError("implausible rank for block '" + name + "' at offset " + std::to_string(at));
    std::vector<std::size_t> shape;
    std::uint64_t n = 1;
    for (std::uint64_t d = 0; d < ndim; ++d) {
      shape.push_back(in.u64("dimension"));
      n *= shape.back();
    }
    if (n > (1ULL << 28)) throw FormatError("implausible size for block '" + name + "'");
    ParamBlock block(name, shape);
    for (std::uint64_t i = 0; i < n; ++i) block.values[i] = in.f64("values");
    if (!all_finite(block.values)) throw FormatError("non-finite values in block '" + name + "'");
    if (out.count(name) != 0) throw FormatError("duplicate block '" + name + "' at offset " + std::to_string(at));
    out.emplace(name, std::move(block));
  }
  if (!in.done()) throw FormatError("trailing bytes after offset " + std::to_string(in.offset()));
  return out;
}

inline void write_checkpoint(const std::string& path, const std::vector<const ParamBlock*>& blocks) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  const std::string bytes = encode_checkpoint(blocks);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing checkpoint: " + path);
}

inline std::map<std::string, ParamBlock> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

// Copies values from `source` into the matching live blocks; names and shapes must agree.
inline void load_blocks(const std::map<std::string, ParamBlock>& source, const ParamRefs& targets) {
  for (ParamBlock* t : targets) {
    auto it = source.find(t->name);
    if (it == source.end()) throw FormatError("checkpoint lacks block '" + t->name + "'");
    if (it->second.shape != t->shape) throw FormatError("shape mismatch for block '" + t->name + "'");
    t->values = it->second.values;
    t->zero_grad();
    ++t->revision;
  }
}

}  // namespace lsre
