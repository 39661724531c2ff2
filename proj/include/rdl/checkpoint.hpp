#pragma once

// "ckpt/1": magic "RDLB", u32 version, u32 entry count, then per entry
// u16 name length, UTF-8 name, u8 dtype (0 = f32, 1 = f64), u8 rank,
// rank x u32 dims, raw little-endian elements. All integers little-endian.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rdl/tensor.hpp"

namespace rdl::tg {

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

struct CheckpointEntry {
  std::string name;
  AnyTensor tensor;
  bool operator==(const CheckpointEntry &) const = default;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry *find(std::string_view name) const;
  bool operator==(const Checkpoint &) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint &ckpt);
/// Throws FormatError on bad magic, unknown version or dtype, truncation,
/// trailing bytes or duplicate names.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt);
Checkpoint load_checkpoint(const std::filesystem::path &path);

/// Entry converted to T (exact for f32 -> f64).
template <typename T>
Tensor<T> entry_as(const CheckpointEntry &entry) {
  return std::visit([](const auto &t) { return t.template cast<T>(); }, entry.tensor);
}

}  // namespace rdl::tg
