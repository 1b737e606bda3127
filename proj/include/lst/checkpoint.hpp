#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "lst/config.hpp"
#include "lst/label_graph.hpp"
#include "lst/model.hpp"

namespace lst {

/// A trained tagger plus what is needed to rebuild its forward pass. A
/// fine-tuned model also carries the frozen source conditional table from
/// which its source label graph is rebuilt.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  TrainConfig config;
  TaggerModel model;
  std::optional<ConditionalTable> source_table;

  /// Throws InputError when no source table is stored.
  LabelGraph source_graph() const;
};

/// Layout: 8-byte magic "LSTCKPT\0", u32 version, u64-length-prefixed JSON
/// header (config, model layout, vocabulary, source table metadata), u32
/// block count, then per block a u32-length-prefixed name, u64 rows, u64 cols
/// and rows*cols little-endian f64 values. Integers are little-endian.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace lst
