#pragma once

// Directory store of precomputed embeddings.
//
// Layout (all little-endian):
//   manifest.json         version, d_v, d_t, per-split counts and checksums
//   <split>.records       per record: u32 class_id, d_v f32 visual, d_t f32 caption
//   <split>.names         num_classes rows of d_t f32 class-name embeddings
//
// Checksums are 64-bit FNV-1a over each binary file, stored as hex.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pmce/binary_io.hpp"
#include "pmce/types.hpp"

namespace pmce {

inline constexpr int kStoreVersion = 1;

/// The split names a store may contain, in canonical order.
inline constexpr std::string_view kSplitNames[] = {"base", "validation", "novel"};

struct FeatureRecord {
  std::uint32_t class_id = 0;
  VectorF visual;       // d_v
  VectorF caption_emb;  // d_t

  friend bool operator==(const FeatureRecord& a, const FeatureRecord& b);
};

struct DatasetSplit {
  std::string name;
  std::vector<std::string> class_names;
  MatrixF name_embs;  // num_classes x d_t
  std::vector<FeatureRecord> records;

  std::size_t num_classes() const noexcept { return class_names.size(); }
  std::size_t d_v() const;
  std::size_t d_t() const noexcept { return static_cast<std::size_t>(name_embs.cols()); }

  /// Indices into `records` grouped by class id.
  std::vector<std::vector<std::size_t>> records_by_class() const;

  /// Checks every invariant of a split: known name, consistent dims, finite
  /// values, class ids in range, at least one record per class.
  void validate() const;

  friend bool operator==(const DatasetSplit& a, const DatasetSplit& b);
};

struct SplitSummary {
  std::size_t num_classes = 0;
  std::size_t num_records = 0;
  std::vector<std::string> class_names;
  std::string records_fnv1a;
  std::string names_fnv1a;

  friend bool operator==(const SplitSummary&, const SplitSummary&) = default;
};

struct StoreManifest {
  int version = kStoreVersion;
  std::size_t d_v = 0;
  std::size_t d_t = 0;
  std::map<std::string, SplitSummary> splits;

  friend bool operator==(const StoreManifest&, const StoreManifest&) = default;
};

struct Store {
  StoreManifest manifest;
  std::vector<DatasetSplit> splits;  // canonical order, only those present

  const DatasetSplit& split(std::string_view name) const;
  bool has_split(std::string_view name) const;
};

/// Record file bytes for a split; size is num_records * (4 + 4 * (d_v + d_t)).
Bytes encode_records(const DatasetSplit& split);
Bytes encode_names(const DatasetSplit& split);

/// Writes `manifest.json` plus the binary files for every split. Creates
/// `dir` if needed.
StoreManifest write_store(std::span<const DatasetSplit> splits, const std::filesystem::path& dir);

/// Reads and verifies a store written by write_store.
Store read_store(const std::filesystem::path& dir);

}  // namespace pmce
