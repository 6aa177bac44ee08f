#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pmce/feature_store.hpp"
#include "pmce/types.hpp"

namespace pmce {

inline constexpr int kBankVersion = 1;

/// Per-base-class visual means and class-name embeddings.
///
/// Values are held in double precision but are always exactly representable
/// as 32-bit floats, so a save/load round trip is lossless.
struct KnowledgeBank {
  std::vector<std::string> class_names;
  Matrix means;      // |C_b| x d_v
  Matrix name_embs;  // |C_b| x d_t

  std::size_t size() const noexcept { return class_names.size(); }
  std::size_t d_v() const noexcept { return static_cast<std::size_t>(means.cols()); }
  std::size_t d_t() const noexcept { return static_cast<std::size_t>(name_embs.cols()); }

  void validate() const;

  friend bool operator==(const KnowledgeBank& a, const KnowledgeBank& b);
};

/// Class means accumulated in double, then rounded to float.
KnowledgeBank build_bank(const DatasetSplit& base);

/// Writes `bank.json`, `bank.means` and `bank.names_emb` into `dir`.
void save_bank(const KnowledgeBank& bank, const std::filesystem::path& dir);
KnowledgeBank load_bank(const std::filesystem::path& dir);

}  // namespace pmce
