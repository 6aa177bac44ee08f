#pragma once

// Parameter checkpoint file:
//
//   u64 LE   header length H
//   H bytes  UTF-8 JSON header: version, config, seed, tensors [{name, shape}],
//            blob_bytes, blob_fnv1a
//   blob     little-endian f64 values of every tensor in header order
//
// Enhancer tensors come first (see for_each_tensor); a trained checkpoint
// appends the auxiliary classifier as "classifier.w_c" and "classifier.b_c".

#include <cstdint>
#include <filesystem>
#include <optional>

#include "pmce/binary_io.hpp"
#include "pmce/enhancer.hpp"
#include "pmce/objectives.hpp"

namespace pmce {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  EnhancerModel enhancer;
  std::uint64_t seed = 0;
  std::optional<ClassifierParams> classifier;
};

Bytes encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::byte> bytes, const std::string& context = "checkpoint");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pmce
