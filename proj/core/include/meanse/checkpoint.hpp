#pragma once

// Binary checkpoint container.
//
// Layout, all integers and doubles little-endian:
//
//   magic      8 bytes  "MSECKPT\0"
//   version    u32      (currently 1)
//   mode       u8       0 = flow, 1 = meanflow
//   geometry   u64 x 5  n_bins, patch_frames, hidden, blocks, embed_dim
//              f64      fourier_scale
//   meta       u64      seed
//              i32      curriculum stage (-1 outside a curriculum)
//              f64 x 4  max_width, flow_ratio, val_loss, sigma
//              u64      step
//              u32 x 3  n_fft, hop, sample_rate_hz
//              f64      spec_scale
//   freqs      u64 count, f64 x count
//   arrays     u64 count, then per array:
//                u32 name length, name bytes, u32 rank, u64 x rank dims, f64 payload
//   checksum   u64      FNV-1a over every preceding byte

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "meanse/network.hpp"

namespace meanse::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

/// Corrupt, truncated or incompatible checkpoint data.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::int32_t stage = -1;
  double max_width = 0.0;
  double flow_ratio = 1.0;
  double val_loss = 0.0;
  double sigma = 0.5;
  std::uint64_t step = 0;
  std::uint32_t n_fft = 0;
  std::uint32_t hop = 0;
  std::uint32_t sample_rate_hz = 0;
  double spec_scale = 1.0;
};

struct NetworkCheckpoint {
  net::VelocityNetwork network;
  CheckpointMeta meta;
};

std::vector<std::uint8_t> serialize(const NetworkCheckpoint& ckpt);
NetworkCheckpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save(const std::filesystem::path& path, const NetworkCheckpoint& ckpt);
NetworkCheckpoint load(const std::filesystem::path& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size, std::uint64_t hash = 0xcbf29ce484222325ull);

}  // namespace meanse::ckpt
