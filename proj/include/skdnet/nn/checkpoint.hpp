#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "skdnet/core.hpp"
#include "skdnet/nn/model.hpp"

namespace skd::nn {

/// SKD1 checkpoint (little-endian):
///   "SKD1", u32 version (= 1),
///   u32 n, n bytes of JSON metadata (model config under "model", plus the
///          caller's config echo),
///   u32 C, C x f64 channel means, C x f64 channel std devs,
///   u32 tensor count, then per tensor:
///     u32 name length, name bytes, u32 ndim, ndim x u32 dims, f32 data.
struct Checkpoint {
  Model<float> model;
  ChannelStats stats;
  nlohmann::json meta;  // caller-provided echo (training config, band, ...)
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace skd::nn
