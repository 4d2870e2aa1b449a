#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "paramscope/model.hpp"

namespace paramscope {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Checkpoint layout, all integers little-endian:
///
///   "PSCP"            4-byte magic
///   u32 version       kCheckpointVersion
///   u64 seed          trial seed
///   u32 n, n bytes    ModelSpec JSON
///   u32 count         parameter records follow
///   per record:
///     u32 n, n bytes  parameter name
///     u32 rank, rank x u64 dims
///     prod(dims) x f64 IEEE-754 values
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Model& model, std::uint64_t seed);
Model decode_checkpoint(std::span<const std::uint8_t> bytes, std::uint64_t* seed = nullptr);

void save_checkpoint(const Model& model, std::uint64_t seed, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path, std::uint64_t* seed = nullptr);

}  // namespace paramscope
