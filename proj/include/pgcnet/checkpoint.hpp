#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pgcnet/network.hpp"
#include "pgcnet/optimizer.hpp"

namespace pgcnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
};

/// Binary layout (little-endian):
///   "PGCNCKPT" | u32 version | str network-config JSON | u32 n | n x param
///   | str optimizer-config JSON | u64 optimizer steps | u32 m | m x (u64 len, f32[len])
///   | str weight-rng state | str crop-rng state | u64 epoch | u64 step
/// with str = u64 length + bytes and param = str name | u32 rank | i32[rank] | u64 len | f32[len].
struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    NetworkConfig network;
    std::vector<NamedArray> params;
    RmsPropConfig optimizer;
    std::uint64_t optimizer_steps = 0;
    std::vector<std::vector<float>> optimizer_state;
    std::string weight_rng_state;
    std::string crop_rng_state;
    std::uint64_t epoch = 0;
    std::uint64_t step = 0;
};

Checkpoint capture_checkpoint(Network<float>& net, const RmsProp<float>* optimizer = nullptr);
/// Copies parameters into `net`. Throws ConfigError when the network config differs and
/// ShapeError when names or shapes disagree.
void restore_parameters(Network<float>& net, const Checkpoint& ckpt);
Network<float> network_from_checkpoint(const Checkpoint& ckpt);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64-bit digest of a file, hex encoded.
std::string file_digest(const std::filesystem::path& path);

}  // namespace pgcnet
