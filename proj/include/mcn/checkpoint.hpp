#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mcn/meta.hpp"
#include "mcn/params.hpp"

namespace mcn {

// Binary snapshot, little-endian throughout:
//   magic "MCNC" | u32 version | u32 len + config bytes (sorted k=v lines) |
//   u64 rng state | u8 has-moments [ u64 adam-t | tensor table ] |
//   tensor table | 32-byte SHA-256 of everything before it.
// Tensor table: u32 count, then per entry u32 name-len, name bytes, u32 ndim,
// u64 dims, u8 dtype (0 f32 / 1 f64), raw element bytes.
struct Checkpoint {
    static constexpr uint32_t kVersion = 1;

    std::vector<std::pair<std::string, std::string>> config;  // sorted by key
    uint64_t rng_state = 0;
    std::optional<AdamState> moments;
    ParamSet params;

    std::string config_value(const std::string& key) const;
    bool has_config(const std::string& key) const;
};

// Returns the hex digest that was written as the file trailer.
std::string save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);

}  // namespace mcn
