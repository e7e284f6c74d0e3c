#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "trusttune/encoder.hpp"
#include "trusttune/tensor.hpp"

namespace trusttune {

// Parameter checkpoint container, format "TTCKPT1" (little-endian):
//   magic[8] | u32 array_count
//   per array: u32 name_len, name bytes, u32 ndim, u64 dims..., f64 data...
//   u32 config_len, config JSON bytes
//   u64 FNV-1a hash of everything before this field
// The layout is stable across releases; loaders reject bad magic or hash.
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> arrays;
    std::string config_echo;  // JSON text
    std::uint64_t content_hash = 0;

    const Tensor& find(const std::string& name) const;
};

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& arrays,
                     const std::string& config_echo);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over a file's raw bytes; used by manifests and fingerprint checks.
std::uint64_t file_content_hash(const std::string& path);

// Encoder checkpoints: named parameter arrays plus a config echo.
void save_encoder_checkpoint(const std::string& path, const EncoderParams& params);
EncoderParams load_encoder_checkpoint(const std::string& path);

}  // namespace trusttune
