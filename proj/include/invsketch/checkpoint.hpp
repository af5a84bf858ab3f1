#pragma once

// Single-file model archive.
//
// Layout: "ISCK" | uint32 version | uint64 header_bytes | JSON header |
// float64 payload. The header carries the model kind, its config, the
// iteration counter and one {name, shape, offset} entry per tensor block.

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "invsketch/nn.hpp"

namespace invsketch {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  long iteration = 0;
  std::map<std::string, Tensor> blocks;
};

// Parameters, buffers and optional extra blocks (e.g. optimiser state).
Checkpoint snapshot(nn::Module& module, const std::string& kind, nlohmann::json config, long iteration);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies matching blocks into the module; every parameter and buffer must be
// present with the same shape.
void restore(nn::Module& module, const Checkpoint& ckpt, const std::string& prefix = "");

// Lower-case hex SHA-256.
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);
// Digest over every parameter and buffer (names, shapes and values) in order.
std::string module_fingerprint(nn::Module& module);

// Flat "key = value" config files; '#' starts a comment.
std::map<std::string, std::string> read_kv_file(const std::string& path);
std::map<std::string, std::string> parse_kv(const std::string& text, const std::string& origin = "<string>");

}  // namespace invsketch
