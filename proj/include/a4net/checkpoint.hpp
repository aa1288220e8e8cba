#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <string>

namespace a4net {

inline constexpr uint32_t kCheckpointVersion = 1;

// Tensors are keyed "param/<module path>" for parameters and
// "optim/<module path>/{exp_avg,exp_avg_sq,step}" for AdamW moments.
// std::map keeps blocks in name order, so serialization is canonical.
struct Checkpoint {
  uint32_t format_version = kCheckpointVersion;
  nlohmann::json config;
  std::map<std::string, torch::Tensor> tensors;
  int64_t epoch = 0;
  std::string rng_state;
};

// Little-endian layout:
//   "A4NETCK\0" | u32 version | u32 crc32(payload) | u64 payload size | payload
// payload:
//   u64 len, config text | i64 epoch | u64 len, rng text | u64 block count |
//   blocks: u32 name len, name, u8 dtype (0 f32, 1 f64, 2 i64), u32 rank,
//           i64 dims[rank], raw element bytes
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// VersionError on a format mismatch, IntegrityError on a bad magic, size or
// checksum.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameters of `module` as "param/..." entries (cloned).
std::map<std::string, torch::Tensor> parameter_blocks(const torch::nn::Module& module);

// Copies every "param/..." entry into `module`. ConfigError when the names or
// shapes differ from the module's parameters.
void restore_parameters(torch::nn::Module& module, const Checkpoint& ckpt);

std::map<std::string, torch::Tensor> optimizer_blocks(const torch::nn::Module& module, torch::optim::AdamW& optimizer);
void restore_optimizer(const torch::nn::Module& module, torch::optim::AdamW& optimizer, const Checkpoint& ckpt);

}  // namespace a4net
