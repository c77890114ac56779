#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdom/nn.hpp"

namespace tdom::ckpt {

inline constexpr uint16_t kVersion = 1;

// Named-tensor container persisted as: magic "TDOM", u16 version, u32
// manifest length, manifest text (config hash, mode, payload digest,
// tensor directory), then all arrays as little-endian 32-bit floats.
struct Checkpoint {
  uint16_t version = kVersion;
  std::string config_hash;
  std::string mode;
  struct Entry {
    std::string name;
    grad::Shape shape;
    std::vector<float> data;
  };
  std::vector<Entry> tensors;
};

Checkpoint from_params(const grad::ParamStore<float>& ps,
                       const std::string& config_hash,
                       const std::string& mode);

// Copies tensor data into a store with identical names and shapes.
void to_params(const Checkpoint& c, grad::ParamStore<float>& ps);

// Atomic: the file appears under its final name only when complete.
void write_checkpoint(const std::string& path, const Checkpoint& c);

Checkpoint read_checkpoint(const std::string& path);

// Rejects checkpoints from a different config or ablation mode. Empty
// expectations skip that comparison.
void check_compat(const Checkpoint& c, const std::string& expected_hash,
                  const std::string& expected_mode);

}  // namespace tdom::ckpt
