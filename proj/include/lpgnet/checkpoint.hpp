#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpgnet/model.hpp"
#include "lpgnet/train.hpp"

namespace lpgnet {

// File layout: 8-byte magic "LPGCKPT\0", u32 version, u64 manifest length,
// manifest JSON, then every tensor as little-endian float64 in manifest order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string arch;
  ModelConfig model_config;
  nlohmann::json train_config;  // snapshot, informational
  std::size_t epoch = 0;
  std::vector<EpochRecord> history;
  std::vector<std::pair<std::string, std::vector<double>>> tensors;
  BufferStore buffers;

  static Checkpoint capture(const Model& model, const nlohmann::json& train_config, std::size_t epoch,
                            std::vector<EpochRecord> history);
  /// Rebuilds the model and loads every tensor. SchemaError on missing or mis-sized entries.
  std::unique_ptr<Model> instantiate() const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// SchemaError on a bad magic, version or truncated payload.
Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lpgnet
