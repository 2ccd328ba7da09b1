#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajfield {

inline constexpr int kCheckpointFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kIo, kMalformedHeader, kVersionMismatch, kTruncated, kLengthMismatch };

  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct CheckpointBlock {
  std::string name;
  std::vector<float> values;

  bool operator==(const CheckpointBlock&) const = default;
};

/// On disk: u64 LE header byte length, UTF-8 JSON header, then each block as
/// little-endian float32 in header order. The header's "blocks" array
/// (name + count) is generated from `blocks` on save and stripped on load.
struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::vector<CheckpointBlock> blocks;

  const CheckpointBlock* find(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace trajfield
