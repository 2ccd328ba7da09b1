#include "trajfield/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace trajfield {

namespace {

using Kind = CheckpointError::Kind;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  const auto v = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

float get_f32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(v);
}

}  // namespace

const CheckpointBlock* Checkpoint::find(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return &b;
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header = ckpt.header;
  if (!header.contains("format_version")) header["format_version"] = kCheckpointFormatVersion;
  header["blocks"] = nlohmann::json::array();
  for (const auto& b : ckpt.blocks)
    header["blocks"].push_back({{"name", b.name}, {"count", b.values.size()}, {"dtype", "f32le"}});
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  std::size_t total = 8 + text.size();
  for (const auto& b : ckpt.blocks) total += 4 * b.values.size();
  out.reserve(total);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& b : ckpt.blocks)
    for (float f : b.values) put_f32(out, f);
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw CheckpointError(Kind::kTruncated, "checkpoint: file too short for its header length");
  const std::uint64_t header_len = get_u64(bytes.data());
  if (header_len > bytes.size() - 8)
    throw CheckpointError(Kind::kTruncated, "checkpoint: file ends inside the header");

  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::kMalformedHeader, std::string("checkpoint: bad header: ") + e.what());
  }
  if (!ckpt.header.is_object() || !ckpt.header.contains("format_version") ||
      !ckpt.header["format_version"].is_number_integer())
    throw CheckpointError(Kind::kMalformedHeader, "checkpoint: header has no format_version");
  const int version = ckpt.header["format_version"].get<int>();
  if (version != kCheckpointFormatVersion)
    throw CheckpointError(Kind::kVersionMismatch,
                          "checkpoint: format version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointFormatVersion));

  const nlohmann::json list = ckpt.header.value("blocks", nlohmann::json::array());
  if (!list.is_array()) throw CheckpointError(Kind::kMalformedHeader, "checkpoint: blocks is not a list");
  std::uint64_t declared = 0;
  for (const auto& b : list) {
    if (!b.contains("name") || !b.contains("count") || !b["count"].is_number_unsigned())
      throw CheckpointError(Kind::kMalformedHeader, "checkpoint: bad block entry");
    declared += 4 * b["count"].get<std::uint64_t>();
  }
  const std::uint64_t present = bytes.size() - 8 - header_len;
  if (present != declared)
    throw CheckpointError(Kind::kLengthMismatch,
                          "checkpoint: header declares " + std::to_string(declared) +
                              " block bytes, file holds " + std::to_string(present));

  const std::uint8_t* p = bytes.data() + 8 + header_len;
  for (const auto& b : list) {
    CheckpointBlock block;
    block.name = b["name"].get<std::string>();
    block.values.resize(b["count"].get<std::size_t>());
    for (float& f : block.values) {
      f = get_f32(p);
      p += 4;
    }
    ckpt.blocks.push_back(std::move(block));
  }
  ckpt.header.erase("blocks");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::kIo, "checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::kIo, "checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kIo, "checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace trajfield
