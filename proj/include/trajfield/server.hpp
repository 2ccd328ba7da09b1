#pragma once

#include "trajfield/model.hpp"
#include "trajfield/pipeline.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace trajfield {

inline constexpr std::uint32_t kFrameMagic = 0x53524E46;
inline constexpr std::size_t kFrameHeaderSize = 16;
inline constexpr std::uint8_t kFormatRGB8 = 0;

struct FrameHeader {
  std::uint32_t frame_id = 0;
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint8_t format = kFormatRGB8;

  bool operator==(const FrameHeader&) const = default;
};

/// Little-endian: u32 magic, u32 frame_id, u16 w, u16 h, u8 format, 3 zero bytes.
std::array<std::uint8_t, kFrameHeaderSize> encode_frame_header(const FrameHeader& h);
/// nullopt when the buffer is short or the magic is wrong.
std::optional<FrameHeader> decode_frame_header(std::span<const std::uint8_t> bytes);
/// Header followed by w*h*3 RGB8 bytes, rows top to bottom.
std::vector<std::uint8_t> encode_frame(std::uint32_t frame_id, const ImageRGB& image);

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kPoseOrthonormalTolerance = 1e-3;

struct PoseMessage {
  Mat4 camera_to_world = Mat4::Identity();
  std::optional<double> fov_y_deg;
};

struct ConfigMessage {
  std::optional<bool> use_guidance;
  std::optional<bool> use_nn;
  bool reset = false;
};

struct ResizeMessage {
  int width = 0;
  int height = 0;
};

using ClientMessage = std::variant<PoseMessage, ConfigMessage, ResizeMessage>;

/// Throws ProtocolError for malformed JSON, unknown types, bad fields and
/// pose matrices whose rotation is not orthonormal within tolerance.
ClientMessage parse_client_message(const std::string& text);

std::string error_message(const std::string& what);

/// Per-connection rendering state; independent of any transport.
class RenderSession {
 public:
  RenderSession(const SceneModel& model, int max_res);

  /// Applies toggles and resets before the next frame.
  void apply(const ConfigMessage& msg);
  /// Changes the output size and clears the buffer. Throws ProtocolError when
  /// the size is out of range or not a multiple of lcm(4, s).
  void resize(const ResizeMessage& msg);

  struct Output {
    std::vector<std::uint8_t> frame;
    std::string stats;  // JSON text
    FrameStats raw;
  };
  /// Renders `pose` (the pose_seq-th pose received) and advances frame_id.
  Output render(const PoseMessage& pose, std::uint64_t pose_seq);

  int width() const { return width_; }
  int height() const { return height_; }
  const PipelineConfig& config() const { return cfg_; }
  const RenderBuffer& buffer() const { return buffer_; }

 private:
  const SceneModel& model_;
  int max_res_;
  PipelineConfig cfg_;
  RenderBuffer buffer_;
  int width_;
  int height_;
  std::uint32_t next_frame_id_ = 0;
};

struct ServerOptions {
  std::string bind_address = "127.0.0.1";
  std::uint16_t port = 8080;  // 0 picks a free port
  int max_res = 512;          // longest allowed image side
  std::filesystem::path assets_dir;
};

/// WebSocket endpoint /render plus static files on plain GET. Each
/// connection owns a RenderSession and a render thread; the latest pending
/// pose is rendered and older ones are dropped.
class Server {
 public:
  Server(const SceneModel& model, ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Port the listener is bound to.
  std::uint16_t port() const;
  /// Serves until stop() is called.
  void run();
  /// Thread-safe.
  void stop();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace trajfield
