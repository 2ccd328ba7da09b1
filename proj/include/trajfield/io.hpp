#pragma once

#include "trajfield/feature_map.hpp"
#include "trajfield/geometry.hpp"
#include "trajfield/scene.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajfield {

class DatasetError : public std::runtime_error {
 public:
  enum class Kind { kMissingFile, kMalformed, kSizeMismatch, kIo };

  DatasetError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// 8-bit PNG to [0, 1] RGB. Gray is replicated; alpha is composited over
/// black. When the file has an alpha channel and `alpha` is given, it
/// receives the 1 x H x W coverage. Throws DatasetError.
ImageRGB read_png(const std::filesystem::path& path, FeatureMap* alpha = nullptr);

/// Clamps to [0, 1] and rounds to RGB8. With `alpha`, `image` is taken as
/// composited over black and written as straight-alpha RGBA8.
void write_png(const std::filesystem::path& path, const ImageRGB& image,
               const FeatureMap* alpha = nullptr);

/// RGB8 bytes in row-major interleaved order, clamped and rounded.
std::vector<std::uint8_t> to_rgb8(const ImageRGB& image);

/// Reads `dir/transforms.json` and its images. Intrinsics come from
/// fl_x/fl_y/cx/cy/w/h or from camera_angle_x; frame matrices are
/// camera-to-world and are inverted.
Dataset load_posed_image_dataset(const std::filesystem::path& dir);

/// Writes images as PNG plus a transforms.json readable by the loader.
void save_posed_image_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// A JSON list of 4x4 camera-to-world matrices, or an object whose "poses"
/// holds that list.
std::vector<Pose> load_trajectory(const std::filesystem::path& path);
void save_trajectory(const std::vector<Pose>& poses, const std::filesystem::path& path);

}  // namespace trajfield
