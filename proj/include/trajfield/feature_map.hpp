#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace trajfield {

/// Planar (channel, row, column) map of doubles. Used for feature maps,
/// depth maps, network activations and RGB images alike.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int channels, int height, int width, double fill = 0.0)
      : channels_(channels), height_(height), width_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {}

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const FeatureMap& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  std::span<double> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(int c) const {
    return {data_.data() + c * plane_size(), plane_size()};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) { data_.assign(data_.size(), v); }

  /// Channels [first, first + count) as a new map.
  FeatureMap slice_channels(int first, int count) const;
  /// Spatial crop with all channels.
  FeatureMap crop(int y0, int x0, int h, int w) const;
  /// Adds `src` into this map with its top-left corner at (y0, x0).
  void add_at(const FeatureMap& src, int y0, int x0);

  bool operator==(const FeatureMap&) const = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// An RGB image in [0, 1]; always three channels.
using ImageRGB = FeatureMap;

/// Concatenates along the channel axis; all inputs share spatial size.
FeatureMap concat_channels(std::span<const FeatureMap* const> parts);

}  // namespace trajfield
