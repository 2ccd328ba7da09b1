#include "trajfield/feature_map.hpp"

#include <algorithm>
#include <stdexcept>

namespace trajfield {

FeatureMap FeatureMap::slice_channels(int first, int count) const {
  if (first < 0 || count < 0 || first + count > channels_)
    throw std::out_of_range("slice_channels: channel range out of bounds");
  FeatureMap out(count, height_, width_);
  std::copy_n(data_.begin() + first * plane_size(), count * plane_size(), out.data_.begin());
  return out;
}

FeatureMap FeatureMap::crop(int y0, int x0, int h, int w) const {
  if (y0 < 0 || x0 < 0 || y0 + h > height_ || x0 + w > width_)
    throw std::out_of_range("crop: window outside the map");
  FeatureMap out(channels_, h, w);
  for (int c = 0; c < channels_; ++c)
    for (int y = 0; y < h; ++y)
      std::copy_n(&data_[index(c, y0 + y, x0)], w, &out.at(c, y, 0));
  return out;
}

void FeatureMap::add_at(const FeatureMap& src, int y0, int x0) {
  if (src.channels_ != channels_ || y0 < 0 || x0 < 0 || y0 + src.height_ > height_ ||
      x0 + src.width_ > width_)
    throw std::out_of_range("add_at: source does not fit");
  for (int c = 0; c < channels_; ++c)
    for (int y = 0; y < src.height_; ++y)
      for (int x = 0; x < src.width_; ++x) at(c, y0 + y, x0 + x) += src.at(c, y, x);
}

FeatureMap concat_channels(std::span<const FeatureMap* const> parts) {
  if (parts.empty()) return {};
  const int h = parts.front()->height();
  const int w = parts.front()->width();
  int total = 0;
  for (const FeatureMap* p : parts) {
    if (p->height() != h || p->width() != w)
      throw std::invalid_argument("concat_channels: spatial size mismatch");
    total += p->channels();
  }
  FeatureMap out(total, h, w);
  auto dst = out.data().begin();
  for (const FeatureMap* p : parts) dst = std::copy(p->data().begin(), p->data().end(), dst);
  return out;
}

}  // namespace trajfield
