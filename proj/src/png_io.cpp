#include "trajfield/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace trajfield {

ImageRGB read_png(const std::filesystem::path& path, FeatureMap* alpha) {
  if (!std::filesystem::exists(path))
    throw DatasetError(DatasetError::Kind::kMissingFile, "missing image " + path.string());
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw DatasetError(DatasetError::Kind::kMalformed,
                       "cannot decode " + path.string() + ": " + img.message);
  const bool has_alpha = (img.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  img.format = PNG_FORMAT_RGBA;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DatasetError(DatasetError::Kind::kMalformed,
                       "cannot decode " + path.string() + ": " + img.message);
  }
  const int w = static_cast<int>(img.width);
  const int h = static_cast<int>(img.height);
  ImageRGB out(3, h, w);
  if (alpha) *alpha = has_alpha ? FeatureMap(1, h, w) : FeatureMap();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const png_byte* px = &buf[(static_cast<std::size_t>(y) * w + x) * 4];
      const double a = px[3] / 255.0;
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = px[c] / 255.0 * a;
      if (alpha && has_alpha) alpha->at(0, y, x) = a;
    }
  return out;
}

std::vector<std::uint8_t> to_rgb8(const ImageRGB& image) {
  const int w = image.width();
  const int h = image.height();
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return buf;
}

void write_png(const std::filesystem::path& path, const ImageRGB& image,
               const FeatureMap* alpha) {
  if (image.channels() != 3) throw std::invalid_argument("write_png: expected an RGB image");
  const bool rgba = alpha && !alpha->empty();
  if (rgba && (alpha->channels() != 1 || alpha->height() != image.height() ||
               alpha->width() != image.width()))
    throw std::invalid_argument("write_png: alpha does not match the image");
  std::vector<std::uint8_t> buf;
  if (rgba) {
    const int w = image.width();
    const int h = image.height();
    buf.resize(static_cast<std::size_t>(w) * h * 4);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        std::uint8_t* px = &buf[(static_cast<std::size_t>(y) * w + x) * 4];
        const double a = std::clamp(alpha->at(0, y, x), 0.0, 1.0);
        for (int c = 0; c < 3; ++c) {
          const double v = a > 0.0 ? std::clamp(image.at(c, y, x) / a, 0.0, 1.0) : 0.0;
          px[c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
        px[3] = static_cast<std::uint8_t>(std::lround(a * 255.0));
      }
  } else {
    buf = to_rgb8(image);
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = rgba ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw DatasetError(DatasetError::Kind::kIo, "cannot write " + path.string() + ": " + img.message);
}

}  // namespace trajfield
