#pragma once

#include "trajfield/feature_map.hpp"

namespace trajfield {

inline constexpr double kPsnrCap = 99.0;

/// Peak-1.0 PSNR in dB; identical images report kPsnrCap. Throws
/// std::invalid_argument on shape mismatch.
double psnr(const ImageRGB& a, const ImageRGB& b);

double mse(const FeatureMap& a, const FeatureMap& b);

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1 0.01,
/// K2 0.03, range 1) of the channel-mean grayscale images. Throws
/// std::invalid_argument on shape mismatch or images smaller than the window.
double ssim(const ImageRGB& a, const ImageRGB& b);

}  // namespace trajfield
