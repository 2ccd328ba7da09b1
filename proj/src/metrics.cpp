#include "trajfield/metrics.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace trajfield {

double mse(const FeatureMap& a, const FeatureMap& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
  if (a.empty()) throw std::invalid_argument("mse: empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

double psnr(const ImageRGB& a, const ImageRGB& b) {
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(m));
}

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::array<double, kWindow> gaussian_kernel() {
  std::array<double, kWindow> k{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    k[i] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

std::vector<double> grayscale(const ImageRGB& img) {
  std::vector<double> g(img.plane_size(), 0.0);
  for (int c = 0; c < img.channels(); ++c) {
    const auto p = img.plane(c);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += p[i];
  }
  for (double& v : g) v /= img.channels();
  return g;
}

// Separable valid-mode Gaussian filter of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w) {
  static const auto k = gaussian_kernel();
  const int wo = w - kWindow + 1;
  const int ho = h - kWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * wo, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWindow; ++i) s += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * wo + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ho) * wo, 0.0);
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWindow; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * wo + x];
      out[static_cast<std::size_t>(y) * wo + x] = s;
    }
  return out;
}

}  // namespace

double ssim(const ImageRGB& a, const ImageRGB& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  const int h = a.height();
  const int w = a.width();
  if (h < kWindow || w < kWindow) throw std::invalid_argument("ssim: images smaller than the 11x11 window");
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);

  const auto x = grayscale(a);
  const auto y = grayscale(b);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w);
  const auto my = filter_valid(y, h, w);
  const auto sxx = filter_valid(xx, h, w);
  const auto syy = filter_valid(yy, h, w);
  const auto sxy = filter_valid(xy, h, w);

  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

}  // namespace trajfield
