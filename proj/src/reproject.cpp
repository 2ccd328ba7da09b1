#include "trajfield/reproject.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace trajfield {

std::size_t WarpedFeatureMap::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(source.begin(), source.end(), [](int s) { return s >= 0; }));
}

WarpedFeatureMap warp_to_highres(const FeatureFrame& prev, const Pose& cur_pose,
                                 const CameraIntrinsics& intr_high, double opacity_valid) {
  const int w = intr_high.width;
  const int h = intr_high.height;
  const int k = prev.features.channels();
  WarpedFeatureMap out;
  out.features = FeatureMap(k, h, w);
  out.validity = FeatureMap(1, h, w);
  out.zbuf = FeatureMap(1, h, w);
  out.source.assign(static_cast<std::size_t>(w) * h, -1);
  std::vector<double> best(out.source.size(), std::numeric_limits<double>::infinity());

  const int lw = prev.width();
  for (int y = 0; y < prev.height(); ++y) {
    for (int x = 0; x < lw; ++x) {
      if (prev.opacity.at(0, y, x) < opacity_valid) continue;
      const Vec3 p = frame_point(prev, x, y, surface_distance(prev, x, y));
      const Projection pr = project(intr_high, cur_pose, p);
      if (pr.behind_camera || !pr.px.in_bounds(intr_high)) continue;
      const std::size_t idx = static_cast<std::size_t>(pr.px.row()) * w + pr.px.col();
      if (pr.depth < best[idx]) {
        best[idx] = pr.depth;
        out.source[idx] = y * lw + x;
      }
    }
  }
  for (std::size_t i = 0; i < out.source.size(); ++i) {
    const int src = out.source[i];
    if (src < 0) continue;
    out.validity.data()[i] = 1.0;
    out.zbuf.data()[i] = best[i];
    const int sx = src % lw;
    const int sy = src / lw;
    for (int c = 0; c < k; ++c) out.features.plane(c)[i] = prev.features.at(c, sy, sx);
  }
  return out;
}

WarpedFeatureMap apply_warp(const FeatureFrame& prev, const WarpedFeatureMap& geometry) {
  WarpedFeatureMap out = geometry;
  const int k = prev.features.channels();
  const int lw = prev.width();
  out.features = FeatureMap(k, geometry.height(), geometry.width());
  for (std::size_t i = 0; i < out.source.size(); ++i) {
    const int src = out.source[i];
    if (src < 0) continue;
    for (int c = 0; c < k; ++c) out.features.plane(c)[i] = prev.features.at(c, src / lw, src % lw);
  }
  return out;
}

FeatureMap warp_backward(const WarpedFeatureMap& geometry, const FeatureMap& grad_warped,
                         int low_height, int low_width) {
  const int k = grad_warped.channels();
  FeatureMap grad(k, low_height, low_width);
  for (std::size_t i = 0; i < geometry.source.size(); ++i) {
    const int src = geometry.source[i];
    if (src < 0) continue;
    for (int c = 0; c < k; ++c) grad.plane(c)[src] += grad_warped.plane(c)[i];
  }
  return grad;
}

namespace {

struct Tap {
  int i0;
  int i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

// Output pixel o of an s-times upsampling samples input coordinate
// (o + 1/2) / s - 1/2, clamped to the outermost centers.
std::vector<Tap> taps(int n_low, int s) {
  std::vector<Tap> out(static_cast<std::size_t>(n_low) * s);
  for (int o = 0; o < n_low * s; ++o) {
    double g = (o + 0.5) / s - 0.5;
    g = std::clamp(g, 0.0, static_cast<double>(n_low - 1));
    const int i0 = std::min(static_cast<int>(std::floor(g)), std::max(n_low - 2, 0));
    const int i1 = std::min(i0 + 1, n_low - 1);
    out[o] = {i0, i1, g - i0};
  }
  return out;
}

}  // namespace

FeatureMap upsample(const FeatureMap& low, int s) {
  if (s < 1) throw std::invalid_argument("upsample: factor must be >= 1");
  if (s == 1) return low;
  const int h = low.height() * s;
  const int w = low.width() * s;
  const auto tx = taps(low.width(), s);
  const auto ty = taps(low.height(), s);
  FeatureMap out(low.channels(), h, w);
  for (int c = 0; c < low.channels(); ++c)
    for (int y = 0; y < h; ++y) {
      const Tap& a = ty[y];
      for (int x = 0; x < w; ++x) {
        const Tap& b = tx[x];
        const double top = (1.0 - b.w1) * low.at(c, a.i0, b.i0) + b.w1 * low.at(c, a.i0, b.i1);
        const double bot = (1.0 - b.w1) * low.at(c, a.i1, b.i0) + b.w1 * low.at(c, a.i1, b.i1);
        out.at(c, y, x) = (1.0 - a.w1) * top + a.w1 * bot;
      }
    }
  return out;
}

FeatureMap upsample_backward(const FeatureMap& grad_high, int s, int low_height, int low_width) {
  if (s == 1) return grad_high;
  const auto tx = taps(low_width, s);
  const auto ty = taps(low_height, s);
  FeatureMap grad(grad_high.channels(), low_height, low_width);
  for (int c = 0; c < grad_high.channels(); ++c)
    for (int y = 0; y < grad_high.height(); ++y) {
      const Tap& a = ty[y];
      for (int x = 0; x < grad_high.width(); ++x) {
        const Tap& b = tx[x];
        const double g = grad_high.at(c, y, x);
        grad.at(c, a.i0, b.i0) += (1.0 - a.w1) * (1.0 - b.w1) * g;
        grad.at(c, a.i0, b.i1) += (1.0 - a.w1) * b.w1 * g;
        grad.at(c, a.i1, b.i0) += a.w1 * (1.0 - b.w1) * g;
        grad.at(c, a.i1, b.i1) += a.w1 * b.w1 * g;
      }
    }
  return grad;
}

}  // namespace trajfield
