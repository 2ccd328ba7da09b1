#pragma once

#include "trajfield/feature_map.hpp"
#include "trajfield/geometry.hpp"
#include "trajfield/volren.hpp"

#include <span>
#include <vector>

namespace trajfield {

/// A preceding frame's features scattered into the current view at target
/// resolution. `source[p]` is the low-res pixel index that won high-res
/// pixel p, or -1 for holes.
struct WarpedFeatureMap {
  FeatureMap features;  // K x H x W, zero where invalid
  FeatureMap validity;  // 1 x H x W, 0 or 1
  FeatureMap zbuf;      // 1 x H x W, winning camera depth (0 where invalid)
  std::vector<int> source;

  int width() const { return features.width(); }
  int height() const { return features.height(); }
  std::size_t valid_count() const;
};

/// Forward scatter with a z-test: every valid low-res pixel is lifted to 3D
/// and projected with `intr_high` into `cur_pose`; the nearest point wins and
/// its features are copied unfiltered.
WarpedFeatureMap warp_to_highres(const FeatureFrame& prev, const Pose& cur_pose,
                                 const CameraIntrinsics& intr_high, double opacity_valid = 0.5);

/// Re-gathers `prev` features through an existing source mapping; geometry
/// stays fixed while feature values change.
WarpedFeatureMap apply_warp(const FeatureFrame& prev, const WarpedFeatureMap& geometry);

/// Transpose of the value path: accumulates grad_warped (K x H x W) back onto
/// the low-res source pixels. Returns K x H_l x W_l.
FeatureMap warp_backward(const WarpedFeatureMap& geometry, const FeatureMap& grad_warped,
                         int low_height, int low_width);

/// Bilinear upsampling aligned on pixel centers with clamped edges.
FeatureMap upsample(const FeatureMap& low, int s);

/// Transpose of upsample.
FeatureMap upsample_backward(const FeatureMap& grad_high, int s, int low_height, int low_width);

}  // namespace trajfield
