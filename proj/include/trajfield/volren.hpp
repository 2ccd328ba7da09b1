#pragma once

#include "trajfield/feature_map.hpp"
#include "trajfield/field.hpp"
#include "trajfield/geometry.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace trajfield {

/// Ray-marching parameters. Rays span [near, far] before being clipped to
/// the field bounds; samples sit at interval midpoints t0 + (i + 1/2) step.
struct MarchConfig {
  double step = 1.0 / 64.0;
  double min_transmittance = 1e-3;  // early termination once T <= this
  int max_samples = 1024;           // cap on field queries per ray
  double near = 0.1;
  double far = 10.0;

  void validate() const;
};

struct RayResult {
  std::vector<double> feature;
  double depth = 0.0;        // expected ray distance; 0 when nothing was hit
  double opacity = 0.0;      // 1 - final transmittance
  double transmittance = 1.0;
  int samples_taken = 0;     // field queries (skipped steps are free)
};

/// Per-pixel sampling interval; `full` means the whole ray range.
struct Interval {
  double t0 = 0.0;
  double t1 = 0.0;
  bool full = true;

  static Interval full_range() { return {}; }
  static Interval limited(double t0, double t1) { return {t0, t1, false}; }
};

struct IntervalMap {
  int width = 0;
  int height = 0;
  std::vector<Interval> cells;

  static IntervalMap full(int width, int height);
  Interval& at(int x, int y) { return cells[static_cast<std::size_t>(y) * width + x]; }
  const Interval& at(int x, int y) const { return cells[static_cast<std::size_t>(y) * width + x]; }
  std::size_t guided_count() const;
};

/// Low-resolution render output: K feature planes, expected depth and opacity.
struct FeatureFrame {
  FeatureMap features;
  FeatureMap depth;
  FeatureMap opacity;
  Pose pose;
  CameraIntrinsics intrinsics;
  std::int64_t samples_total = 0;

  int width() const { return intrinsics.width; }
  int height() const { return intrinsics.height; }
};

/// Ray through the center of pixel (x, y) spanning [cfg.near, cfg.far].
Ray pixel_ray(const CameraIntrinsics& intr, const Pose& pose, int x, int y, const MarchConfig& cfg);

/// Resolves an interval against the ray range.
std::pair<double, double> interval_bounds(const Interval& iv, const Ray& ray);

/// Quadrature along [t0, t1] (clipped to the field bounds). Steps whose
/// position falls in an unoccupied cell contribute alpha = 0 and cost nothing.
RayResult march(const VoxelField& field, const OccupancyGrid& occ, const Ray& ray, double t0,
                double t1, const MarchConfig& cfg);

/// Replays the march and accumulates d(loss)/d(field parameters) given
/// d(loss)/d(feature) and, optionally, d(loss)/d(opacity). Depth receives no
/// gradient.
void march_backward(const VoxelField& field, const OccupancyGrid& occ, const Ray& ray, double t0,
                    double t1, const MarchConfig& cfg, std::span<const double> grad_feature,
                    FieldGrad& accum, double grad_opacity = 0.0);

/// One march per pixel center; FULL cells use the ray range.
FeatureFrame render_frame(const VoxelField& field, const OccupancyGrid& occ, const Pose& pose,
                          const CameraIntrinsics& intr_lowres, const IntervalMap& intervals,
                          const MarchConfig& cfg);

/// Scatters the valid depths of `prev` into the current low-resolution view
/// (nearest point wins) and returns [d - eps, d + eps] clamped to the ray
/// range; pixels that receive nothing stay FULL.
IntervalMap build_intervals(const FeatureFrame& prev, const Pose& cur_pose,
                            const CameraIntrinsics& cur_intr_lowres, double epsilon,
                            const MarchConfig& cfg, double opacity_valid = 0.5);

/// Expected depth normalized by opacity: the distance of the first surface
/// along the pixel ray. 0 for empty pixels.
double surface_distance(const FeatureFrame& frame, int x, int y);

/// World point at expected ray distance `t` of low-res pixel (x, y) of a frame.
Vec3 frame_point(const FeatureFrame& frame, int x, int y, double t);

}  // namespace trajfield
