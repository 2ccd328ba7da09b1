#pragma once

#include "trajfield/feature_map.hpp"
#include "trajfield/field.hpp"
#include "trajfield/geometry.hpp"

#include <random>
#include <string>
#include <vector>

namespace trajfield {

enum class PrimitiveKind { kSphere, kBox };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kSphere;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Constant(0.5);  // sphere: radius in x; box: half extents
  double density = 0.0;             // sigma_0, 1 / world unit
  Vec3 color = Vec3::Constant(0.5);

  bool contains(const Vec3& p) const;
};

/// Homogeneous primitives in vacuum. Where primitives overlap the first one
/// listed wins.
struct AnalyticScene {
  std::vector<Primitive> primitives;
  Aabb bounds;

  /// Density and color at p; sigma = 0 outside every primitive.
  double sample(const Vec3& p, Vec3& color) const;
  void validate() const;

  /// "sphere" (one opaque sphere), "spheres", "boxes" or "mixed". Throws
  /// std::invalid_argument for anything else.
  static AnalyticScene preset(const std::string& name);
  static const std::vector<std::string>& preset_names();
};

struct OracleRender {
  ImageRGB image;
  FeatureMap depth;    // expected ray distance
  FeatureMap opacity;
};

/// Reference renderer: the same midpoint quadrature as the voxel renderer,
/// evaluated on the analytic density and color with a fine step.
OracleRender oracle_render(const AnalyticScene& scene, const Pose& pose,
                           const CameraIntrinsics& intr, double fine_step, double near,
                           double far);

inline constexpr double kBakeRawFloor = -15.0;

/// Voxel field whose activated density and first three features match the
/// scene at every voxel center. Remaining channels are zero.
VoxelField bake(const AnalyticScene& scene, GridShape resolution, const Aabb& bounds,
                int channels);

struct DatasetItem {
  ImageRGB image;   // composited over black
  FeatureMap alpha;  // 1 x H x W coverage; empty when unknown
  Pose pose;
  CameraIntrinsics intrinsics;
  bool pseudo = false;
  std::string split = "train";
};

struct Dataset {
  std::vector<DatasetItem> items;
  Aabb bounds;
  double near = 0.1;
  double far = 10.0;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  /// Items tagged with `split` (pseudo items count as train).
  std::vector<const DatasetItem*> split(const std::string& name) const;
};

/// Ray range that brackets `bounds` from a camera at distance `radius`.
std::pair<double, double> near_far_for_orbit(const Aabb& bounds, double radius);

/// Camera on a sphere around `target` at the given azimuth/elevation
/// (degrees, z up) looking at the target.
Pose orbit_pose(const Vec3& target, double radius, double azimuth_deg, double elevation_deg);

struct OrbitSampling {
  double radius = 3.2;
  double elevation_min_deg = 10.0;
  double elevation_max_deg = 70.0;
};

/// Upper-hemisphere orbit views looking at the scene center, rendered with
/// the oracle. Throws std::invalid_argument when n_views < 1.
Dataset make_dataset(const AnalyticScene& scene, int n_views, const OrbitSampling& orbit,
                     const CameraIntrinsics& intr, double fine_step, std::mt19937_64& rng);

}  // namespace trajfield
