#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <optional>
#include <utility>

namespace trajfield {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Pinhole intrinsics in pixel units. Pixel index i covers [i, i+1) with its
/// center at i + 0.5.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;

  static CameraIntrinsics from_fov_y(double fov_y_deg, int width, int height);
  static CameraIntrinsics from_fov_x(double fov_x_rad, int width, int height);

  bool operator==(const CameraIntrinsics&) const = default;
};

/// Rigid world-to-camera transform; the camera looks down +z.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_camera_to_world(const Mat4& c2w);
  /// Camera at `eye` looking at `target`. `up` is a world-space hint.
  static Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3(0, 0, 1));

  Mat4 camera_to_world() const;
  /// Camera center in world coordinates (-R^T t).
  Vec3 center() const { return -rotation.transpose() * translation; }
  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 to_world(const Vec3& cam) const { return rotation.transpose() * (cam - translation); }

  /// max |R^T R - I| entry; det must also be positive.
  double orthonormality_error() const;
  bool is_valid(double tol = 1e-6) const;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3(0, 0, 1);
  double t_near = 0.0;
  double t_far = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
};

/// Continuous coordinates within this distance below an integer round up to
/// it, so exact pixel-edge hits survive unproject/project rounding noise.
inline constexpr double kPixelSnap = 1e-6;

inline int pixel_floor(double u) { return static_cast<int>(std::floor(u + kPixelSnap)); }

struct PixelCoord {
  double u = 0.0;
  double v = 0.0;

  static PixelCoord center_of(int i, int j) { return {i + 0.5, j + 0.5}; }
  int col() const { return pixel_floor(u); }
  int row() const { return pixel_floor(v); }
  bool in_bounds(const CameraIntrinsics& intr) const {
    const int i = col();
    const int j = row();
    return i >= 0 && i < intr.width && j >= 0 && j < intr.height;
  }
};

struct Projection {
  PixelCoord px;
  double depth = 0.0;
  bool behind_camera = false;
};

inline constexpr double kBehindCameraDepth = 1e-9;

Ray generate_ray(const CameraIntrinsics& intr, const Pose& pose, const PixelCoord& px,
                 double t_near, double t_far);

/// World point whose camera-space z equals `depth`.
Vec3 unproject(const CameraIntrinsics& intr, const Pose& pose, const PixelCoord& px,
               double depth);

Projection project(const CameraIntrinsics& intr, const Pose& pose, const Vec3& point);

/// Throws std::invalid_argument unless s > 0 and the scaled size is integral.
CameraIntrinsics scale_intrinsics(const CameraIntrinsics& intr, double s);

/// Axis-aligned box.
struct Aabb {
  Vec3 lo = Vec3::Constant(-1.0);
  Vec3 hi = Vec3::Constant(1.0);

  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 extent() const { return hi - lo; }
  double half_diagonal() const { return 0.5 * extent().norm(); }
  /// Parametric entry/exit of the ray line restricted to [t0, t1], or
  /// nullopt when the clipped segment is empty.
  std::optional<std::pair<double, double>> clip(const Ray& ray, double t0, double t1) const;
};

/// Spherical interpolation of rotation and linear interpolation of the camera
/// center between two poses; u in [0, 1].
Pose interpolate(const Pose& a, const Pose& b, double u);

}  // namespace trajfield
