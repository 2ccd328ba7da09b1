#include "trajfield/geometry.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace trajfield {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (width < 1 || height < 1) throw std::invalid_argument("intrinsics: image size must be at least 1x1");
  if (cx < 0.0 || cx > width || cy < 0.0 || cy > height)
    throw std::invalid_argument("intrinsics: principal point outside the image");
}

CameraIntrinsics CameraIntrinsics::from_fov_y(double fov_y_deg, int width, int height) {
  const double f = 0.5 * height / std::tan(0.5 * fov_y_deg * M_PI / 180.0);
  return {f, f, 0.5 * width, 0.5 * height, width, height};
}

CameraIntrinsics CameraIntrinsics::from_fov_x(double fov_x_rad, int width, int height) {
  const double f = 0.5 * width / std::tan(0.5 * fov_x_rad);
  return {f, f, 0.5 * width, 0.5 * height, width, height};
}

Pose Pose::from_camera_to_world(const Mat4& c2w) {
  Pose p;
  const Mat3 r_c2w = c2w.topLeftCorner<3, 3>();
  const Vec3 center = c2w.topRightCorner<3, 1>();
  p.rotation = r_c2w.transpose();
  p.translation = -p.rotation * center;
  return p;
}

Pose Pose::look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) right = forward.cross(Vec3(0, 1, 0));
  right.normalize();
  // Image y grows downward, so camera +y is the negative of the visual up.
  const Vec3 down = forward.cross(right);
  Mat3 c2w;
  c2w.col(0) = right;
  c2w.col(1) = down;
  c2w.col(2) = forward;
  Pose p;
  p.rotation = c2w.transpose();
  p.translation = -p.rotation * eye;
  return p;
}

Mat4 Pose::camera_to_world() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation.transpose();
  m.topRightCorner<3, 1>() = center();
  return m;
}

double Pose::orthonormality_error() const {
  return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
}

bool Pose::is_valid(double tol) const {
  return orthonormality_error() < tol && rotation.determinant() > 0.0;
}

Ray generate_ray(const CameraIntrinsics& intr, const Pose& pose, const PixelCoord& px,
                 double t_near, double t_far) {
  const Vec3 dir_cam((px.u - intr.cx) / intr.fx, (px.v - intr.cy) / intr.fy, 1.0);
  Ray r;
  r.origin = pose.center();
  r.direction = (pose.rotation.transpose() * dir_cam).normalized();
  r.t_near = t_near;
  r.t_far = t_far;
  return r;
}

Vec3 unproject(const CameraIntrinsics& intr, const Pose& pose, const PixelCoord& px,
               double depth) {
  const Vec3 cam((px.u - intr.cx) * depth / intr.fx, (px.v - intr.cy) * depth / intr.fy, depth);
  return pose.to_world(cam);
}

Projection project(const CameraIntrinsics& intr, const Pose& pose, const Vec3& point) {
  const Vec3 cam = pose.to_camera(point);
  Projection out;
  out.depth = cam.z();
  if (cam.z() <= kBehindCameraDepth) {
    out.behind_camera = true;
    return out;
  }
  out.px.u = intr.fx * cam.x() / cam.z() + intr.cx;
  out.px.v = intr.fy * cam.y() / cam.z() + intr.cy;
  return out;
}

CameraIntrinsics scale_intrinsics(const CameraIntrinsics& intr, double s) {
  if (!(s > 0.0)) throw std::invalid_argument("scale_intrinsics: scale must be positive");
  const double w = intr.width * s;
  const double h = intr.height * s;
  if (w != std::round(w) || h != std::round(h))
    throw std::invalid_argument("scale_intrinsics: scaled size " + std::to_string(w) + "x" +
                                std::to_string(h) + " is not integral");
  return {intr.fx * s, intr.fy * s, intr.cx * s, intr.cy * s, static_cast<int>(w),
          static_cast<int>(h)};
}

std::optional<std::pair<double, double>> Aabb::clip(const Ray& ray, double t0, double t1) const {
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a];
    const double d = ray.direction[a];
    if (std::abs(d) < 1e-15) {
      if (o < lo[a] || o > hi[a]) return std::nullopt;
      continue;
    }
    double ta = (lo[a] - o) / d;
    double tb = (hi[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t0 < t1)) return std::nullopt;
  return std::make_pair(t0, t1);
}

Pose interpolate(const Pose& a, const Pose& b, double u) {
  const Eigen::Quaterniond qa(a.rotation.transpose());
  const Eigen::Quaterniond qb(b.rotation.transpose());
  const Mat3 c2w = qa.slerp(u, qb).normalized().toRotationMatrix();
  const Vec3 center = (1.0 - u) * a.center() + u * b.center();
  Pose p;
  p.rotation = c2w.transpose();
  p.translation = -p.rotation * center;
  return p;
}

}  // namespace trajfield
