#include "trajfield/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace trajfield {

bool Primitive::contains(const Vec3& p) const {
  if (kind == PrimitiveKind::kSphere) return (p - center).squaredNorm() <= size.x() * size.x();
  return ((p - center).cwiseAbs().array() <= size.array()).all();
}

double AnalyticScene::sample(const Vec3& p, Vec3& color) const {
  for (const Primitive& prim : primitives) {
    if (prim.contains(p)) {
      color = prim.color;
      return prim.density;
    }
  }
  color.setZero();
  return 0.0;
}

void AnalyticScene::validate() const {
  for (const Primitive& p : primitives) {
    if (p.density < 0.0) throw std::invalid_argument("scene: negative density");
    if ((p.color.array() < 0.0).any() || (p.color.array() > 1.0).any())
      throw std::invalid_argument("scene: color outside [0, 1]");
  }
}

const std::vector<std::string>& AnalyticScene::preset_names() {
  static const std::vector<std::string> names = {"sphere", "spheres", "boxes", "mixed"};
  return names;
}

AnalyticScene AnalyticScene::preset(const std::string& name) {
  using K = PrimitiveKind;
  AnalyticScene s;
  s.bounds = Aabb{Vec3::Constant(-1.0), Vec3::Constant(1.0)};
  auto sphere = [](Vec3 c, double r, double sigma, Vec3 color) {
    return Primitive{K::kSphere, c, Vec3::Constant(r), sigma, color};
  };
  auto box = [](Vec3 c, Vec3 half, double sigma, Vec3 color) {
    return Primitive{K::kBox, c, half, sigma, color};
  };
  if (name == "sphere") {
    s.primitives = {sphere({0, 0, 0}, 0.6, 60.0, {0.85, 0.35, 0.2})};
  } else if (name == "spheres") {
    s.primitives = {sphere({-0.4, -0.3, 0.0}, 0.45, 50.0, {0.9, 0.2, 0.2}),
                    sphere({0.45, -0.2, 0.1}, 0.35, 50.0, {0.2, 0.8, 0.3}),
                    sphere({0.0, 0.5, -0.1}, 0.4, 50.0, {0.2, 0.35, 0.9})};
  } else if (name == "boxes") {
    s.primitives = {box({0.0, 0.0, -0.75}, {0.9, 0.9, 0.1}, 50.0, {0.8, 0.8, 0.75}),
                    box({-0.35, -0.3, -0.35}, {0.25, 0.25, 0.3}, 50.0, {0.9, 0.6, 0.1}),
                    box({0.4, 0.35, -0.25}, {0.2, 0.3, 0.4}, 50.0, {0.15, 0.5, 0.85})};
  } else if (name == "mixed") {
    s.primitives = {box({0.0, 0.0, -0.75}, {0.9, 0.9, 0.1}, 50.0, {0.75, 0.75, 0.7}),
                    sphere({-0.35, -0.3, -0.25}, 0.35, 50.0, {0.9, 0.25, 0.2}),
                    box({0.4, 0.3, -0.3}, {0.2, 0.25, 0.35}, 50.0, {0.2, 0.45, 0.9}),
                    sphere({0.35, -0.45, -0.45}, 0.2, 50.0, {0.95, 0.85, 0.2}),
                    box({-0.4, 0.45, -0.45}, {0.15, 0.15, 0.2}, 50.0, {0.25, 0.8, 0.35}),
                    sphere({0.0, 0.05, 0.35}, 0.18, 8.0, {0.8, 0.8, 0.95})};
  } else {
    throw std::invalid_argument("unknown scene preset '" + name + "'");
  }
  return s;
}

OracleRender oracle_render(const AnalyticScene& scene, const Pose& pose,
                           const CameraIntrinsics& intr, double fine_step, double near,
                           double far) {
  if (!(fine_step > 0.0)) throw std::invalid_argument("oracle_render: step must be positive");
  const int w = intr.width;
  const int h = intr.height;
  OracleRender out{ImageRGB(3, h, w), FeatureMap(1, h, w), FeatureMap(1, h, w)};
#pragma omp parallel for schedule(dynamic, 2)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Ray ray = generate_ray(intr, pose, PixelCoord::center_of(x, y), near, far);
      Vec3 rgb = Vec3::Zero();
      double depth = 0.0;
      double transmittance = 1.0;
      if (const auto seg = scene.bounds.clip(ray, near, far)) {
        const auto [t0, t1] = *seg;
        Vec3 color;
        for (long i = 0;; ++i) {
          const double t = t0 + (static_cast<double>(i) + 0.5) * fine_step;
          if (t >= t1 || transmittance < 1e-9) break;
          const double sigma = scene.sample(ray.at(t), color);
          if (sigma <= 0.0) continue;
          const double alpha = -std::expm1(-sigma * fine_step);
          const double wgt = transmittance * alpha;
          rgb += wgt * color;
          depth += wgt * t;
          transmittance *= 1.0 - alpha;
        }
      }
      for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = rgb[c];
      out.depth.at(0, y, x) = depth;
      out.opacity.at(0, y, x) = 1.0 - transmittance;
    }
  }
  return out;
}

namespace {

double surface_distance(const Primitive& p, const Vec3& x) {
  if (p.kind == PrimitiveKind::kSphere) return (x - p.center).norm() - p.size.x();
  const Vec3 q = (x - p.center).cwiseAbs() - p.size;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

Vec3 nearest_color(const AnalyticScene& scene, const Vec3& x) {
  Vec3 color = Vec3::Zero();
  double best = std::numeric_limits<double>::infinity();
  for (const Primitive& p : scene.primitives) {
    const double d = surface_distance(p, x);
    if (d < best) {
      best = d;
      color = p.color;
    }
  }
  return color;
}

}  // namespace

VoxelField bake(const AnalyticScene& scene, GridShape resolution, const Aabb& bounds,
                int channels) {
  if (channels < 3) throw std::invalid_argument("bake: need at least 3 channels");
  VoxelField field(resolution, bounds, channels);
  for (int k = 0; k < resolution.nz; ++k)
    for (int j = 0; j < resolution.ny; ++j)
      for (int i = 0; i < resolution.nx; ++i) {
        Vec3 color;
        const Vec3 x = field.voxel_center(i, j, k);
        const double sigma = scene.sample(x, color);
        // Empty voxels take the color of the nearest surface so interpolation
        // near a boundary does not blend primitive colors towards black.
        if (sigma <= 0.0) color = nearest_color(scene, x);
        const std::size_t v = field.voxel_index(i, j, k);
        field.raw_density[v] =
            sigma > 0.0 ? std::max(kBakeRawFloor, softplus_inverse(sigma)) : kBakeRawFloor;
        for (int c = 0; c < 3; ++c) field.features[v * channels + c] = color[c];
      }
  return field;
}

std::vector<const DatasetItem*> Dataset::split(const std::string& name) const {
  std::vector<const DatasetItem*> out;
  for (const DatasetItem& it : items)
    if (it.split == name || (name == "train" && it.pseudo)) out.push_back(&it);
  return out;
}

std::pair<double, double> near_far_for_orbit(const Aabb& bounds, double radius) {
  const double hd = bounds.half_diagonal();
  return {std::max(0.05, radius - hd), radius + hd};
}

Pose orbit_pose(const Vec3& target, double radius, double azimuth_deg, double elevation_deg) {
  const double az = azimuth_deg * M_PI / 180.0;
  const double el = elevation_deg * M_PI / 180.0;
  const Vec3 eye = target + radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az),
                                          std::sin(el));
  return Pose::look_at(eye, target, Vec3(0, 0, 1));
}

Dataset make_dataset(const AnalyticScene& scene, int n_views, const OrbitSampling& orbit,
                     const CameraIntrinsics& intr, double fine_step, std::mt19937_64& rng) {
  if (n_views < 1) throw std::invalid_argument("make_dataset: need at least one view");
  scene.validate();
  intr.validate();
  Dataset ds;
  ds.bounds = scene.bounds;
  std::tie(ds.near, ds.far) = near_far_for_orbit(scene.bounds, orbit.radius);
  std::uniform_real_distribution<double> azimuth(0.0, 360.0);
  std::uniform_real_distribution<double> elevation(orbit.elevation_min_deg, orbit.elevation_max_deg);
  for (int n = 0; n < n_views; ++n) {
    const double az = azimuth(rng);
    const double el = elevation(rng);
    DatasetItem item;
    item.pose = orbit_pose(scene.bounds.center(), orbit.radius, az, el);
    item.intrinsics = intr;
    OracleRender r = oracle_render(scene, item.pose, intr, fine_step, ds.near, ds.far);
    item.image = std::move(r.image);
    item.alpha = std::move(r.opacity);
    ds.items.push_back(std::move(item));
  }
  return ds;
}

}  // namespace trajfield
