#include "trajfield/volren.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace trajfield {

void MarchConfig::validate() const {
  if (!(step > 0.0)) throw std::invalid_argument("march: step must be positive");
  if (min_transmittance < 0.0 || min_transmittance >= 1.0)
    throw std::invalid_argument("march: min_transmittance must be in [0, 1)");
  if (max_samples < 1) throw std::invalid_argument("march: max_samples must be >= 1");
  if (!(near >= 0.0 && near < far)) throw std::invalid_argument("march: need 0 <= near < far");
}

IntervalMap IntervalMap::full(int width, int height) {
  IntervalMap m;
  m.width = width;
  m.height = height;
  m.cells.assign(static_cast<std::size_t>(width) * height, Interval::full_range());
  return m;
}

std::size_t IntervalMap::guided_count() const {
  return static_cast<std::size_t>(
      std::count_if(cells.begin(), cells.end(), [](const Interval& iv) { return !iv.full; }));
}

Ray pixel_ray(const CameraIntrinsics& intr, const Pose& pose, int x, int y, const MarchConfig& cfg) {
  return generate_ray(intr, pose, PixelCoord::center_of(x, y), cfg.near, cfg.far);
}

std::pair<double, double> interval_bounds(const Interval& iv, const Ray& ray) {
  if (iv.full) return {ray.t_near, ray.t_far};
  return {iv.t0, iv.t1};
}

namespace {

struct SampleRecord {
  Vec3 x;
  double sigma;
  double alpha;
  double transmittance;  // before this sample
  double grad_dot_feature;
};

// Calls visit(x, t, sigma, alpha, T) for every evaluated sample until
// termination and returns the final transmittance.
template <typename Visit>
double march_impl(const VoxelField& field, const OccupancyGrid& occ, const Ray& ray, double t0,
                  double t1, const MarchConfig& cfg, std::span<double> feature, int& samples,
                  Visit&& visit) {
  samples = 0;
  double transmittance = 1.0;
  const auto clipped = field.bounds().clip(ray, t0, t1);
  if (!clipped) return transmittance;
  const double start = clipped->first;
  const double end = clipped->second;
  // Samples sit on one grid per ray, anchored where the full ray range enters
  // the bounds, so a narrowed interval visits a subset of the full-range
  // positions.
  const auto full = field.bounds().clip(ray, ray.t_near, ray.t_far);
  const double anchor = full ? std::min(full->first, start) : start;
  const long first = std::max(0L, static_cast<long>(std::floor((start - anchor) / cfg.step - 0.5)));
  for (long i = first;; ++i) {
    const double t = anchor + (static_cast<double>(i) + 0.5) * cfg.step;
    if (t < start) continue;
    if (t >= end) break;
    if (transmittance <= cfg.min_transmittance || samples >= cfg.max_samples) break;
    const Vec3 x = ray.at(t);
    if (!occ.occupied(x)) continue;
    const double sigma = field.query_into(x, feature);
    ++samples;
    const double alpha = -std::expm1(-sigma * cfg.step);
    visit(x, t, sigma, alpha, transmittance);
    transmittance *= 1.0 - alpha;
  }
  return transmittance;
}

thread_local std::vector<double> tl_feature;
thread_local std::vector<SampleRecord> tl_records;

}  // namespace

RayResult march(const VoxelField& field, const OccupancyGrid& occ, const Ray& ray, double t0,
                double t1, const MarchConfig& cfg) {
  const int k = field.channels();
  RayResult r;
  r.feature.assign(k, 0.0);
  tl_feature.resize(k);
  std::span<double> f(tl_feature);
  r.transmittance = march_impl(field, occ, ray, t0, t1, cfg, f, r.samples_taken,
                               [&](const Vec3&, double t, double, double alpha, double T) {
                                 const double w = T * alpha;
                                 for (int c = 0; c < k; ++c) r.feature[c] += w * f[c];
                                 r.depth += w * t;
                               });
  r.opacity = 1.0 - r.transmittance;
  return r;
}

void march_backward(const VoxelField& field, const OccupancyGrid& occ, const Ray& ray, double t0,
                    double t1, const MarchConfig& cfg, std::span<const double> grad_feature,
                    FieldGrad& accum, double grad_opacity) {
  const int k = field.channels();
  if (grad_opacity == 0.0 &&
      std::all_of(grad_feature.begin(), grad_feature.end(), [](double g) { return g == 0.0; }))
    return;
  tl_feature.resize(k);
  std::span<double> f(tl_feature);
  auto& records = tl_records;
  records.clear();
  int samples = 0;
  march_impl(field, occ, ray, t0, t1, cfg, f, samples,
             [&](const Vec3& x, double, double sigma, double alpha, double T) {
               // Opacity is the sum of weights: a constant channel of one.
               double dot = grad_opacity;
               for (int c = 0; c < k; ++c) dot += grad_feature[c] * f[c];
               records.push_back({x, sigma, alpha, T, dot});
             });

  // g . f_r, then walk forward keeping the prefix sum of w_i (g . f_i):
  // d f_r / d sigma_i = step * (T_{i+1} f_i - sum_{k>i} w_k f_k).
  double total = 0.0;
  for (const auto& s : records) total += s.transmittance * s.alpha * s.grad_dot_feature;
  std::vector<double> scaled(k);
  double prefix = 0.0;
  for (const auto& s : records) {
    const double w = s.transmittance * s.alpha;
    prefix += w * s.grad_dot_feature;
    const double t_next = s.transmittance * (1.0 - s.alpha);
    const double grad_sigma = cfg.step * (t_next * s.grad_dot_feature - (total - prefix));
    for (int c = 0; c < k; ++c) scaled[c] = w * grad_feature[c];
    field.query_backward(s.x, grad_sigma, scaled, accum);
  }
}

FeatureFrame render_frame(const VoxelField& field, const OccupancyGrid& occ, const Pose& pose,
                          const CameraIntrinsics& intr_lowres, const IntervalMap& intervals,
                          const MarchConfig& cfg) {
  const int w = intr_lowres.width;
  const int h = intr_lowres.height;
  if (intervals.width != w || intervals.height != h)
    throw std::invalid_argument("render_frame: interval map does not match the image size");
  const int k = field.channels();
  FeatureFrame frame;
  frame.features = FeatureMap(k, h, w);
  frame.depth = FeatureMap(1, h, w);
  frame.opacity = FeatureMap(1, h, w);
  frame.pose = pose;
  frame.intrinsics = intr_lowres;
  std::int64_t total = 0;
#pragma omp parallel for schedule(dynamic, 4) reduction(+ : total)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Ray ray = pixel_ray(intr_lowres, pose, x, y, cfg);
      const auto [t0, t1] = interval_bounds(intervals.at(x, y), ray);
      const RayResult r = march(field, occ, ray, t0, t1, cfg);
      for (int c = 0; c < k; ++c) frame.features.at(c, y, x) = r.feature[c];
      frame.depth.at(0, y, x) = r.depth;
      frame.opacity.at(0, y, x) = r.opacity;
      total += r.samples_taken;
    }
  }
  frame.samples_total = total;
  return frame;
}

double surface_distance(const FeatureFrame& frame, int x, int y) {
  const double o = frame.opacity.at(0, y, x);
  return o > 0.0 ? frame.depth.at(0, y, x) / o : 0.0;
}

Vec3 frame_point(const FeatureFrame& frame, int x, int y, double t) {
  const CameraIntrinsics& in = frame.intrinsics;
  const PixelCoord px = PixelCoord::center_of(x, y);
  const double norm = Vec3((px.u - in.cx) / in.fx, (px.v - in.cy) / in.fy, 1.0).norm();
  return unproject(in, frame.pose, px, t / norm);
}

IntervalMap build_intervals(const FeatureFrame& prev, const Pose& cur_pose,
                            const CameraIntrinsics& cur_intr_lowres, double epsilon,
                            const MarchConfig& cfg, double opacity_valid) {
  const int w = cur_intr_lowres.width;
  const int h = cur_intr_lowres.height;
  IntervalMap out = IntervalMap::full(w, h);
  std::vector<double> zbuf(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity());
  std::vector<double> dist(zbuf.size(), 0.0);
  const Vec3 center = cur_pose.center();
  for (int y = 0; y < prev.height(); ++y) {
    for (int x = 0; x < prev.width(); ++x) {
      if (prev.opacity.at(0, y, x) < opacity_valid) continue;
      const Vec3 p = frame_point(prev, x, y, surface_distance(prev, x, y));
      const Projection pr = project(cur_intr_lowres, cur_pose, p);
      if (pr.behind_camera || !pr.px.in_bounds(cur_intr_lowres)) continue;
      const std::size_t idx = static_cast<std::size_t>(pr.px.row()) * w + pr.px.col();
      if (pr.depth < zbuf[idx]) {
        zbuf[idx] = pr.depth;
        dist[idx] = (p - center).norm();
      }
    }
  }
  for (std::size_t i = 0; i < zbuf.size(); ++i) {
    if (!std::isfinite(zbuf[i])) continue;
    const double t0 = std::max(cfg.near, dist[i] - epsilon);
    const double t1 = std::min(cfg.far, dist[i] + epsilon);
    if (t0 < t1) out.cells[i] = Interval::limited(t0, t1);
  }
  return out;
}

}  // namespace trajfield
