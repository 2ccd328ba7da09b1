#include "trajfield/trainer.hpp"

#include "trajfield/metrics.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace trajfield {

void TrainConfig::validate(int scale) const {
  if (scale < 1) throw std::invalid_argument("train: scale must be >= 1");
  if (patch <= 0 || patch % (4 * scale) != 0)
    throw std::invalid_argument("train: patch " + std::to_string(patch) + " must be a multiple of 4*scale = " +
                                std::to_string(4 * scale));
  if (iters_pretrain < 0 || iters_joint < 0 || distill_count < 0)
    throw std::invalid_argument("train: iteration and distillation counts must be >= 0");
  if (rays_per_batch < 1) throw std::invalid_argument("train: rays_per_batch must be >= 1");
  if (occupancy_interval < 1) throw std::invalid_argument("train: occupancy_interval must be >= 1");
  if (seq_max_rotation_deg < 0.0 || seq_max_translation < 0.0)
    throw std::invalid_argument("train: pose jitter bounds must be >= 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("train: lr_decay must lie in (0, 1]");
}

ImageRGB render_rgb(const VoxelField& field, const OccupancyGrid& occ, const Pose& pose,
                    const CameraIntrinsics& intr, const MarchConfig& march) {
  const FeatureFrame f =
      render_frame(field, occ, pose, intr, IntervalMap::full(intr.width, intr.height), march);
  return f.features.slice_channels(0, 3);
}

double field_psnr(const VoxelField& field, const OccupancyGrid& occ,
                  const std::vector<const DatasetItem*>& items, const MarchConfig& march) {
  if (items.empty()) throw std::invalid_argument("field_psnr: no items");
  double sum = 0.0;
  for (const DatasetItem* it : items)
    sum += psnr(render_rgb(field, occ, it->pose, it->intrinsics, march), it->image);
  return sum / static_cast<double>(items.size());
}

namespace {

std::vector<const DatasetItem*> train_items(const Dataset& ds) {
  auto items = ds.split("train");
  if (items.empty()) throw std::invalid_argument("train: dataset has no train items");
  return items;
}

void adam_field(Adam& density, Adam& features, VoxelField& field, const FieldGrad& g) {
  density.step(field.raw_density, g.raw_density);
  features.step(field.features, g.features);
}

}  // namespace

std::vector<double> pretrain(VoxelField& field, OccupancyGrid& occ, const Dataset& ds,
                             const TrainConfig& cfg, const MarchConfig& march, const TrainLog& log) {
  if (field.channels() < 3) throw std::invalid_argument("pretrain: need at least 3 channels");
  march.validate();
  const auto items = train_items(ds);
  std::vector<double> curve;
  if (cfg.iters_pretrain == 0) return curve;

  std::mt19937_64 rng(cfg.seed);
  Adam density(field.raw_density.size(), cfg.field_adam());
  Adam features(field.features.size(), cfg.field_adam());
  const int workers = std::max(1, omp_get_max_threads());
  std::vector<FieldGrad> grads(workers, field.make_grad());
  const int k = field.channels();
  const int n = cfg.rays_per_batch;
  const double norm = 1.0 / (3.0 * n);

  struct RaySpec {
    const DatasetItem* item;
    int x;
    int y;
    Vec3 background;
  };
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<RaySpec> batch(n);
  std::vector<double> loss_part(n);
  std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);

  for (int iter = 0; iter < cfg.iters_pretrain; ++iter) {
    const double lr = cfg.decayed_lr(cfg.lr_field, iter, cfg.iters_pretrain);
    density.set_lr(lr);
    features.set_lr(lr);
    for (RaySpec& r : batch) {
      r.item = items[pick(rng)];
      r.x = std::uniform_int_distribution<int>(0, r.item->intrinsics.width - 1)(rng);
      r.y = std::uniform_int_distribution<int>(0, r.item->intrinsics.height - 1)(rng);
      r.background = Vec3::Zero();
      if (cfg.random_background && !r.item->alpha.empty()) {
        const double a = unit(rng);
        const double b = unit(rng);
        const double c = unit(rng);
        r.background = Vec3(a, b, c);
      }
    }
    for (FieldGrad& g : grads) g.clear();

#pragma omp parallel num_threads(workers)
    {
      FieldGrad& g = grads[omp_get_thread_num()];
      std::vector<double> grad_feature(k, 0.0);
#pragma omp for schedule(static)
      for (int i = 0; i < n; ++i) {
        const RaySpec& r = batch[i];
        const Ray ray = pixel_ray(r.item->intrinsics, r.item->pose, r.x, r.y, march);
        const RayResult res = trajfield::march(field, occ, ray, ray.t_near, ray.t_far, march);
        // Both sides are composited over the ray's background color; a
        // black background reduces this to plain feature regression.
        const double cover = r.item->alpha.empty() ? 1.0 : r.item->alpha.at(0, r.y, r.x);
        double l = 0.0;
        double grad_opacity = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double d = res.feature[c] - r.item->image.at(c, r.y, r.x) +
                           (cover - res.opacity) * r.background[c];
          l += d * d;
          grad_feature[c] = 2.0 * d * norm;
          grad_opacity -= 2.0 * d * norm * r.background[c];
        }
        loss_part[i] = l;
        march_backward(field, occ, ray, ray.t_near, ray.t_far, march, grad_feature, g, grad_opacity);
      }
    }
    for (int w = 1; w < workers; ++w) grads[0].add(grads[w]);

    double loss = 0.0;
    for (double l : loss_part) loss += l;
    loss *= norm;
    curve.push_back(loss);
    if (log) log("pretrain", iter, loss);

    adam_field(density, features, field, grads[0]);
    if ((iter + 1) % cfg.occupancy_interval == 0) rebuild_occupancy(field, occ);
  }
  rebuild_occupancy(field, occ);
  return curve;
}

std::vector<Pose> synth_pose_sequence(const Pose& target, int L, const PoseJitter& jitter,
                                      std::mt19937_64& rng) {
  if (L < 0) throw std::invalid_argument("synth_pose_sequence: L must be >= 0");
  std::vector<Pose> out;
  if (L == 0) return out;

  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto direction = [&] {
    Vec3 d(normal(rng), normal(rng), normal(rng));
    const double len = d.norm();
    return len > 0.0 ? Vec3(d / len) : Vec3(1, 0, 0);
  };
  const Vec3 axis = direction();
  const double angle = unit(rng) * jitter.max_rotation_deg * M_PI / 180.0;
  const Vec3 shift = direction() * (unit(rng) * jitter.max_translation);

  Pose start = target;
  if (angle > 0.0 || shift.squaredNorm() > 0.0) {
    // Rotate the camera about its own center, then move the center.
    const Mat3 c2w = target.rotation.transpose() * Eigen::AngleAxisd(angle, axis).toRotationMatrix();
    const Vec3 center = target.center() + shift;
    start.rotation = c2w.transpose();
    start.translation = -start.rotation * center;
  }
  for (int i = 0; i < L; ++i) out.push_back(interpolate(start, target, static_cast<double>(i) / L));
  return out;
}

namespace {

struct JointForward {
  std::vector<FeatureFrame> frames;  // preceding, then current
  std::vector<WarpedFeatureMap> warps;
  ConvCache cache;
  FeatureMap prediction;
  FeatureMap target_patch;
  double loss = 0.0;
};

PipelineConfig check_joint(const VoxelField& field, const ConvRenderer& renderer,
                           const JointSample& s, const ImageRGB& target,
                           const CameraIntrinsics& intr_high, const PipelineConfig& pcfg) {
  pcfg.validate();
  if (field.channels() != pcfg.channels)
    throw std::invalid_argument("joint: field channels disagree with the pipeline config");
  if (renderer.input_channels() != renderer_input_channels(pcfg.buffer_len, pcfg.channels))
    throw std::invalid_argument("joint: renderer input channels disagree with the pipeline config");
  if (static_cast<int>(s.preceding.size()) != pcfg.buffer_len)
    throw std::invalid_argument("joint: need exactly L preceding poses");
  if (target.height() != intr_high.height || target.width() != intr_high.width)
    throw std::invalid_argument("joint: target image does not match the intrinsics");
  if (s.patch_y < 0 || s.patch_x < 0 || s.patch_y + s.patch > intr_high.height ||
      s.patch_x + s.patch > intr_high.width)
    throw std::invalid_argument("joint: patch does not fit inside the image");
  return pcfg;
}

JointForward joint_forward(const VoxelField& field, const OccupancyGrid& occ,
                           const ConvRenderer& renderer, const JointSample& s,
                           const ImageRGB& target, const CameraIntrinsics& intr_high,
                           const PipelineConfig& pcfg, JointGeometry& geometry) {
  check_joint(field, renderer, s, target, intr_high, pcfg);
  const CameraIntrinsics intr_low = lowres_intrinsics(intr_high, pcfg.scale);
  const int L = pcfg.buffer_len;
  const bool build = geometry.empty();
  if (!build && (static_cast<int>(geometry.intervals.size()) != L + 1 ||
                 static_cast<int>(geometry.warps.size()) != L))
    throw std::invalid_argument("joint: geometry does not match the buffer length");

  JointForward fw;
  for (int j = 0; j <= L; ++j) {
    const Pose& pose = j < L ? s.preceding[j] : s.pose;
    if (build) {
      if (pcfg.use_guidance && j > 0)
        geometry.intervals.push_back(build_intervals(fw.frames.back(), pose, intr_low,
                                                     pcfg.resolved_epsilon(), pcfg.march,
                                                     pcfg.opacity_valid));
      else
        geometry.intervals.push_back(IntervalMap::full(intr_low.width, intr_low.height));
    }
    fw.frames.push_back(render_frame(field, occ, pose, intr_low, geometry.intervals[j], pcfg.march));
  }
  for (int j = 0; j < L; ++j) {
    if (build) {
      geometry.warps.push_back(warp_to_highres(fw.frames[j], s.pose, intr_high, pcfg.opacity_valid));
      fw.warps.push_back(geometry.warps.back());
    } else {
      fw.warps.push_back(apply_warp(fw.frames[j], geometry.warps[j]));
    }
  }
  const FeatureMap upsampled = upsample(fw.frames[L].features, pcfg.scale);
  const FeatureMap stacked = stack_renderer_input(fw.warps, upsampled);
  const FeatureMap input = stacked.crop(s.patch_y, s.patch_x, s.patch, s.patch);
  fw.prediction = renderer.forward(input, &fw.cache);
  fw.target_patch = target.crop(s.patch_y, s.patch_x, s.patch, s.patch);
  fw.loss = mse(fw.prediction, fw.target_patch);
  return fw;
}

void march_frame_backward(const VoxelField& field, const OccupancyGrid& occ,
                          const FeatureFrame& frame, const IntervalMap& intervals,
                          const FeatureMap& grad, const MarchConfig& march, FieldGrad& accum) {
  const int k = grad.channels();
  std::vector<double> g(k);
  for (int y = 0; y < grad.height(); ++y)
    for (int x = 0; x < grad.width(); ++x) {
      bool any = false;
      for (int c = 0; c < k; ++c) {
        g[c] = grad.at(c, y, x);
        any |= g[c] != 0.0;
      }
      if (!any) continue;
      const Ray ray = pixel_ray(frame.intrinsics, frame.pose, x, y, march);
      const auto [t0, t1] = interval_bounds(intervals.at(x, y), ray);
      march_backward(field, occ, ray, t0, t1, march, g, accum);
    }
}

}  // namespace

double joint_loss(const VoxelField& field, const OccupancyGrid& occ, const ConvRenderer& renderer,
                  const JointSample& sample, const ImageRGB& target,
                  const CameraIntrinsics& intr_high, const PipelineConfig& pcfg,
                  JointGeometry& geometry) {
  return joint_forward(field, occ, renderer, sample, target, intr_high, pcfg, geometry).loss;
}

double joint_forward_backward(const VoxelField& field, const OccupancyGrid& occ,
                              const ConvRenderer& renderer, const JointSample& sample,
                              const ImageRGB& target, const CameraIntrinsics& intr_high,
                              const PipelineConfig& pcfg, JointGeometry& geometry,
                              FieldGrad& field_grad, std::span<double> renderer_grad) {
  const JointForward fw =
      joint_forward(field, occ, renderer, sample, target, intr_high, pcfg, geometry);
  const int L = pcfg.buffer_len;
  const int K = pcfg.channels;
  const FeatureFrame& current = fw.frames[L];
  const int hl = current.height();
  const int wl = current.width();

  FeatureMap grad_out = fw.prediction;
  const double norm = 2.0 / static_cast<double>(grad_out.size());
  for (std::size_t i = 0; i < grad_out.size(); ++i)
    grad_out.data()[i] = norm * (fw.prediction.data()[i] - fw.target_patch.data()[i]);
  const FeatureMap grad_patch = renderer.backward(fw.cache, grad_out, renderer_grad);

  FeatureMap grad_full(grad_patch.channels(), intr_high.height, intr_high.width);
  grad_full.add_at(grad_patch, sample.patch_y, sample.patch_x);

  // Validity channels carry geometry only; their gradient is dropped.
  const FeatureMap grad_cur =
      upsample_backward(grad_full.slice_channels(L * (K + 1), K), pcfg.scale, hl, wl);
  march_frame_backward(field, occ, current, geometry.intervals[L], grad_cur, pcfg.march, field_grad);
  for (int j = 0; j < L; ++j) {
    const FeatureMap g = warp_backward(geometry.warps[j], grad_full.slice_channels(j * (K + 1), K), hl, wl);
    march_frame_backward(field, occ, fw.frames[j], geometry.intervals[j], g, pcfg.march, field_grad);
  }
  return fw.loss;
}

JointOptimizer::JointOptimizer(const VoxelField& field, const ConvRenderer& r, const TrainConfig& cfg)
    : density(field.raw_density.size(), cfg.field_adam()),
      features(field.features.size(), cfg.field_adam()),
      renderer(r.params.size(), cfg.renderer_adam()),
      field_grad(field.make_grad()),
      renderer_grad(r.params.size(), 0.0) {}

JointSample sample_joint(const DatasetItem& item, const TrainConfig& cfg, int scale,
                         int buffer_len, double scene_radius, std::mt19937_64& rng) {
  const int h = item.intrinsics.height;
  const int w = item.intrinsics.width;
  if (cfg.patch > h || cfg.patch > w)
    throw std::invalid_argument("joint: patch " + std::to_string(cfg.patch) + " exceeds the image");
  JointSample s;
  s.pose = item.pose;
  s.patch = cfg.patch;
  s.preceding = synth_pose_sequence(
      item.pose, buffer_len,
      {cfg.seq_max_rotation_deg, cfg.seq_max_translation * scene_radius}, rng);
  s.patch_y = scale * std::uniform_int_distribution<int>(0, (h - cfg.patch) / scale)(rng);
  s.patch_x = scale * std::uniform_int_distribution<int>(0, (w - cfg.patch) / scale)(rng);
  return s;
}

double joint_step(VoxelField& field, const OccupancyGrid& occ, ConvRenderer& renderer,
                  const DatasetItem& item, const TrainConfig& cfg, const PipelineConfig& pcfg,
                  std::mt19937_64& rng, JointOptimizer& opt) {
  PipelineConfig p = pcfg;
  p.use_guidance = pcfg.use_guidance && cfg.joint_guidance;
  const JointSample s =
      sample_joint(item, cfg, p.scale, p.buffer_len, field.bounds().half_diagonal(), rng);
  opt.field_grad.clear();
  std::fill(opt.renderer_grad.begin(), opt.renderer_grad.end(), 0.0);
  JointGeometry geometry;
  const double loss = joint_forward_backward(field, occ, renderer, s, item.image, item.intrinsics,
                                             p, geometry, opt.field_grad, opt.renderer_grad);
  adam_field(opt.density, opt.features, field, opt.field_grad);
  opt.renderer.step(renderer.params, opt.renderer_grad);
  return loss;
}

std::vector<double> joint_train(VoxelField& field, OccupancyGrid& occ, ConvRenderer& renderer,
                                const Dataset& ds, const TrainConfig& cfg,
                                const PipelineConfig& pcfg, const TrainLog& log) {
  const auto items = train_items(ds);
  std::vector<double> curve;
  if (cfg.iters_joint == 0) return curve;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);
  JointOptimizer opt(field, renderer, cfg);
  for (int iter = 0; iter < cfg.iters_joint; ++iter) {
    const DatasetItem& item = *items[pick(rng)];
    const double lr_field = cfg.decayed_lr(cfg.lr_field, iter, cfg.iters_joint);
    opt.density.set_lr(lr_field);
    opt.features.set_lr(lr_field);
    opt.renderer.set_lr(cfg.decayed_lr(cfg.lr_renderer, iter, cfg.iters_joint));
    const double loss = joint_step(field, occ, renderer, item, cfg, pcfg, rng, opt);
    curve.push_back(loss);
    if (log) log("joint", iter, loss);
    if ((iter + 1) % cfg.occupancy_interval == 0) rebuild_occupancy(field, occ);
  }
  rebuild_occupancy(field, occ);
  return curve;
}

namespace {

double elevation_deg(const Vec3& offset) {
  return std::asin(std::clamp(offset.z() / offset.norm(), -1.0, 1.0)) * 180.0 / M_PI;
}

}  // namespace

ViewingZone ViewingZone::from_dataset(const Dataset& ds) {
  const auto items = train_items(ds);
  ViewingZone z;
  z.target = ds.bounds.center();
  z.radius_min = z.elevation_min_deg = std::numeric_limits<double>::infinity();
  z.radius_max = z.elevation_max_deg = -std::numeric_limits<double>::infinity();
  for (const DatasetItem* it : items) {
    const Vec3 off = it->pose.center() - z.target;
    z.radius_min = std::min(z.radius_min, off.norm());
    z.radius_max = std::max(z.radius_max, off.norm());
    z.elevation_min_deg = std::min(z.elevation_min_deg, elevation_deg(off));
    z.elevation_max_deg = std::max(z.elevation_max_deg, elevation_deg(off));
  }
  return z;
}

Pose ViewingZone::sample(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double r = radius_min + unit(rng) * (radius_max - radius_min);
  const double el = elevation_min_deg + unit(rng) * (elevation_max_deg - elevation_min_deg);
  const double az = unit(rng) * 360.0;
  return orbit_pose(target, r, az, el);
}

bool ViewingZone::contains(const Pose& pose, double tol) const {
  const Vec3 off = pose.center() - target;
  const double r = off.norm();
  const double el = elevation_deg(off);
  const Vec3 forward = pose.rotation.row(2).transpose();
  return r >= radius_min - tol && r <= radius_max + tol && el >= elevation_min_deg - tol &&
         el <= elevation_max_deg + tol && forward.dot(-off / r) > 1.0 - 1e-6;
}

Dataset distill(const VoxelField& field, const OccupancyGrid& occ, const ViewingZone& zone, int n,
                const CameraIntrinsics& intr, const MarchConfig& march, std::mt19937_64& rng) {
  if (n < 0) throw std::invalid_argument("distill: n must be >= 0");
  Dataset ds;
  ds.bounds = field.bounds();
  ds.near = march.near;
  ds.far = march.far;
  for (int i = 0; i < n; ++i) {
    DatasetItem it;
    it.pose = zone.sample(rng);
    it.intrinsics = intr;
    it.image = render_rgb(field, occ, it.pose, intr, march);
    it.pseudo = true;
    ds.items.push_back(std::move(it));
  }
  return ds;
}

SceneModel train_model(const Dataset& ds, const TrainConfig& cfg, PipelineConfig pcfg,
                       const ModelSpec& spec, const TrainLog& log) {
  if (ds.empty()) throw std::invalid_argument("train: empty dataset");
  cfg.validate(pcfg.scale);
  pcfg.march.near = ds.near;
  pcfg.march.far = ds.far;
  pcfg.validate();

  SceneModel m;
  m.camera = ds.items.front().intrinsics;
  for (const DatasetItem& it : ds.items)
    if (!(it.intrinsics == m.camera)) throw std::invalid_argument("train: items must share intrinsics");
  lowres_intrinsics(m.camera, pcfg.scale);
  m.pipeline = pcfg;
  m.field = VoxelField::initialized(spec.resolution, ds.bounds, pcfg.channels, cfg.seed);
  m.occupancy = OccupancyGrid(spec.occupancy_resolution, spec.occupancy_threshold);
  m.rebuild_occupancy();

  pretrain(m.field, m.occupancy, ds, cfg, pcfg.march, log);

  Dataset augmented = ds;
  if (cfg.distill_count > 0) {
    std::mt19937_64 rng(cfg.seed + 17);
    Dataset pseudo = distill(m.field, m.occupancy, ViewingZone::from_dataset(ds), cfg.distill_count,
                             m.camera, pcfg.march, rng);
    for (DatasetItem& it : pseudo.items) augmented.items.push_back(std::move(it));
  }

  m.renderer = ConvRenderer::init(cfg.seed, default_plan(renderer_input_channels(pcfg.buffer_len, pcfg.channels)));
  joint_train(m.field, m.occupancy, m.renderer, augmented, cfg, pcfg, log);
  return m;
}

}  // namespace trajfield
