#include "support.hpp"
#include "trajfield/metrics.hpp"
#include "trajfield/optimizer.hpp"
#include "trajfield/scene.hpp"
#include "trajfield/trainer.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace trajfield;
using namespace trajfield::test;

namespace {

ImageRGB constant_image(int h, int w, double v) { return ImageRGB(3, h, w, v); }

ImageRGB random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageRGB img(3, h, w);
  for (double& v : img.data()) v = u(rng);
  return img;
}

// Closed-form SSIM of two constant images: the variance and covariance
// terms vanish and their factor becomes C2 / C2.
double constant_ssim(double a, double b) {
  const double c1 = 0.01 * 0.01;
  return (2.0 * a * b + c1) / (a * a + b * b + c1);
}

}  // namespace

TEST(Metrics, PsnrUniformDifference) {
  const ImageRGB a = constant_image(8, 8, 0.3);
  const ImageRGB b = constant_image(8, 8, 0.4);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_EQ(kPsnrCap, 99.0);
  EXPECT_THROW(psnr(a, constant_image(8, 9, 0.3)), std::invalid_argument);
}

TEST(Metrics, PsnrSymmetricOnRandomImages) {
  std::mt19937_64 rng(80);
  for (int i = 0; i < 10; ++i) {
    const ImageRGB a = random_image(12, 10, rng);
    const ImageRGB b = random_image(12, 10, rng);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
  }
}

TEST(Metrics, SsimIdenticalIsOne) {
  std::mt19937_64 rng(81);
  const ImageRGB a = random_image(24, 24, rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Metrics, SsimAnticorrelatedIsNegative) {
  ImageRGB a(3, 32, 32);
  std::mt19937_64 rng(82);
  std::bernoulli_distribution coin(0.5);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const double v = coin(rng) ? 1.0 : 0.0;
      for (int c = 0; c < 3; ++c) a.at(c, y, x) = v;
    }
  ImageRGB b = a;
  for (double& v : b.data()) v = 1.0 - v;
  EXPECT_LT(ssim(a, b), 0.0);
}

TEST(Metrics, SsimConstantsClosedForm) {
  const double expected = constant_ssim(0.5, 0.6);
  EXPECT_NEAR(ssim(constant_image(16, 16, 0.5), constant_image(16, 16, 0.6)), expected, 1e-12);
  EXPECT_NEAR(ssim(constant_image(11, 11, 0.2), constant_image(11, 11, 0.9)), constant_ssim(0.2, 0.9), 1e-12);
}

TEST(Metrics, SsimRejectsSmallImages) {
  EXPECT_THROW(ssim(constant_image(10, 20, 0.5), constant_image(10, 20, 0.5)), std::invalid_argument);
  EXPECT_THROW(ssim(constant_image(20, 20, 0.5), constant_image(20, 21, 0.5)), std::invalid_argument);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<double> p = {0.5, -1.25, 3.0, 0.0};
  const std::vector<double> before = p;
  const std::vector<double> g(4, 0.0);
  Adam opt(p.size(), {});
  for (int i = 0; i < 10; ++i) opt.step(p, g);
  EXPECT_EQ(p, before);
  EXPECT_EQ(opt.steps(), 10);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // With bias correction the first update is lr * g / (|g| + eps').
  std::vector<double> p = {1.0, 1.0};
  Adam opt(2, {0.1, 0.9, 0.999, 1e-8});
  opt.step(p, std::vector<double>{2.0, -0.5});
  EXPECT_NEAR(p[0], 0.9, 1e-8);
  EXPECT_NEAR(p[1], 1.1, 1e-8);
}

TEST(Adam, MinimizesQuadratic) {
  std::vector<double> p = {3.0, -2.0};
  Adam opt(2, {0.05, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 2000; ++i) opt.step(p, std::vector<double>{2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)});
  EXPECT_NEAR(p[0], 1.0, 1e-3);
  EXPECT_NEAR(p[1], -0.5, 1e-3);
}

TEST(TrainConfig, PatchMustDivideByFourScale) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate(4));
  c.patch = 40;
  EXPECT_THROW(c.validate(4), std::invalid_argument);
  EXPECT_NO_THROW(c.validate(2));
  c = TrainConfig{};
  c.iters_joint = -1;
  EXPECT_THROW(c.validate(4), std::invalid_argument);
}

namespace {

Dataset gray_dataset() {
  Dataset ds;
  ds.bounds = Aabb{Vec3::Constant(-1.0), Vec3::Constant(1.0)};
  // Close enough that every pixel ray crosses the bounds.
  std::tie(ds.near, ds.far) = near_far_for_orbit(ds.bounds, 2.2);
  DatasetItem it;
  it.intrinsics = CameraIntrinsics::from_fov_y(40.0, 16, 16);
  it.pose = orbit_pose(Vec3::Zero(), 2.2, 20.0, 30.0);
  it.image = constant_image(16, 16, 0.5);
  ds.items.push_back(it);
  return ds;
}

MarchConfig march_for(const Dataset& ds) {
  MarchConfig m;
  m.near = ds.near;
  m.far = ds.far;
  return m;
}

}  // namespace

TEST(Pretrain, GrayScaleLossDecreasesInWindows) {
  const Dataset ds = gray_dataset();
  VoxelField f = VoxelField::initialized({16, 16, 16}, ds.bounds, 4, 1);
  OccupancyGrid occ({8, 8, 8}, 0.01);
  rebuild_occupancy(f, occ);
  TrainConfig cfg;
  cfg.iters_pretrain = 100;
  cfg.rays_per_batch = 128;
  const auto curve = pretrain(f, occ, ds, cfg, march_for(ds));
  ASSERT_EQ(curve.size(), 100u);
  double prev = std::numeric_limits<double>::infinity();
  for (int w = 0; w < 10; ++w) {
    const double mean = std::accumulate(curve.begin() + 10 * w, curve.begin() + 10 * w + 10, 0.0) / 10.0;
    EXPECT_LT(mean, prev) << "window " << w;
    prev = mean;
  }
}

TEST(Pretrain, ZeroIterationsLeaveFieldUnchanged) {
  const Dataset ds = gray_dataset();
  VoxelField f = VoxelField::initialized({8, 8, 8}, ds.bounds, 4, 2);
  const VoxelField before = f;
  OccupancyGrid occ({4, 4, 4}, 0.01);
  rebuild_occupancy(f, occ);
  TrainConfig cfg;
  cfg.iters_pretrain = 0;
  EXPECT_TRUE(pretrain(f, occ, ds, cfg, march_for(ds)).empty());
  EXPECT_EQ(f.raw_density, before.raw_density);
  EXPECT_EQ(f.features, before.features);
}

TEST(Pretrain, ExtraChannelsGetNoGradient) {
  const Dataset ds = gray_dataset();
  VoxelField f = VoxelField::initialized({8, 8, 8}, ds.bounds, 6, 3);
  const VoxelField before = f;
  OccupancyGrid occ({4, 4, 4}, 0.01);
  rebuild_occupancy(f, occ);
  TrainConfig cfg;
  cfg.iters_pretrain = 20;
  cfg.rays_per_batch = 64;
  pretrain(f, occ, ds, cfg, march_for(ds));
  bool moved = false;
  for (std::size_t v = 0; v < f.voxel_count(); ++v)
    for (int c = 0; c < 6; ++c) {
      const double a = f.features[v * 6 + c];
      const double b = before.features[v * 6 + c];
      if (c >= 3) ASSERT_EQ(a, b);
      else moved = moved || a != b;
    }
  EXPECT_TRUE(moved);
}

TEST(Pretrain, RandomBackgroundFitsCoverage) {
  // A half-covered image: with alpha known, the composite loss pushes the
  // uncovered half towards zero opacity.
  Dataset ds = gray_dataset();
  ds.items[0].alpha = FeatureMap(1, 16, 16, 1.0);
  for (int y = 0; y < 16; ++y)
    for (int x = 8; x < 16; ++x) {
      ds.items[0].alpha.at(0, y, x) = 0.0;
      for (int c = 0; c < 3; ++c) ds.items[0].image.at(c, y, x) = 0.0;
    }
  VoxelField f = VoxelField::initialized({16, 16, 16}, ds.bounds, 3, 4);
  OccupancyGrid occ({8, 8, 8}, 0.01);
  rebuild_occupancy(f, occ);
  TrainConfig cfg;
  cfg.iters_pretrain = 300;
  cfg.random_background = true;
  cfg.rays_per_batch = 256;
  const MarchConfig m = march_for(ds);
  pretrain(f, occ, ds, cfg, m);
  const DatasetItem& it = ds.items[0];
  double covered = 0.0;
  double empty = 0.0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      const Ray ray = pixel_ray(it.intrinsics, it.pose, x, y, m);
      const double o = march(f, occ, ray, ray.t_near, ray.t_far, m).opacity;
      (x < 8 ? covered : empty) += o / 128.0;
    }
  EXPECT_GT(covered, 0.8);
  EXPECT_LT(empty, 0.2);
}

TEST(PoseSequence, ZeroJitterRepeatsTarget) {
  std::mt19937_64 rng(90);
  const Pose target = orbit_pose(Vec3::Zero(), 3.0, 40.0, 20.0);
  const auto seq = synth_pose_sequence(target, 3, {}, rng);
  ASSERT_EQ(seq.size(), 3u);
  for (const Pose& p : seq) {
    EXPECT_LT((p.rotation - target.rotation).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((p.translation - target.translation).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_TRUE(synth_pose_sequence(target, 0, {5.0, 0.1}, rng).empty());
  EXPECT_THROW(synth_pose_sequence(target, -1, {}, rng), std::invalid_argument);
}

TEST(PoseSequence, RotationsStayOrthonormalAndWithinBounds) {
  std::mt19937_64 rng(91);
  const PoseJitter jitter{6.0, 0.2};
  for (int i = 0; i < 1000; ++i) {
    const Pose target = orbit_pose(Vec3::Zero(), 3.0, 360.0 * (i % 37) / 37.0, 10.0 + i % 50);
    const auto seq = synth_pose_sequence(target, 2, jitter, rng);
    ASSERT_EQ(seq.size(), 2u);
    for (const Pose& p : seq) {
      const double ortho = (p.rotation.transpose() * p.rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
      ASSERT_LT(ortho, 1e-6);
      ASSERT_NEAR(p.rotation.determinant(), 1.0, 1e-6);
      const Mat3 rel = p.rotation * target.rotation.transpose();
      const double angle = std::acos(std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0));
      ASSERT_LE(angle, 6.0 * M_PI / 180.0 + 1e-9);
      ASSERT_LE((p.center() - target.center()).norm(), 0.2 + 1e-9);
    }
    // The oldest pose is the farthest from the target.
    EXPECT_GE((seq[0].center() - target.center()).norm() + 1e-12,
              (seq[1].center() - target.center()).norm());
  }
}

namespace {

struct JointSetup {
  VoxelField field;
  OccupancyGrid occ = OccupancyGrid::all_occupied(Aabb{Vec3::Constant(-1.0), Vec3::Constant(1.0)});
  PipelineConfig pcfg;
  ConvRenderer renderer;
  CameraIntrinsics intr = CameraIntrinsics::from_fov_y(40.0, 16, 16);
  JointSample sample;
  ImageRGB target;

  explicit JointSetup(std::uint64_t seed) {
    const Aabb unit{Vec3::Constant(-1.0), Vec3::Constant(1.0)};
    field = random_field({8, 8, 8}, unit, 3, seed, -1.0, 1.5);
    pcfg.scale = 2;
    pcfg.channels = 3;
    pcfg.buffer_len = 2;
    pcfg.march.step = 0.05;
    std::tie(pcfg.march.near, pcfg.march.far) = near_far_for_orbit(unit, 2.8);
    pcfg.opacity_valid = 0.2;
    renderer = ConvRenderer::init(seed, default_plan(renderer_input_channels(2, 3)));
    sample.pose = orbit_pose(Vec3::Zero(), 2.8, 30.0, 25.0);
    sample.preceding = {orbit_pose(Vec3::Zero(), 2.8, 26.0, 23.0), orbit_pose(Vec3::Zero(), 2.8, 28.0, 24.0)};
    sample.patch = 16;
    std::mt19937_64 rng(seed);
    target = random_image(16, 16, rng);
  }
};

}  // namespace

TEST(Joint, LossIsFiniteAndNonNegative) {
  for (std::uint64_t seed : {1, 2, 3}) {
    JointSetup s(seed);
    JointGeometry geo;
    const double l = joint_loss(s.field, s.occ, s.renderer, s.sample, s.target, s.intr, s.pcfg, geo);
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_GE(l, 0.0);
    EXPECT_EQ(geo.intervals.size(), 3u);
    EXPECT_EQ(geo.warps.size(), 2u);
  }
}

TEST(Joint, RejectsPatchOutsideImage) {
  JointSetup s(4);
  s.sample.patch_x = 4;
  JointGeometry geo;
  EXPECT_THROW(joint_loss(s.field, s.occ, s.renderer, s.sample, s.target, s.intr, s.pcfg, geo),
               std::invalid_argument);
}

TEST(Joint, FiniteDifferenceThroughWholeGraph) {
  JointSetup s(5);
  JointGeometry geo;
  joint_loss(s.field, s.occ, s.renderer, s.sample, s.target, s.intr, s.pcfg, geo);
  FieldGrad fg = s.field.make_grad();
  std::vector<double> rg(s.renderer.parameter_count(), 0.0);
  joint_forward_backward(s.field, s.occ, s.renderer, s.sample, s.target, s.intr, s.pcfg, geo, fg, rg);
  auto loss = [&] { return joint_loss(s.field, s.occ, s.renderer, s.sample, s.target, s.intr, s.pcfg, geo); };

  std::vector<std::pair<double*, double>> params;
  for (std::size_t i = 0; i < fg.raw_density.size(); ++i)
    if (std::abs(fg.raw_density[i]) > 1e-8) params.emplace_back(&s.field.raw_density[i], fg.raw_density[i]);
  for (std::size_t i = 0; i < fg.features.size(); ++i)
    if (std::abs(fg.features[i]) > 1e-8) params.emplace_back(&s.field.features[i], fg.features[i]);
  ASSERT_GT(params.size(), 20u);
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
  for (int n = 0; n < 5; ++n) {
    auto [p, g] = params[pick(rng)];
    EXPECT_LT(rel_err(g, central_diff(loss, *p, 1e-4)), 1e-2);
  }
}

TEST(Joint, PrecedingFramesReceiveGradient) {
  // Density in front of the previous cameras only matters through the warps.
  JointSetup s(7);
  JointGeometry geo;
  FieldGrad with = s.field.make_grad();
  std::vector<double> rg(s.renderer.parameter_count(), 0.0);
  joint_forward_backward(s.field, s.occ, s.renderer, s.sample, s.target, s.intr, s.pcfg, geo, with, rg);
  JointSetup t(7);
  t.sample.preceding.clear();
  t.pcfg.buffer_len = 0;
  t.renderer = ConvRenderer::init(7, default_plan(renderer_input_channels(0, 3)));
  JointGeometry geo2;
  FieldGrad without = t.field.make_grad();
  std::vector<double> rg2(t.renderer.parameter_count(), 0.0);
  joint_forward_backward(t.field, t.occ, t.renderer, t.sample, t.target, t.intr, t.pcfg, geo2, without, rg2);
  std::size_t only_with = 0;
  for (std::size_t i = 0; i < with.features.size(); ++i)
    if (with.features[i] != 0.0 && without.features[i] == 0.0) ++only_with;
  EXPECT_GT(only_with, 0u);
}

TEST(Joint, ConstantPredictorLimit) {
  // All weights zero: the output is sigmoid(final bias) everywhere, so
  // training only that bias converges to the per-channel patch mean and the
  // loss to the patch variance.
  JointSetup s(8);
  std::fill(s.renderer.params.begin(), s.renderer.params.end(), 0.0);
  const std::size_t last = s.renderer.plan().size() - 1;
  const std::size_t off = s.renderer.bias_offset(last);
  Adam opt(3, {0.05, 0.9, 0.999, 1e-8});
  JointGeometry geo;
  double l = 0.0;
  for (int i = 0; i < 1500; ++i) {
    FieldGrad fg = s.field.make_grad();
    std::vector<double> rg(s.renderer.parameter_count(), 0.0);
    l = joint_forward_backward(s.field, s.occ, s.renderer, s.sample, s.target, s.intr, s.pcfg, geo, fg, rg);
    opt.step(std::span<double>(s.renderer.params).subspan(off, 3), std::span<const double>(rg).subspan(off, 3));
  }
  double variance = 0.0;
  const double n = 16.0 * 16.0;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (double v : s.target.plane(c)) mean += v / n;
    for (double v : s.target.plane(c)) variance += (v - mean) * (v - mean) / (3.0 * n);
  }
  EXPECT_NEAR(l, variance, 1e-4 * variance + 1e-6);
}

TEST(Distill, ZeroCountIsEmpty) {
  const Aabb unit{Vec3::Constant(-1.0), Vec3::Constant(1.0)};
  const VoxelField f = random_field({4, 4, 4}, unit, 3, 9);
  std::mt19937_64 rng(9);
  const Dataset d = distill(f, OccupancyGrid::all_occupied(unit), ViewingZone{}, 0,
                            CameraIntrinsics::from_fov_y(40, 8, 8), MarchConfig{}, rng);
  EXPECT_TRUE(d.empty());
  EXPECT_THROW(distill(f, OccupancyGrid::all_occupied(unit), ViewingZone{}, -1,
                       CameraIntrinsics::from_fov_y(40, 8, 8), MarchConfig{}, rng),
               std::invalid_argument);
}

TEST(Distill, PseudoImagesAreFieldRenders) {
  const AnalyticScene scene = AnalyticScene::preset("spheres");
  const VoxelField f = bake(scene, {16, 16, 16}, scene.bounds, 3);
  OccupancyGrid occ({8, 8, 8}, 0.01);
  rebuild_occupancy(f, occ);
  MarchConfig m;
  std::tie(m.near, m.far) = near_far_for_orbit(scene.bounds, 3.2);
  ViewingZone zone{Vec3::Zero(), 3.0, 3.4, 15.0, 60.0};
  const CameraIntrinsics intr = CameraIntrinsics::from_fov_y(40, 12, 12);
  std::mt19937_64 rng(10);
  const Dataset d = distill(f, occ, zone, 3, intr, m, rng);
  ASSERT_EQ(d.size(), 3u);
  for (const DatasetItem& it : d.items) {
    EXPECT_TRUE(it.pseudo);
    EXPECT_TRUE(zone.contains(it.pose));
    EXPECT_EQ(it.image, render_rgb(f, occ, it.pose, intr, m));
  }
}

TEST(Distill, SampledPosesStayInZone) {
  const ViewingZone zone{Vec3(0.1, -0.2, 0.3), 2.5, 3.5, 10.0, 70.0};
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const Pose p = zone.sample(rng);
    ASSERT_TRUE(zone.contains(p)) << i;
    ASSERT_TRUE(p.is_valid(1e-9));
  }
  EXPECT_FALSE(zone.contains(orbit_pose(zone.target, 5.0, 0.0, 30.0)));
  EXPECT_FALSE(zone.contains(orbit_pose(zone.target, 3.0, 0.0, 85.0)));
}

TEST(Distill, ZoneFromDatasetCoversTrainCameras) {
  const AnalyticScene scene = AnalyticScene::preset("spheres");
  std::mt19937_64 rng(12);
  const Dataset ds = make_dataset(scene, 10, OrbitSampling{}, CameraIntrinsics::from_fov_y(40, 8, 8), 0.05, rng);
  const ViewingZone zone = ViewingZone::from_dataset(ds);
  for (const DatasetItem& it : ds.items) EXPECT_TRUE(zone.contains(it.pose, 1e-6));
}

TEST(Train, SameSeedSameModel) {
  const AnalyticScene scene = AnalyticScene::preset("boxes");
  std::mt19937_64 rng(13);
  const Dataset ds = make_dataset(scene, 4, OrbitSampling{}, CameraIntrinsics::from_fov_y(40, 16, 16), 0.02, rng);
  TrainConfig cfg;
  cfg.iters_pretrain = 5;
  cfg.rays_per_batch = 64;
  cfg.iters_joint = 2;
  cfg.patch = 8;
  cfg.seed = 13;
  PipelineConfig pcfg;
  pcfg.scale = 2;
  ModelSpec spec;
  spec.resolution = {8, 8, 8};
  spec.occupancy_resolution = {4, 4, 4};
  const SceneModel a = train_model(ds, cfg, pcfg, spec);
  const SceneModel b = train_model(ds, cfg, pcfg, spec);
  EXPECT_EQ(a.field.raw_density, b.field.raw_density);
  EXPECT_EQ(a.field.features, b.field.features);
  EXPECT_EQ(a.renderer.params, b.renderer.params);
  EXPECT_EQ(a.pipeline.march.near, ds.near);
}
