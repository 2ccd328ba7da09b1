#include "support.hpp"
#include "trajfield/checkpoint.hpp"
#include "trajfield/io.hpp"
#include "trajfield/metrics.hpp"
#include "trajfield/model.hpp"
#include "trajfield/scene.hpp"
#include "trajfield/volren.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <json.hpp>

using namespace trajfield;
using namespace trajfield::test;
namespace fs = std::filesystem;

namespace {

AnalyticScene single(Primitive p) {
  AnalyticScene s;
  s.primitives = {p};
  s.bounds = Aabb{Vec3::Constant(-1.5), Vec3::Constant(1.5)};
  return s;
}

Primitive sphere(double radius, double density, Vec3 color) {
  Primitive p;
  p.kind = PrimitiveKind::kSphere;
  p.size = Vec3::Constant(radius);
  p.density = density;
  p.color = color;
  return p;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST(Scene, PresetsValidate) {
  for (const std::string& name : AnalyticScene::preset_names()) {
    const AnalyticScene s = AnalyticScene::preset(name);
    EXPECT_NO_THROW(s.validate()) << name;
    EXPECT_FALSE(s.primitives.empty());
  }
  EXPECT_THROW(AnalyticScene::preset("teapot"), std::invalid_argument);
  AnalyticScene bad = single(sphere(0.5, -1.0, Vec3::Constant(0.5)));
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = single(sphere(0.5, 1.0, Vec3(0.5, 1.2, 0.0)));
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Scene, FirstPrimitiveWins) {
  AnalyticScene s = single(sphere(0.5, 3.0, Vec3(1, 0, 0)));
  s.primitives.push_back(sphere(0.8, 7.0, Vec3(0, 1, 0)));
  Vec3 c;
  EXPECT_EQ(s.sample(Vec3::Zero(), c), 3.0);
  EXPECT_EQ(c, Vec3(1, 0, 0));
  EXPECT_EQ(s.sample(Vec3(0.7, 0, 0), c), 7.0);
  EXPECT_EQ(s.sample(Vec3(1.0, 0, 0), c), 0.0);
}

TEST(Oracle, OpaqueSphereCenterRayShowsColor) {
  const Vec3 color(0.9, 0.3, 0.1);
  const AnalyticScene s = single(sphere(0.6, 500.0, color));
  const CameraIntrinsics intr = CameraIntrinsics::from_fov_y(30.0, 9, 9);
  const Pose pose = Pose::look_at(Vec3(0, -3, 0), Vec3::Zero());
  const OracleRender r = oracle_render(s, pose, intr, 1.0 / 512.0, 0.5, 6.0);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.image.at(c, 4, 4), color[c], 1e-3);
  EXPECT_NEAR(r.opacity.at(0, 4, 4), 1.0, 1e-3);
  EXPECT_NEAR(r.depth.at(0, 4, 4), 2.4, 0.01);
}

TEST(Oracle, MissingRayIsBlack) {
  const AnalyticScene s = single(sphere(0.2, 50.0, Vec3::Constant(1.0)));
  const CameraIntrinsics intr = CameraIntrinsics::from_fov_y(60.0, 9, 9);
  const Pose pose = Pose::look_at(Vec3(0, -3, 0), Vec3::Zero());
  const OracleRender r = oracle_render(s, pose, intr, 0.01, 0.5, 6.0);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(r.image.at(c, 0, 0), 0.0);
  EXPECT_EQ(r.opacity.at(0, 0, 0), 0.0);
  EXPECT_EQ(r.depth.at(0, 0, 0), 0.0);
}

TEST(Oracle, HomogeneousBoxMatchesBeerLambert) {
  // A box enclosing the camera's view: each ray's chord is the distance from
  // the box entry to the far face, computed here by slab intersection.
  Primitive box;
  box.kind = PrimitiveKind::kBox;
  box.size = Vec3(4.0, 1.0, 4.0);
  box.density = 0.7;
  box.color = Vec3(0.2, 0.4, 0.6);
  AnalyticScene s = single(box);
  s.bounds = Aabb{Vec3::Constant(-5.0), Vec3::Constant(5.0)};
  const CameraIntrinsics intr = CameraIntrinsics::from_fov_y(20.0, 8, 8);
  const Pose pose = Pose::look_at(Vec3(0, -3, 0), Vec3::Zero());
  const OracleRender r = oracle_render(s, pose, intr, 1e-4, 0.1, 10.0);
  const Vec3 cam = pose.center();
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const Vec3 d_cam((x + 0.5 - intr.cx) / intr.fx, (y + 0.5 - intr.cy) / intr.fy, 1.0);
      const Vec3 d = (pose.rotation.transpose() * d_cam).normalized();
      double t_in = 0.0;
      double t_out = 1e9;
      for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-12) continue;
        double t0 = (-box.size[a] - cam[a]) / d[a];
        double t1 = (box.size[a] - cam[a]) / d[a];
        if (t0 > t1) std::swap(t0, t1);
        t_in = std::max(t_in, t0);
        t_out = std::min(t_out, t1);
      }
      const double expected = 1.0 - std::exp(-box.density * (t_out - t_in));
      EXPECT_NEAR(r.opacity.at(0, y, x), expected, 1e-4) << x << "," << y;
    }
}

TEST(Bake, ActivatedValuesMatchScene) {
  const AnalyticScene s = AnalyticScene::preset("sphere");
  const VoxelField f = bake(s, {32, 32, 32}, s.bounds, 6);
  int inside = 0;
  for (int k = 0; k < 32; ++k)
    for (int j = 0; j < 32; ++j)
      for (int i = 0; i < 32; ++i) {
        const Vec3 p = f.voxel_center(i, j, k);
        Vec3 color;
        const double sigma = s.sample(p, color);
        const FieldSample q = f.query(p);
        if (sigma > 0.0) {
          ++inside;
          EXPECT_NEAR(q.sigma, sigma, 1e-4);
          for (int c = 0; c < 3; ++c) EXPECT_NEAR(q.feature[c], color[c], 1e-12);
        } else {
          EXPECT_LE(q.sigma, softplus(kBakeRawFloor) * (1 + 1e-12));
          // Empty space carries the nearest surface color.
          for (int c = 0; c < 3; ++c) EXPECT_NEAR(q.feature[c], s.primitives[0].color[c], 1e-12);
        }
        for (int c = 3; c < 6; ++c) EXPECT_EQ(q.feature[c], 0.0);
      }
  EXPECT_GT(inside, 100);
}

TEST(Bake, EmptySceneIsTransparent) {
  AnalyticScene s;
  s.bounds = Aabb{Vec3::Constant(-1.0), Vec3::Constant(1.0)};
  const VoxelField f = bake(s, {8, 8, 8}, s.bounds, 3);
  for (double r : f.raw_density) EXPECT_EQ(r, kBakeRawFloor);
  EXPECT_LE(f.query(Vec3(0.1, 0.2, 0.3)).sigma, softplus(-15.0) * (1 + 1e-12));
}

namespace {

double baked_vs_oracle(double step, int res) {
  const AnalyticScene s = AnalyticScene::preset("sphere");
  const VoxelField f = bake(s, {res, res, res}, s.bounds, 3);
  const OccupancyGrid occ = OccupancyGrid::all_occupied(s.bounds);
  MarchConfig m;
  m.step = step;
  m.min_transmittance = 0.0;
  m.max_samples = 100000;
  std::tie(m.near, m.far) = near_far_for_orbit(s.bounds, 3.2);
  const CameraIntrinsics intr = CameraIntrinsics::from_fov_y(40.0, 24, 24);
  const Pose pose = orbit_pose(Vec3::Zero(), 3.2, 35.0, 30.0);
  const FeatureFrame fr = render_frame(f, occ, pose, intr, IntervalMap::full(24, 24), m);
  const OracleRender ref = oracle_render(s, pose, intr, step, m.near, m.far);
  return psnr(fr.features.slice_channels(0, 3), ref.image);
}

}  // namespace

TEST(Bake, BakedSphereRendersLikeOracle) {
  // Grid spacing matches the march step.
  EXPECT_GE(baked_vs_oracle(1.0 / 128.0, 128), 30.0);
}

TEST(Bake, AgreementImprovesAsStepShrinks) {
  // The field resolution follows the step so interpolation error shrinks too.
  const double coarse = baked_vs_oracle(1.0 / 32.0, 32);
  const double mid = baked_vs_oracle(1.0 / 64.0, 64);
  const double fine = baked_vs_oracle(1.0 / 128.0, 128);
  EXPECT_LT(coarse, mid);
  EXPECT_LT(mid, fine);
}

TEST(Dataset, OrbitViewsLookAtCenter) {
  const AnalyticScene s = AnalyticScene::preset("mixed");
  const CameraIntrinsics intr = CameraIntrinsics::from_fov_y(40.0, 16, 16);
  std::mt19937_64 rng(20);
  const Dataset ds = make_dataset(s, 12, OrbitSampling{}, intr, 0.02, rng);
  ASSERT_EQ(ds.size(), 12u);
  for (const DatasetItem& it : ds.items) {
    EXPECT_TRUE(it.pose.is_valid(1e-9));
    EXPECT_GE(it.pose.center().z(), 0.0);
    EXPECT_NEAR(it.pose.center().norm(), 3.2, 1e-9);
    const Vec3 pc = it.pose.rotation * s.bounds.center() + it.pose.translation;
    EXPECT_NEAR(intr.fx * pc.x() / pc.z() + intr.cx, intr.cx, 1.0);
    EXPECT_NEAR(intr.fy * pc.y() / pc.z() + intr.cy, intr.cy, 1.0);
    EXPECT_EQ(it.alpha.channels(), 1);
    EXPECT_EQ(it.split, "train");
  }
  std::mt19937_64 again(20);
  const Dataset ds2 = make_dataset(s, 12, OrbitSampling{}, intr, 0.02, again);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(ds.items[i].image, ds2.items[i].image);
    EXPECT_TRUE(ds.items[i].pose.rotation == ds2.items[i].pose.rotation);
  }
  EXPECT_THROW(make_dataset(s, 0, OrbitSampling{}, intr, 0.02, again), std::invalid_argument);
}

TEST(DatasetIo, RoundTrip) {
  const AnalyticScene s = AnalyticScene::preset("spheres");
  const CameraIntrinsics intr = CameraIntrinsics::from_fov_y(40.0, 16, 12);
  std::mt19937_64 rng(21);
  const Dataset ds = make_dataset(s, 3, OrbitSampling{}, intr, 0.02, rng);
  const fs::path dir = temp_dir("dataset_io");
  save_posed_image_dataset(ds, dir);
  const Dataset back = load_posed_image_dataset(dir);
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.near, ds.near);
  EXPECT_EQ(back.far, ds.far);
  EXPECT_TRUE(back.bounds.lo == ds.bounds.lo && back.bounds.hi == ds.bounds.hi);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const DatasetItem& a = ds.items[i];
    const DatasetItem& b = back.items[i];
    EXPECT_TRUE(b.intrinsics == a.intrinsics);
    EXPECT_LT((b.pose.rotation - a.pose.rotation).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((b.pose.translation - a.pose.translation).cwiseAbs().maxCoeff(), 1e-12);
    ASSERT_EQ(b.alpha.channels(), 1);
    for (std::size_t j = 0; j < a.alpha.size(); ++j)
      EXPECT_NEAR(b.alpha.data()[j], a.alpha.data()[j], 0.5 / 255.0 + 1e-12);
    // Straight-alpha quantization: color error scales with coverage.
    for (std::size_t j = 0; j < a.image.size(); ++j) EXPECT_NEAR(b.image.data()[j], a.image.data()[j], 1.5 / 255.0);
  }
}

TEST(DatasetIo, SizeMismatchIsReported) {
  const AnalyticScene s = AnalyticScene::preset("spheres");
  std::mt19937_64 rng(22);
  const Dataset ds = make_dataset(s, 2, OrbitSampling{}, CameraIntrinsics::from_fov_y(40.0, 8, 8), 0.05, rng);
  const fs::path dir = temp_dir("dataset_size");
  save_posed_image_dataset(ds, dir);
  write_png(dir / "images" / "r_0001.png", ImageRGB(3, 9, 8, 0.5));
  try {
    load_posed_image_dataset(dir);
    FAIL() << "expected a size mismatch";
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.kind(), DatasetError::Kind::kSizeMismatch);
  }
}

TEST(DatasetIo, MissingAndMalformedInputs) {
  const fs::path dir = temp_dir("dataset_bad");
  try {
    load_posed_image_dataset(dir);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.kind(), DatasetError::Kind::kMissingFile);
  }
  std::ofstream(dir / "transforms.json") << "{ not json";
  try {
    load_posed_image_dataset(dir);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.kind(), DatasetError::Kind::kMalformed);
  }
  std::ofstream(dir / "transforms.json")
      << R"({"camera_angle_x": 0.7, "w": 8, "h": 8, "frames": [{"file_path": "nope.png",
         "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,3],[0,0,0,1]]}]})";
  try {
    load_posed_image_dataset(dir);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.kind(), DatasetError::Kind::kMissingFile);
  }
}

TEST(DatasetIo, FieldOfViewForm) {
  const fs::path dir = temp_dir("dataset_fov");
  fs::create_directories(dir / "img");
  write_png(dir / "img" / "a.png", ImageRGB(3, 6, 10, 0.25));
  const double fov = 0.8;
  std::ofstream(dir / "transforms.json")
      << R"({"camera_angle_x": 0.8, "frames": [{"file_path": "img/a",
         "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,3],[0,0,0,1]]}]})";
  const Dataset ds = load_posed_image_dataset(dir);
  ASSERT_EQ(ds.size(), 1u);
  const CameraIntrinsics& k = ds.items[0].intrinsics;
  EXPECT_EQ(k.width, 10);
  EXPECT_EQ(k.height, 6);
  EXPECT_NEAR(k.fx, 10.0 / (2.0 * std::tan(fov / 2.0)), 1e-12);
  EXPECT_NEAR(k.fy, k.fx, 1e-12);
  EXPECT_NEAR(k.cx, 5.0, 1e-12);
  EXPECT_NEAR(k.cy, 3.0, 1e-12);
  EXPECT_TRUE(ds.items[0].alpha.empty());
}

TEST(DatasetIo, AlphaIsCompositedOverBlack) {
  const fs::path dir = temp_dir("png_alpha");
  ImageRGB img(3, 2, 2, 0.4);
  FeatureMap alpha(1, 2, 2, 0.5);
  write_png(dir / "a.png", img, &alpha);
  FeatureMap back_alpha;
  const ImageRGB back = read_png(dir / "a.png", &back_alpha);
  ASSERT_EQ(back_alpha.size(), 4u);
  for (double a : back_alpha.data()) EXPECT_NEAR(a, 128.0 / 255.0, 1e-12);
  // Stored straight color 0.8 -> 204, composited: 204/255 * 128/255.
  for (double v : back.data()) EXPECT_NEAR(v, 204.0 / 255.0 * 128.0 / 255.0, 1e-12);
}

TEST(Trajectory, RoundTrip) {
  const fs::path dir = temp_dir("traj");
  std::vector<Pose> poses = {orbit_pose(Vec3::Zero(), 3.0, 10.0, 20.0), orbit_pose(Vec3::Zero(), 3.5, 50.0, 40.0)};
  save_trajectory(poses, dir / "t.json");
  const auto back = load_trajectory(dir / "t.json");
  ASSERT_EQ(back.size(), 2u);
  for (int i = 0; i < 2; ++i) EXPECT_LT((back[i].rotation - poses[i].rotation).cwiseAbs().maxCoeff(), 1e-12);
  std::ofstream(dir / "bad.json") << R"({"poses": 3})";
  EXPECT_THROW(load_trajectory(dir / "bad.json"), DatasetError);
}

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.header = {{"kind", "test"}, {"k", 6}};
  c.blocks = {{"a", {1.0f, -2.5f, 3.25f}}, {"b", {}}, {"c", {0.1f, 1e-30f, -0.0f, 7e20f}}};
  return c;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const fs::path dir = temp_dir("ckpt");
  const Checkpoint c = sample_checkpoint();
  save_checkpoint(c, dir / "c.bin");
  const Checkpoint back = load_checkpoint(dir / "c.bin");
  ASSERT_EQ(back.blocks.size(), c.blocks.size());
  for (std::size_t i = 0; i < c.blocks.size(); ++i) {
    EXPECT_EQ(back.blocks[i].name, c.blocks[i].name);
    ASSERT_EQ(back.blocks[i].values.size(), c.blocks[i].values.size());
    EXPECT_EQ(std::memcmp(back.blocks[i].values.data(), c.blocks[i].values.data(),
                          c.blocks[i].values.size() * sizeof(float)),
              0);
  }
  EXPECT_EQ(back.header["kind"], "test");
  save_checkpoint(back, dir / "d.bin");
  EXPECT_EQ(read_bytes(dir / "c.bin"), read_bytes(dir / "d.bin"));
}

TEST(Checkpoint, LayoutIsLittleEndianFloat32) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  std::uint64_t header_len = 0;
  for (int i = 7; i >= 0; --i) header_len = header_len << 8 | bytes[i];
  const auto header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(header_len));
  ASSERT_EQ(header["blocks"].size(), 3u);
  EXPECT_EQ(header["blocks"][0]["count"], 3);
  EXPECT_EQ(bytes.size(), 8 + header_len + 7 * 4);
  // 1.0f = 0x3F800000, little-endian.
  const std::size_t first = 8 + header_len;
  EXPECT_EQ(bytes[first + 0], 0x00);
  EXPECT_EQ(bytes[first + 3], 0x3F);
  EXPECT_EQ(bytes[first + 2], 0x80);
}

TEST(Checkpoint, DistinctErrors) {
  const fs::path dir = temp_dir("ckpt_err");
  save_checkpoint(sample_checkpoint(), dir / "c.bin");
  auto bytes = read_bytes(dir / "c.bin");

  auto kind_of = [&](const std::vector<std::uint8_t>& b) {
    write_bytes(dir / "x.bin", b);
    try {
      load_checkpoint(dir / "x.bin");
    } catch (const CheckpointError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_EQ(kind_of(truncated), static_cast<int>(CheckpointError::Kind::kLengthMismatch));
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_EQ(kind_of(longer), static_cast<int>(CheckpointError::Kind::kLengthMismatch));

  // Bump the version inside the header text, keeping its length.
  std::string text(bytes.begin(), bytes.end());
  const std::string key = "\"format_version\":1";
  const auto pos = text.find(key);
  ASSERT_NE(pos, std::string::npos);
  text[pos + key.size() - 1] = '2';
  EXPECT_EQ(kind_of(std::vector<std::uint8_t>(text.begin(), text.end())),
            static_cast<int>(CheckpointError::Kind::kVersionMismatch));

  EXPECT_EQ(kind_of({1, 2, 3}), static_cast<int>(CheckpointError::Kind::kTruncated));
  try {
    load_checkpoint(dir / "missing.bin");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::kIo);
  }
}

TEST(Model, CheckpointRoundTrip) {
  SceneModel m;
  m.field = random_field({8, 8, 8}, Aabb{Vec3::Constant(-1.0), Vec3::Constant(1.0)}, 6, 30);
  m.occupancy = OccupancyGrid({4, 4, 4}, 0.02);
  m.rebuild_occupancy();
  m.pipeline.buffer_len = 2;
  m.pipeline.epsilon = 0.12;
  m.renderer = ConvRenderer::init(30, default_plan(renderer_input_channels(2, 6)));
  m.camera = CameraIntrinsics::from_fov_y(40.0, 32, 32);
  const fs::path dir = temp_dir("model");
  save_model(m, dir / "m.bin");
  const SceneModel back = load_model(dir / "m.bin");
  EXPECT_EQ(back.field.resolution().count(), m.field.resolution().count());
  for (std::size_t i = 0; i < m.field.raw_density.size(); ++i)
    ASSERT_EQ(back.field.raw_density[i], static_cast<double>(static_cast<float>(m.field.raw_density[i])));
  for (std::size_t i = 0; i < m.renderer.params.size(); ++i)
    ASSERT_EQ(back.renderer.params[i], static_cast<double>(static_cast<float>(m.renderer.params[i])));
  EXPECT_EQ(back.renderer.plan(), m.renderer.plan());
  EXPECT_EQ(back.pipeline.epsilon, 0.12);
  EXPECT_TRUE(back.camera == m.camera);
  EXPECT_EQ(back.occupancy.occupied_count(), m.occupancy.occupied_count());

  Checkpoint c = to_checkpoint(m);
  c.blocks.pop_back();
  EXPECT_THROW(from_checkpoint(c), CheckpointError);
}
