#pragma once

#include "trajfield/field.hpp"
#include "trajfield/model.hpp"
#include "trajfield/neural_render.hpp"
#include "trajfield/optimizer.hpp"
#include "trajfield/pipeline.hpp"
#include "trajfield/scene.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <cmath>
#include <vector>

namespace trajfield {

struct TrainConfig {
  double lr_field = 5e-2;
  double lr_renderer = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double lr_decay = 0.1;  // final learning rate as a fraction of the initial one
  int iters_pretrain = 2000;
  int iters_joint = 2000;
  int patch = 64;                 // high-res patch side
  int rays_per_batch = 2048;      // pretraining
  int occupancy_interval = 16;    // iterations between occupancy rebuilds
  double seq_max_rotation_deg = 6.0;
  double seq_max_translation = 0.1;  // fraction of the scene radius
  int distill_count = 0;
  bool joint_guidance = true;
  bool random_background = false;  // pretraining, for items with alpha
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument unless the patch divides by 4 s and the
  /// counts are non-negative.
  void validate(int scale) const;
  /// Exponential decay from `lr` at iteration 0 to lr * lr_decay at `iters`.
  double decayed_lr(double lr, int iter, int iters) const {
    return iters > 0 ? lr * std::pow(lr_decay, static_cast<double>(iter) / iters) : lr;
  }
  AdamConfig field_adam() const { return {lr_field, beta1, beta2, adam_eps}; }
  AdamConfig renderer_adam() const { return {lr_renderer, beta1, beta2, adam_eps}; }
};

/// Called once per iteration with the phase ("pretrain" or "joint").
using TrainLog = std::function<void(const std::string& phase, int iter, double loss)>;

/// Full-range render of the first three feature channels at `intr`.
ImageRGB render_rgb(const VoxelField& field, const OccupancyGrid& occ, const Pose& pose,
                    const CameraIntrinsics& intr, const MarchConfig& march);

/// Mean PSNR of render_rgb against the given items.
double field_psnr(const VoxelField& field, const OccupancyGrid& occ,
                  const std::vector<const DatasetItem*>& items, const MarchConfig& march);

/// Ray-batch L2 on channels 0-2 against the train items. Updates the field
/// only and rebuilds `occ` every occupancy_interval iterations. Returns the
/// loss of every iteration.
std::vector<double> pretrain(VoxelField& field, OccupancyGrid& occ, const Dataset& ds,
                             const TrainConfig& cfg, const MarchConfig& march,
                             const TrainLog& log = {});

struct PoseJitter {
  double max_rotation_deg = 0.0;
  double max_translation = 0.0;  // world units
};

/// L poses leading up to `target`: a start pose is drawn within the jitter
/// bounds and interpolated towards the target in L + 1 steps; the target
/// itself is not returned.
std::vector<Pose> synth_pose_sequence(const Pose& target, int L, const PoseJitter& jitter,
                                      std::mt19937_64& rng);

/// One joint training example.
struct JointSample {
  Pose pose;
  std::vector<Pose> preceding;  // oldest first
  int patch_y = 0;
  int patch_x = 0;
  int patch = 64;
};

/// Sampling intervals and warp source maps of one forward pass. Holding them
/// fixed makes the joint loss a smooth function of the feature values.
struct JointGeometry {
  std::vector<IntervalMap> intervals;     // preceding frames, then the current one
  std::vector<WarpedFeatureMap> warps;    // one per preceding frame

  bool empty() const { return intervals.empty(); }
};

/// Joint patch loss (mean squared error). Builds `geometry` when it is empty
/// and reuses it otherwise.
double joint_loss(const VoxelField& field, const OccupancyGrid& occ, const ConvRenderer& renderer,
                  const JointSample& sample, const ImageRGB& target,
                  const CameraIntrinsics& intr_high, const PipelineConfig& pcfg,
                  JointGeometry& geometry);

/// Same loss plus gradients: renderer parameters into `renderer_grad`, field
/// parameters through the upsample and warp value paths and the marches of
/// the current and preceding frames into `field_grad`. Both are accumulated.
double joint_forward_backward(const VoxelField& field, const OccupancyGrid& occ,
                              const ConvRenderer& renderer, const JointSample& sample,
                              const ImageRGB& target, const CameraIntrinsics& intr_high,
                              const PipelineConfig& pcfg, JointGeometry& geometry,
                              FieldGrad& field_grad, std::span<double> renderer_grad);

/// Optimizer state for joint training.
struct JointOptimizer {
  JointOptimizer(const VoxelField& field, const ConvRenderer& renderer, const TrainConfig& cfg);

  Adam density;
  Adam features;
  Adam renderer;
  FieldGrad field_grad;
  std::vector<double> renderer_grad;
};

JointSample sample_joint(const DatasetItem& item, const TrainConfig& cfg, int scale,
                         int buffer_len, double scene_radius, std::mt19937_64& rng);

/// Samples a sequence and patch for `item`, runs forward/backward and
/// updates both parameter sets. Returns the loss before the update.
double joint_step(VoxelField& field, const OccupancyGrid& occ, ConvRenderer& renderer,
                  const DatasetItem& item, const TrainConfig& cfg, const PipelineConfig& pcfg,
                  std::mt19937_64& rng, JointOptimizer& opt);

std::vector<double> joint_train(VoxelField& field, OccupancyGrid& occ, ConvRenderer& renderer,
                                const Dataset& ds, const TrainConfig& cfg,
                                const PipelineConfig& pcfg, const TrainLog& log = {});

/// Camera positions around a target: radius and elevation ranges, any
/// azimuth, always looking at the target.
struct ViewingZone {
  Vec3 target = Vec3::Zero();
  double radius_min = 1.0;
  double radius_max = 1.0;
  double elevation_min_deg = 0.0;
  double elevation_max_deg = 0.0;

  /// Tightest zone around the train cameras of `ds`, centered on its bounds.
  static ViewingZone from_dataset(const Dataset& ds);
  Pose sample(std::mt19937_64& rng) const;
  bool contains(const Pose& pose, double tol = 1e-9) const;
};

/// Pseudo ground truth rendered by the field at n sampled poses.
Dataset distill(const VoxelField& field, const OccupancyGrid& occ, const ViewingZone& zone, int n,
                const CameraIntrinsics& intr, const MarchConfig& march, std::mt19937_64& rng);

struct ModelSpec {
  GridShape resolution{64, 64, 64};
  GridShape occupancy_resolution{16, 16, 16};
  double occupancy_threshold = 0.01;
};

/// Pretraining, optional distillation and joint training from scratch. The
/// march range comes from the dataset; the renderer starts from init(seed).
SceneModel train_model(const Dataset& ds, const TrainConfig& cfg, PipelineConfig pcfg,
                       const ModelSpec& spec, const TrainLog& log = {});

}  // namespace trajfield
