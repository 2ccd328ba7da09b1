#pragma once

#include "trajfield/checkpoint.hpp"
#include "trajfield/field.hpp"
#include "trajfield/neural_render.hpp"
#include "trajfield/pipeline.hpp"

#include <filesystem>

namespace trajfield {

/// Everything needed to render: field, occupancy, renderer, pipeline
/// settings and the target camera the renderer was trained for.
struct SceneModel {
  VoxelField field;
  OccupancyGrid occupancy;
  ConvRenderer renderer;
  PipelineConfig pipeline;
  CameraIntrinsics camera;

  void rebuild_occupancy() { trajfield::rebuild_occupancy(field, occupancy); }
};

/// Parameters are rounded to float32.
Checkpoint to_checkpoint(const SceneModel& model);
/// Throws CheckpointError(kMalformedHeader) when the header is incomplete or
/// disagrees with the block sizes. Occupancy is rebuilt from the field.
SceneModel from_checkpoint(const Checkpoint& ckpt);

void save_model(const SceneModel& model, const std::filesystem::path& path);
SceneModel load_model(const std::filesystem::path& path);

}  // namespace trajfield
