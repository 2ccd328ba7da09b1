#pragma once

#include "trajfield/feature_map.hpp"
#include "trajfield/field.hpp"
#include "trajfield/neural_render.hpp"
#include "trajfield/reproject.hpp"
#include "trajfield/volren.hpp"

#include <cstdint>
#include <deque>
#include <vector>

namespace trajfield {

struct PipelineConfig {
  int scale = 4;        // low-res downsample factor s
  int channels = 6;     // feature channels K
  int buffer_len = 2;   // preceding frames L
  double epsilon = -1;  // guidance half-width (world units); < 0 means 5% of far - near
  MarchConfig march;
  double opacity_valid = 0.5;
  bool use_guidance = true;
  bool use_neural_renderer = true;

  /// Throws std::invalid_argument when s < 1, K < 3 or L < 0.
  void validate() const;
  double resolved_epsilon() const;
};

struct FrameStats {
  std::int64_t samples_total = 0;
  double samples_per_ray_mean = 0.0;
  double ms_volume = 0.0;  // includes building guidance intervals
  double ms_warp = 0.0;    // warping preceding frames, upsampling, stacking
  double ms_neural = 0.0;
  double ms_total = 0.0;
  double guided_pixel_fraction = 0.0;
  int buffer_len = 0;      // buffered frames available while rendering
};

/// FIFO of the most recent low-resolution frames.
class RenderBuffer {
 public:
  explicit RenderBuffer(int capacity = 2) : capacity_(capacity) {}

  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(frames_.size()); }
  bool empty() const { return frames_.empty(); }
  void push(FeatureFrame frame);
  void clear() { frames_.clear(); }
  const FeatureFrame* newest() const { return frames_.empty() ? nullptr : &frames_.back(); }
  const std::deque<FeatureFrame>& frames() const { return frames_; }

  /// `capacity` slots ordered oldest to newest; missing frames are null and
  /// occupy the oldest slots.
  std::vector<const FeatureFrame*> slots() const;

 private:
  int capacity_;
  std::deque<FeatureFrame> frames_;
};

void reset(RenderBuffer& buffer);

/// Low-res intrinsics for a target camera; throws unless both image sides
/// divide by s.
CameraIntrinsics lowres_intrinsics(const CameraIntrinsics& intr_high, int s);

struct RendererInputs {
  std::vector<WarpedFeatureMap> warped;  // one per buffer slot
  FeatureMap upsampled;                  // current frame at target resolution
  FeatureMap stacked;                    // [warped_i features, validity_i]... then upsampled
};

/// Warps each slot to the current view, upsamples the current frame and
/// concatenates the renderer input. Null slots become zero features with
/// zero validity.
RendererInputs assemble_renderer_input(const std::vector<const FeatureFrame*>& slots,
                                       const FeatureFrame& current, const Pose& pose,
                                       const CameraIntrinsics& intr_high, const PipelineConfig& cfg);

/// Stacks precomputed warps and the upsampled map in renderer channel order.
FeatureMap stack_renderer_input(const std::vector<WarpedFeatureMap>& warped,
                                const FeatureMap& upsampled);

/// First three channels clamped to [0, 1].
ImageRGB baseline_image(const FeatureMap& upsampled);

struct FrameOutput {
  ImageRGB image;
  FrameStats stats;
};

/// Renders one frame and pushes its low-res record into the buffer.
FrameOutput render_next(const VoxelField& field, const OccupancyGrid& occ,
                        const ConvRenderer& renderer, RenderBuffer& buffer, const Pose& pose,
                        const CameraIntrinsics& intr_high, const PipelineConfig& cfg);

}  // namespace trajfield
