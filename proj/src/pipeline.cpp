#include "trajfield/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>
#include <string>

namespace trajfield {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

WarpedFeatureMap empty_warp(int channels, int h, int w) {
  WarpedFeatureMap m;
  m.features = FeatureMap(channels, h, w);
  m.validity = FeatureMap(1, h, w);
  m.zbuf = FeatureMap(1, h, w);
  m.source.assign(static_cast<std::size_t>(h) * w, -1);
  return m;
}

}  // namespace

void PipelineConfig::validate() const {
  if (scale < 1) throw std::invalid_argument("pipeline: scale must be >= 1");
  if (channels < 3) throw std::invalid_argument("pipeline: need at least 3 feature channels");
  if (buffer_len < 0) throw std::invalid_argument("pipeline: buffer length must be >= 0");
  march.validate();
}

double PipelineConfig::resolved_epsilon() const {
  return epsilon >= 0.0 ? epsilon : 0.05 * (march.far - march.near);
}

void RenderBuffer::push(FeatureFrame frame) {
  if (capacity_ <= 0) return;
  frames_.push_back(std::move(frame));
  while (static_cast<int>(frames_.size()) > capacity_) frames_.pop_front();
}

std::vector<const FeatureFrame*> RenderBuffer::slots() const {
  std::vector<const FeatureFrame*> out(std::max(capacity_, 0), nullptr);
  const int offset = static_cast<int>(out.size()) - size();
  for (int i = 0; i < size(); ++i) out[offset + i] = &frames_[i];
  return out;
}

void reset(RenderBuffer& buffer) { buffer.clear(); }

CameraIntrinsics lowres_intrinsics(const CameraIntrinsics& intr_high, int s) {
  if (s < 1 || intr_high.width % s != 0 || intr_high.height % s != 0)
    throw std::invalid_argument("image size " + std::to_string(intr_high.width) + "x" +
                                std::to_string(intr_high.height) + " is not divisible by scale " +
                                std::to_string(s));
  return {intr_high.fx / s, intr_high.fy / s, intr_high.cx / s, intr_high.cy / s,
          intr_high.width / s, intr_high.height / s};
}

FeatureMap stack_renderer_input(const std::vector<WarpedFeatureMap>& warped,
                                const FeatureMap& upsampled) {
  std::vector<const FeatureMap*> parts;
  for (const WarpedFeatureMap& w : warped) {
    parts.push_back(&w.features);
    parts.push_back(&w.validity);
  }
  parts.push_back(&upsampled);
  return concat_channels(parts);
}

RendererInputs assemble_renderer_input(const std::vector<const FeatureFrame*>& slots,
                                       const FeatureFrame& current, const Pose& pose,
                                       const CameraIntrinsics& intr_high, const PipelineConfig& cfg) {
  RendererInputs in;
  const int k = current.features.channels();
  for (const FeatureFrame* f : slots) {
    if (f)
      in.warped.push_back(warp_to_highres(*f, pose, intr_high, cfg.opacity_valid));
    else
      in.warped.push_back(empty_warp(k, intr_high.height, intr_high.width));
  }
  in.upsampled = upsample(current.features, cfg.scale);
  in.stacked = stack_renderer_input(in.warped, in.upsampled);
  return in;
}

ImageRGB baseline_image(const FeatureMap& upsampled) {
  ImageRGB img = upsampled.slice_channels(0, 3);
  for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

FrameOutput render_next(const VoxelField& field, const OccupancyGrid& occ,
                        const ConvRenderer& renderer, RenderBuffer& buffer, const Pose& pose,
                        const CameraIntrinsics& intr_high, const PipelineConfig& cfg) {
  cfg.validate();
  if (field.channels() != cfg.channels)
    throw std::invalid_argument("render_next: field has " + std::to_string(field.channels()) +
                                " channels, config expects " + std::to_string(cfg.channels));
  if (buffer.capacity() != cfg.buffer_len)
    throw std::invalid_argument("render_next: buffer capacity does not match the config");
  if (cfg.use_neural_renderer &&
      renderer.input_channels() != renderer_input_channels(cfg.buffer_len, cfg.channels))
    throw std::invalid_argument("render_next: renderer input channels do not match the config");
  const CameraIntrinsics intr_low = lowres_intrinsics(intr_high, cfg.scale);

  FrameOutput out;
  const auto t_start = Clock::now();
  out.stats.buffer_len = buffer.size();

  auto t0 = Clock::now();
  const FeatureFrame* guide = cfg.use_guidance ? buffer.newest() : nullptr;
  const IntervalMap intervals =
      guide ? build_intervals(*guide, pose, intr_low, cfg.resolved_epsilon(), cfg.march,
                              cfg.opacity_valid)
            : IntervalMap::full(intr_low.width, intr_low.height);
  FeatureFrame current = render_frame(field, occ, pose, intr_low, intervals, cfg.march);
  out.stats.ms_volume = ms_since(t0);

  const auto rays = static_cast<double>(intr_low.width) * intr_low.height;
  out.stats.samples_total = current.samples_total;
  out.stats.samples_per_ray_mean = current.samples_total / rays;
  out.stats.guided_pixel_fraction = intervals.guided_count() / rays;

  if (cfg.use_neural_renderer) {
    t0 = Clock::now();
    const RendererInputs in = assemble_renderer_input(buffer.slots(), current, pose, intr_high, cfg);
    out.stats.ms_warp = ms_since(t0);
    t0 = Clock::now();
    out.image = renderer.forward(in.stacked);
    out.stats.ms_neural = ms_since(t0);
  } else {
    t0 = Clock::now();
    out.image = baseline_image(upsample(current.features, cfg.scale));
    out.stats.ms_warp = ms_since(t0);
  }

  buffer.push(std::move(current));
  out.stats.ms_total = ms_since(t_start);
  return out;
}

}  // namespace trajfield
