#pragma once

#include "trajfield/feature_map.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace trajfield {

enum class Activation { kNone, kLeakyRelu, kSigmoid };

inline constexpr double kLeakySlope = 0.01;

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// One 3x3 zero-padded convolution. The layer input is the previous layer's
/// output (nearest-upsampled 2x when `upsample_input`), concatenated with the
/// output of layer `skip_from` when that is >= 0.
struct LayerSpec {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  Activation activation = Activation::kLeakyRelu;
  bool upsample_input = false;
  int skip_from = -1;

  bool operator==(const LayerSpec&) const = default;
};

/// Shallow U-Net: one full-res conv, two stride-2 convs, three quarter-res
/// convs, two upsample+skip convs and a sigmoid head.
std::vector<LayerSpec> default_plan(int input_channels);

/// Input channel count for L warped maps (K features + validity each) plus
/// the upsampled current map.
inline int renderer_input_channels(int buffer_len, int channels) {
  return buffer_len * (channels + 1) + channels;
}

struct ConvCache {
  std::vector<FeatureMap> layer_inputs;  // assembled input of each layer
  std::vector<FeatureMap> outputs;       // post-activation output of each layer
};

/// The 2D neural renderer. Parameters are one flat vector so optimizers and
/// checkpoints can treat them uniformly.
class ConvRenderer {
 public:
  ConvRenderer() = default;
  /// Validates the plan; parameters start at zero.
  explicit ConvRenderer(std::vector<LayerSpec> plan);

  /// Kaiming fan-in normal weights, zero biases; deterministic per seed.
  static ConvRenderer init(std::uint64_t seed, std::vector<LayerSpec> plan);

  const std::vector<LayerSpec>& plan() const { return plan_; }
  int input_channels() const { return plan_.front().in_channels; }
  int output_channels() const { return plan_.back().out_channels; }
  std::size_t parameter_count() const { return params.size(); }

  std::span<double> weights(std::size_t layer);
  std::span<const double> weights(std::size_t layer) const;
  std::span<double> biases(std::size_t layer);
  std::span<const double> biases(std::size_t layer) const;
  std::size_t weight_offset(std::size_t layer) const { return weight_offset_[layer]; }
  std::size_t bias_offset(std::size_t layer) const { return bias_offset_[layer]; }

  /// Throws std::invalid_argument on channel or size mismatch. Fills `cache`
  /// when non-null.
  FeatureMap forward(const FeatureMap& input, ConvCache* cache = nullptr) const;

  /// Reverse pass: adds d(loss)/d(params) into grad_params (same length as
  /// params) and returns d(loss)/d(input).
  FeatureMap backward(const ConvCache& cache, const FeatureMap& grad_output,
                      std::span<double> grad_params) const;

  std::vector<double> params;

 private:
  std::vector<LayerSpec> plan_;
  std::vector<std::size_t> weight_offset_;
  std::vector<std::size_t> bias_offset_;
};

}  // namespace trajfield
