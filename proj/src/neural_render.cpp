#include "trajfield/neural_render.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace trajfield {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

int conv_out_size(int n, int stride) { return (n - 1) / stride + 1; }

// Fixed column chunks keep every output column's summation order independent
// of the thread count.
constexpr Eigen::Index kGemmChunk = 256;

template <typename A, typename B, typename Out>
void gemm_by_columns(const A& a, const B& b, Out& out) {
  const Eigen::Index n = b.cols();
  const Eigen::Index chunks = (n + kGemmChunk - 1) / kGemmChunk;
#pragma omp parallel for schedule(static)
  for (Eigen::Index j = 0; j < chunks; ++j) {
    const Eigen::Index c0 = j * kGemmChunk;
    const Eigen::Index len = std::min(kGemmChunk, n - c0);
    out.middleCols(c0, len).noalias() = a * b.middleCols(c0, len);
  }
}

// col[(ic * 9 + ky * 3 + kx), oy * wo + ox] = in[ic, oy * s + ky - 1, ox * s + kx - 1]
RowMatrix im2col(const FeatureMap& in, int stride, int ho, int wo) {
  const int c = in.channels();
  const int h = in.height();
  const int w = in.width();
  RowMatrix col(static_cast<Eigen::Index>(c) * 9, static_cast<Eigen::Index>(ho) * wo);
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < c; ++ic) {
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        double* row = col.row(ic * 9 + ky * 3 + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - 1;
          double* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - 1;
            dst[ox] = (ix >= 0 && ix < w) ? in.at(ic, iy, ix) : 0.0;
          }
        }
      }
  }
  return col;
}

void col2im_add(const RowMatrix& col, int stride, int ho, int wo, FeatureMap& grad_in) {
  const int c = grad_in.channels();
  const int h = grad_in.height();
  const int w = grad_in.width();
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < c; ++ic) {
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = col.row(ic * 9 + ky * 3 + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix >= 0 && ix < w) grad_in.at(ic, iy, ix) += src[ox];
          }
        }
      }
  }
}

FeatureMap upsample_nearest2(const FeatureMap& in) {
  FeatureMap out(in.channels(), in.height() * 2, in.width() * 2);
  for (int c = 0; c < in.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) out.at(c, y, x) = in.at(c, y / 2, x / 2);
  return out;
}

FeatureMap downsum2(const FeatureMap& grad) {
  FeatureMap out(grad.channels(), grad.height() / 2, grad.width() / 2);
  for (int c = 0; c < grad.channels(); ++c)
    for (int y = 0; y < grad.height(); ++y)
      for (int x = 0; x < grad.width(); ++x) out.at(c, y / 2, x / 2) += grad.at(c, y, x);
  return out;
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::kLeakyRelu: return x > 0.0 ? x : kLeakySlope * x;
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Activation::kNone: break;
  }
  return x;
}

// Derivative expressed through the activation's output y.
double activation_grad(Activation a, double y) {
  switch (a) {
    case Activation::kLeakyRelu: return y > 0.0 ? 1.0 : kLeakySlope;
    case Activation::kSigmoid: return y * (1.0 - y);
    case Activation::kNone: break;
  }
  return 1.0;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kNone: break;
  }
  return "none";
}

Activation activation_from_string(const std::string& s) {
  if (s == "leaky_relu") return Activation::kLeakyRelu;
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "none") return Activation::kNone;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

std::vector<LayerSpec> default_plan(int input_channels) {
  using A = Activation;
  return {
      {input_channels, 16, 1, A::kLeakyRelu, false, -1},  // 0: full res
      {16, 32, 2, A::kLeakyRelu, false, -1},              // 1: half
      {32, 64, 2, A::kLeakyRelu, false, -1},              // 2: quarter
      {64, 64, 1, A::kLeakyRelu, false, -1},
      {64, 64, 1, A::kLeakyRelu, false, -1},
      {64, 64, 1, A::kLeakyRelu, false, -1},
      {64 + 32, 32, 1, A::kLeakyRelu, true, 1},           // 6: half, skip from 1
      {32 + 16, 16, 1, A::kLeakyRelu, true, 0},           // 7: full, skip from 0
      {16, 3, 1, A::kSigmoid, false, -1},                 // 8: head
  };
}

ConvRenderer::ConvRenderer(std::vector<LayerSpec> plan) : plan_(std::move(plan)) {
  if (plan_.empty()) throw std::invalid_argument("ConvRenderer: empty plan");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < plan_.size(); ++i) {
    const LayerSpec& l = plan_[i];
    if (l.in_channels < 1 || l.out_channels < 1 || (l.stride != 1 && l.stride != 2))
      throw std::invalid_argument("ConvRenderer: bad layer " + std::to_string(i));
    if (l.skip_from >= static_cast<int>(i))
      throw std::invalid_argument("ConvRenderer: skip must reference an earlier layer");
    if (i > 0) {
      int expected = plan_[i - 1].out_channels;
      if (l.skip_from >= 0) expected += plan_[l.skip_from].out_channels;
      if (expected != l.in_channels)
        throw std::invalid_argument("ConvRenderer: layer " + std::to_string(i) + " expects " +
                                    std::to_string(l.in_channels) + " input channels, plan gives " +
                                    std::to_string(expected));
    } else if (l.upsample_input || l.skip_from >= 0) {
      throw std::invalid_argument("ConvRenderer: first layer cannot upsample or skip");
    }
    weight_offset_.push_back(offset);
    offset += static_cast<std::size_t>(l.out_channels) * l.in_channels * 9;
    bias_offset_.push_back(offset);
    offset += l.out_channels;
  }
  params.assign(offset, 0.0);
}

ConvRenderer ConvRenderer::init(std::uint64_t seed, std::vector<LayerSpec> plan) {
  ConvRenderer r(std::move(plan));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < r.plan_.size(); ++i) {
    const double scale = std::sqrt(2.0 / (r.plan_[i].in_channels * 9.0));
    for (double& w : r.weights(i)) w = scale * normal(rng);
  }
  return r;
}

std::span<double> ConvRenderer::weights(std::size_t layer) {
  return {params.data() + weight_offset_[layer], bias_offset_[layer] - weight_offset_[layer]};
}
std::span<const double> ConvRenderer::weights(std::size_t layer) const {
  return {params.data() + weight_offset_[layer], bias_offset_[layer] - weight_offset_[layer]};
}
std::span<double> ConvRenderer::biases(std::size_t layer) {
  return {params.data() + bias_offset_[layer], static_cast<std::size_t>(plan_[layer].out_channels)};
}
std::span<const double> ConvRenderer::biases(std::size_t layer) const {
  return {params.data() + bias_offset_[layer], static_cast<std::size_t>(plan_[layer].out_channels)};
}

FeatureMap ConvRenderer::forward(const FeatureMap& input, ConvCache* cache) const {
  if (input.channels() != input_channels())
    throw std::invalid_argument("ConvRenderer: expected " + std::to_string(input_channels()) +
                                " input channels, got " + std::to_string(input.channels()));
  if (input.height() % 4 != 0 || input.width() % 4 != 0 || input.empty())
    throw std::invalid_argument("ConvRenderer: input size must be a positive multiple of 4");

  std::vector<FeatureMap> outputs(plan_.size());
  std::vector<FeatureMap> inputs(cache ? plan_.size() : 0);
  FeatureMap assembled;
  for (std::size_t i = 0; i < plan_.size(); ++i) {
    const LayerSpec& l = plan_[i];
    const FeatureMap* in = &input;
    if (i > 0) {
      FeatureMap prev = l.upsample_input ? upsample_nearest2(outputs[i - 1]) : outputs[i - 1];
      if (l.skip_from >= 0) {
        const FeatureMap& skip = outputs[l.skip_from];
        if (skip.height() != prev.height() || skip.width() != prev.width())
          throw std::invalid_argument("ConvRenderer: skip size mismatch at layer " + std::to_string(i));
        const FeatureMap* parts[] = {&prev, &skip};
        assembled = concat_channels(parts);
      } else {
        assembled = std::move(prev);
      }
      in = &assembled;
    }
    const int ho = conv_out_size(in->height(), l.stride);
    const int wo = conv_out_size(in->width(), l.stride);
    const RowMatrix col = im2col(*in, l.stride, ho, wo);
    FeatureMap out(l.out_channels, ho, wo);
    MatrixMap out_m(out.data().data(), l.out_channels, static_cast<Eigen::Index>(ho) * wo);
    ConstMatrixMap w_m(weights(i).data(), l.out_channels, static_cast<Eigen::Index>(l.in_channels) * 9);
    gemm_by_columns(w_m, col, out_m);
    const auto b = biases(i);
    for (int c = 0; c < l.out_channels; ++c)
      for (double& v : out.plane(c)) v = activate(l.activation, v + b[c]);
    if (cache) inputs[i] = *in;
    outputs[i] = std::move(out);
  }
  FeatureMap result = outputs.back();
  if (cache) {
    cache->layer_inputs = std::move(inputs);
    cache->outputs = std::move(outputs);
  }
  return result;
}

FeatureMap ConvRenderer::backward(const ConvCache& cache, const FeatureMap& grad_output,
                                  std::span<double> grad_params) const {
  if (cache.outputs.size() != plan_.size() || grad_params.size() != params.size())
    throw std::invalid_argument("ConvRenderer::backward: cache or gradient buffer mismatch");
  if (!grad_output.same_shape(cache.outputs.back()))
    throw std::invalid_argument("ConvRenderer::backward: grad_output shape mismatch");

  std::vector<FeatureMap> grad_out(plan_.size());
  grad_out.back() = grad_output;
  FeatureMap grad_input;
  for (std::size_t idx = plan_.size(); idx-- > 0;) {
    const LayerSpec& l = plan_[idx];
    const FeatureMap& y = cache.outputs[idx];
    const FeatureMap& in = cache.layer_inputs[idx];
    FeatureMap& g = grad_out[idx];
    if (g.empty()) g = FeatureMap(y.channels(), y.height(), y.width());
    for (std::size_t n = 0; n < g.size(); ++n) g.data()[n] *= activation_grad(l.activation, y.data()[n]);

    const int ho = y.height();
    const int wo = y.width();
    const Eigen::Index p = static_cast<Eigen::Index>(ho) * wo;
    const Eigen::Index kdim = static_cast<Eigen::Index>(l.in_channels) * 9;
    ConstMatrixMap g_m(g.data().data(), l.out_channels, p);
    const RowMatrix col = im2col(in, l.stride, ho, wo);
    MatrixMap gw_m(grad_params.data() + weight_offset_[idx], l.out_channels, kdim);
    gw_m.noalias() += g_m * col.transpose();
    double* gb = grad_params.data() + bias_offset_[idx];
    // Plain loop: a vectorized sum would reorder by the buffer's alignment.
    for (int c = 0; c < l.out_channels; ++c) {
      const double* row = g.data().data() + c * p;
      double acc = 0.0;
      for (Eigen::Index n = 0; n < p; ++n) acc += row[n];
      gb[c] += acc;
    }

    ConstMatrixMap w_m(weights(idx).data(), l.out_channels, kdim);
    RowMatrix gcol(kdim, p);
    gemm_by_columns(w_m.transpose(), g_m, gcol);
    FeatureMap gin(in.channels(), in.height(), in.width());
    col2im_add(gcol, l.stride, ho, wo, gin);

    if (idx == 0) {
      grad_input = std::move(gin);
      break;
    }
    const int prev_ch = plan_[idx - 1].out_channels;
    FeatureMap g_prev = gin.slice_channels(0, prev_ch);
    if (l.upsample_input) g_prev = downsum2(g_prev);
    auto accumulate = [&](std::size_t target, FeatureMap&& delta) {
      if (grad_out[target].empty()) {
        grad_out[target] = std::move(delta);
      } else {
        for (std::size_t n = 0; n < delta.size(); ++n) grad_out[target].data()[n] += delta.data()[n];
      }
    };
    accumulate(idx - 1, std::move(g_prev));
    if (l.skip_from >= 0)
      accumulate(static_cast<std::size_t>(l.skip_from),
                 gin.slice_channels(prev_ch, in.channels() - prev_ch));
  }
  return grad_input;
}

}  // namespace trajfield
