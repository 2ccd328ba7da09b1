#pragma once

#include "support.hpp"
#include "trajfield/neural_render.hpp"

#include <random>
#include <vector>

namespace trajfield::test {

struct RendererFdReport {
  double worst = 0.0;  // max relative error over checked coordinates
  int checked = 0;
  int skipped = 0;     // coordinates whose probe crossed an activation kink
};

namespace detail {

// Sign pattern of every leaky-ReLU output; a central difference is only a
// valid oracle when the probe leaves it unchanged.
inline std::vector<bool> kink_pattern(const ConvRenderer& r, const FeatureMap& x) {
  ConvCache cache;
  r.forward(x, &cache);
  std::vector<bool> bits;
  for (std::size_t i = 0; i < r.plan().size(); ++i) {
    if (r.plan()[i].activation != Activation::kLeakyRelu) continue;
    for (double v : cache.outputs[i].data()) bits.push_back(v > 0.0);
  }
  return bits;
}

inline double dot(const FeatureMap& a, const FeatureMap& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

}  // namespace detail

/// Compares backward() against central differences of <forward(x), g> at
/// random weight and input coordinates. Coordinates whose +-h probe flips
/// any leaky-ReLU sign are replaced by fresh draws.
inline RendererFdReport renderer_fd_check(ConvRenderer& r, FeatureMap& x, const FeatureMap& g,
                                          int n_weights, int n_inputs, double h,
                                          std::mt19937_64& rng) {
  ConvCache cache;
  r.forward(x, &cache);
  std::vector<double> gp(r.parameter_count(), 0.0);
  const FeatureMap gi = r.backward(cache, g, gp);
  const std::vector<bool> base = detail::kink_pattern(r, x);
  auto loss = [&] { return detail::dot(r.forward(x), g); };

  RendererFdReport rep;
  auto probe = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const bool plus_ok = detail::kink_pattern(r, x) == base;
    param = saved - h;
    const bool minus_ok = detail::kink_pattern(r, x) == base;
    param = saved;
    if (!plus_ok || !minus_ok) {
      ++rep.skipped;
      return false;
    }
    const double fd = central_diff(loss, param, h);
    rep.worst = std::max(rep.worst, rel_err(analytic, fd, 1e-4));
    ++rep.checked;
    return true;
  };
  std::uniform_int_distribution<std::size_t> pick_w(0, r.parameter_count() - 1);
  for (int n = 0; n < n_weights && rep.skipped < 1000;) {
    const std::size_t i = pick_w(rng);
    if (probe(r.params[i], gp[i])) ++n;
  }
  std::uniform_int_distribution<std::size_t> pick_x(0, x.size() - 1);
  for (int n = 0; n < n_inputs && rep.skipped < 1000;) {
    const std::size_t i = pick_x(rng);
    if (probe(x.data()[i], gi.data()[i])) ++n;
  }
  return rep;
}

}  // namespace trajfield::test
