#include "trajfield/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace trajfield {

void Adam::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw std::invalid_argument("Adam: parameter/gradient size mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double step = cfg_.lr / bc1;
  const double b1 = cfg_.beta1;
  const double b2 = cfg_.beta2;
  const std::size_t n = params.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    if (m_[i] == 0.0) continue;
    params[i] -= step * m_[i] / (std::sqrt(v_[i] / bc2) + cfg_.eps);
  }
}

}  // namespace trajfield
