#pragma once

#include "trajfield/field.hpp"
#include "trajfield/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

namespace trajfield::test {

/// |a - b| relative to the larger magnitude; `floor` keeps near-zero pairs
/// from blowing up.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f() with respect to `param`, restoring it after.
template <class F>
double central_diff(F&& f, double& param, double h) {
  const double saved = param;
  param = saved + h;
  const double fp = f();
  param = saved - h;
  const double fm = f();
  param = saved;
  return (fp - fm) / (2.0 * h);
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> a(-M_PI, M_PI);
  return Eigen::AngleAxisd(a(rng), random_unit(rng)).toRotationMatrix();
}

inline Pose random_pose(std::mt19937_64& rng, double max_t = 1.0) {
  std::uniform_real_distribution<double> t(-max_t, max_t);
  return Pose{random_rotation(rng), Vec3(t(rng), t(rng), t(rng))};
}

/// Field with random raw values in the given ranges.
inline VoxelField random_field(GridShape res, const Aabb& bounds, int k, std::uint64_t seed,
                               double raw_lo = -1.0, double raw_hi = 2.0) {
  VoxelField f(res, bounds, k);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(raw_lo, raw_hi);
  std::uniform_real_distribution<double> c(-1.0, 1.0);
  for (double& v : f.raw_density) v = d(rng);
  for (double& v : f.features) v = c(rng);
  return f;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("trajfield_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace trajfield::test
