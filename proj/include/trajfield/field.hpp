#pragma once

#include "trajfield/geometry.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace trajfield {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

struct GridShape {
  int nx = 1;
  int ny = 1;
  int nz = 1;

  std::size_t count() const { return static_cast<std::size_t>(nx) * ny * nz; }
  bool operator==(const GridShape&) const = default;
};

struct FieldSample {
  double sigma = 0.0;
  std::vector<double> feature;
};

/// The eight voxels a point interpolates from, with trilinear weights.
struct TrilinearStencil {
  std::array<std::size_t, 8> voxel{};
  std::array<double, 8> weight{};
};

/// Gradient buffer shaped like a VoxelField's parameters.
struct FieldGrad {
  std::vector<double> raw_density;
  std::vector<double> features;

  void clear();
  void add(const FieldGrad& other);
};

/// Dense grid of pre-activation densities and K raw feature channels.
/// Values live at voxel centers; queries interpolate raw values trilinearly
/// and activate density with softplus afterwards.
class VoxelField {
 public:
  VoxelField() = default;
  VoxelField(GridShape resolution, Aabb bounds, int channels);

  /// raw_density = -2, features ~ U(-0.05, 0.05).
  static VoxelField initialized(GridShape resolution, Aabb bounds, int channels, std::uint64_t seed);

  const GridShape& resolution() const { return resolution_; }
  const Aabb& bounds() const { return bounds_; }
  int channels() const { return channels_; }
  std::size_t voxel_count() const { return resolution_.count(); }
  std::size_t parameter_count() const { return raw_density.size() + features.size(); }
  Vec3 voxel_size() const;

  std::size_t voxel_index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * resolution_.ny + j) * resolution_.nx + i;
  }
  Vec3 voxel_center(int i, int j, int k) const;

  /// False when x lies outside the bounds.
  bool stencil(const Vec3& x, TrilinearStencil& out) const;

  /// Activated density at x; writes the K interpolated features to `feature`.
  double query_into(const Vec3& x, std::span<double> feature) const;
  FieldSample query(const Vec3& x) const;

  /// Accumulates d(loss)/d(raw parameters) given d(loss)/d(sigma) and
  /// d(loss)/d(feature) at x.
  void query_backward(const Vec3& x, double grad_sigma, std::span<const double> grad_feature,
                      FieldGrad& accum) const;

  FieldGrad make_grad() const;

  std::vector<double> raw_density;  // one per voxel
  std::vector<double> features;     // voxel-major, K per voxel

 private:
  GridShape resolution_{};
  Aabb bounds_{};
  int channels_ = 0;
};

/// Coarse occupancy bits for empty-space skipping.
class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  OccupancyGrid(GridShape resolution, double threshold);

  /// Every cell occupied; disables skipping.
  static OccupancyGrid all_occupied(const Aabb& bounds);

  const GridShape& resolution() const { return resolution_; }
  double threshold() const { return threshold_; }
  const Aabb& bounds() const { return bounds_; }

  bool occupied(const Vec3& x) const;
  bool cell(int i, int j, int k) const {
    return bits_[(static_cast<std::size_t>(k) * resolution_.ny + j) * resolution_.nx + i] != 0;
  }
  std::size_t occupied_count() const;

 private:
  friend void rebuild_occupancy(const VoxelField& field, OccupancyGrid& occ);

  GridShape resolution_{};
  double threshold_ = 0.01;
  Aabb bounds_{};
  std::vector<std::uint8_t> bits_;
};

/// A cell is occupied iff the max activated density of its fine voxels is at
/// least the threshold. Throws std::invalid_argument unless the coarse
/// resolution divides the fine one on every axis.
void rebuild_occupancy(const VoxelField& field, OccupancyGrid& occ);

}  // namespace trajfield
