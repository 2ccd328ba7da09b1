#include "trajfield/field.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <stdexcept>

namespace trajfield {

void FieldGrad::clear() {
  std::fill(raw_density.begin(), raw_density.end(), 0.0);
  std::fill(features.begin(), features.end(), 0.0);
}

void FieldGrad::add(const FieldGrad& other) {
  for (std::size_t i = 0; i < raw_density.size(); ++i) raw_density[i] += other.raw_density[i];
  for (std::size_t i = 0; i < features.size(); ++i) features[i] += other.features[i];
}

VoxelField::VoxelField(GridShape resolution, Aabb bounds, int channels)
    : raw_density(resolution.count(), 0.0),
      features(resolution.count() * channels, 0.0),
      resolution_(resolution),
      bounds_(bounds),
      channels_(channels) {
  if (resolution.nx < 1 || resolution.ny < 1 || resolution.nz < 1)
    throw std::invalid_argument("VoxelField: resolution must be positive");
  if (channels < 1) throw std::invalid_argument("VoxelField: need at least one feature channel");
  if (!((bounds.hi.array() > bounds.lo.array()).all()))
    throw std::invalid_argument("VoxelField: empty bounds");
}

VoxelField VoxelField::initialized(GridShape resolution, Aabb bounds, int channels,
                                   std::uint64_t seed) {
  VoxelField f(resolution, bounds, channels);
  std::fill(f.raw_density.begin(), f.raw_density.end(), -2.0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (double& v : f.features) v = u(rng);
  return f;
}

Vec3 VoxelField::voxel_size() const {
  return bounds_.extent().cwiseQuotient(
      Vec3(resolution_.nx, resolution_.ny, resolution_.nz));
}

Vec3 VoxelField::voxel_center(int i, int j, int k) const {
  return bounds_.lo + voxel_size().cwiseProduct(Vec3(i + 0.5, j + 0.5, k + 0.5));
}

namespace {

// Lower corner index and fractional offset along one axis, clamped so that
// points between the outermost centers and the boundary take the edge value.
inline void axis_weights(double g, int n, int& i0, int& i1, double& frac) {
  if (n == 1) {
    i0 = i1 = 0;
    frac = 0.0;
    return;
  }
  g = std::clamp(g, 0.0, static_cast<double>(n - 1));
  i0 = std::min(static_cast<int>(g), n - 2);
  i1 = i0 + 1;
  frac = g - i0;
}

}  // namespace

bool VoxelField::stencil(const Vec3& x, TrilinearStencil& out) const {
  if (!bounds_.contains(x)) return false;
  const Vec3 g = (x - bounds_.lo).cwiseQuotient(voxel_size()) - Vec3::Constant(0.5);
  int i0, i1, j0, j1, k0, k1;
  double fx, fy, fz;
  axis_weights(g.x(), resolution_.nx, i0, i1, fx);
  axis_weights(g.y(), resolution_.ny, j0, j1, fy);
  axis_weights(g.z(), resolution_.nz, k0, k1, fz);
  const int is[2] = {i0, i1};
  const int js[2] = {j0, j1};
  const int ks[2] = {k0, k1};
  const double wx[2] = {1.0 - fx, fx};
  const double wy[2] = {1.0 - fy, fy};
  const double wz[2] = {1.0 - fz, fz};
  int n = 0;
  for (int c = 0; c < 2; ++c)
    for (int b = 0; b < 2; ++b)
      for (int a = 0; a < 2; ++a) {
        out.voxel[n] = voxel_index(is[a], js[b], ks[c]);
        out.weight[n] = wx[a] * wy[b] * wz[c];
        ++n;
      }
  return true;
}

double VoxelField::query_into(const Vec3& x, std::span<double> feature) const {
  std::fill(feature.begin(), feature.end(), 0.0);
  TrilinearStencil st;
  if (!stencil(x, st)) return 0.0;
  double raw = 0.0;
  const int k = channels_;
  for (int n = 0; n < 8; ++n) {
    const double w = st.weight[n];
    raw += w * raw_density[st.voxel[n]];
    const double* f = &features[st.voxel[n] * k];
    for (int c = 0; c < k; ++c) feature[c] += w * f[c];
  }
  return softplus(raw);
}

FieldSample VoxelField::query(const Vec3& x) const {
  FieldSample s;
  s.feature.assign(channels_, 0.0);
  s.sigma = query_into(x, s.feature);
  return s;
}

void VoxelField::query_backward(const Vec3& x, double grad_sigma,
                                std::span<const double> grad_feature, FieldGrad& accum) const {
  TrilinearStencil st;
  if (!stencil(x, st)) return;
  const int k = channels_;
  double grad_raw = 0.0;
  if (grad_sigma != 0.0) {
    double raw = 0.0;
    for (int n = 0; n < 8; ++n) raw += st.weight[n] * raw_density[st.voxel[n]];
    grad_raw = grad_sigma * sigmoid(raw);
  }
  bool any_feature = false;
  for (int c = 0; c < k; ++c) any_feature = any_feature || grad_feature[c] != 0.0;
  for (int n = 0; n < 8; ++n) {
    const double w = st.weight[n];
    if (w == 0.0) continue;
    if (grad_raw != 0.0) accum.raw_density[st.voxel[n]] += w * grad_raw;
    if (any_feature) {
      double* g = &accum.features[st.voxel[n] * k];
      for (int c = 0; c < k; ++c) g[c] += w * grad_feature[c];
    }
  }
}

FieldGrad VoxelField::make_grad() const {
  FieldGrad g;
  g.raw_density.assign(raw_density.size(), 0.0);
  g.features.assign(features.size(), 0.0);
  return g;
}

OccupancyGrid::OccupancyGrid(GridShape resolution, double threshold)
    : resolution_(resolution), threshold_(threshold), bits_(resolution.count(), 1) {}

OccupancyGrid OccupancyGrid::all_occupied(const Aabb& bounds) {
  OccupancyGrid g(GridShape{1, 1, 1}, 0.0);
  g.bounds_ = bounds;
  return g;
}

bool OccupancyGrid::occupied(const Vec3& x) const {
  if (!bounds_.contains(x)) return false;
  const Vec3 rel = (x - bounds_.lo).cwiseQuotient(bounds_.extent());
  const int i = std::min(static_cast<int>(rel.x() * resolution_.nx), resolution_.nx - 1);
  const int j = std::min(static_cast<int>(rel.y() * resolution_.ny), resolution_.ny - 1);
  const int k = std::min(static_cast<int>(rel.z() * resolution_.nz), resolution_.nz - 1);
  return cell(i, j, k);
}

std::size_t OccupancyGrid::occupied_count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

void rebuild_occupancy(const VoxelField& field, OccupancyGrid& occ) {
  const GridShape& f = field.resolution();
  const GridShape& c = occ.resolution_;
  if (c.nx < 1 || c.ny < 1 || c.nz < 1 || f.nx % c.nx || f.ny % c.ny || f.nz % c.nz)
    throw std::invalid_argument("rebuild_occupancy: coarse resolution must divide the field resolution");
  occ.bounds_ = field.bounds();
  const int bx = f.nx / c.nx, by = f.ny / c.ny, bz = f.nz / c.nz;
  // softplus is monotone, so compare the max raw value against the raw
  // threshold instead of activating every voxel.
  std::vector<double> max_raw(c.count(), -std::numeric_limits<double>::infinity());
  for (int k = 0; k < f.nz; ++k)
    for (int j = 0; j < f.ny; ++j)
      for (int i = 0; i < f.nx; ++i) {
        const std::size_t cell = (static_cast<std::size_t>(k / bz) * c.ny + j / by) * c.nx + i / bx;
        max_raw[cell] = std::max(max_raw[cell], field.raw_density[field.voxel_index(i, j, k)]);
      }
  for (std::size_t n = 0; n < c.count(); ++n)
    occ.bits_[n] = softplus(max_raw[n]) >= occ.threshold_ ? 1 : 0;
}

}  // namespace trajfield
