#pragma once

#include "trajfield/geometry.hpp"
#include "trajfield/scene.hpp"

#include <vector>

namespace trajfield {

/// git-describe style version baked in at build time.
const char* version_string();

/// Smooth orbit around `target`: n poses sweeping `sweep_deg` of azimuth at
/// a gently varying elevation.
std::vector<Pose> orbit_path(const Vec3& target, double radius, int n, double start_az_deg,
                             double sweep_deg, double elevation_deg, double elevation_wobble_deg);

/// Entry point of the command-line tool. Returns 0 on success, 2 on usage
/// errors and 1 on runtime errors.
int run_cli(int argc, char** argv);

}  // namespace trajfield
