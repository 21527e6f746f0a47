#pragma once

// Beam's-eye-view geometry and the divergent line-integral projector.

#include <optional>
#include <utility>

#include "vmatflux/core_types.hpp"

namespace vmatflux {

inline constexpr double kDefaultStepMm = 1.0;

/// Source position and the orthonormal right-handed frame {u, v, axis}; u runs
/// along leaf travel and v across leaf pairs, both after collimator rotation.
struct BeamFrame {
  Vec3 source_mm{};
  Vec3 axis{};
  Vec3 u_axis{};
  Vec3 v_axis{};
};

BeamFrame beam_frame(double gantry_deg, double collimator_deg, double couch_deg, const Vec3& isocenter_mm,
                     double sad_mm);
BeamFrame beam_frame(const VmatPlan& plan, std::size_t cp_index);

/// Trilinear sample with zero outside the grid.
double sample_trilinear(const Grid3& grid, const Vec3& p);

/// Parametric [t_enter, t_exit] of origin + t * dir inside the support of
/// the zero-padded trilinear interpolant (voxel centers +/- one spacing).
std::optional<std::pair<double, double>> clip_ray_to_grid(const Grid3& grid, const Vec3& origin, const Vec3& dir);

bool point_inside_grid_support(const Grid3& grid, const Vec3& p);

/// Per control point, per pixel: sum of trilinear samples at distances
/// t = j * step_mm from the source along the divergent ray through the pixel
/// (restricted to the grid support), times step_mm.
PlaneStack project_dose(const Grid3& grid, const VmatPlan& plan, const PlaneGeometry& geom,
                        double step_mm = kDefaultStepMm);

/// Resamples the grid so its content is rotated by angle_deg about the +z
/// axis through the isocenter, matching the sense of gantry rotation.
Grid3 rotate_grid_about_gantry_axis(const Grid3& grid, double angle_deg, const Vec3& isocenter_mm);

}  // namespace vmatflux
