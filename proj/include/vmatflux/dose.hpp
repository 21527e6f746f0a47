#pragma once

// Simplified fluence-to-dose oracle and voxel-domain evaluation.

#include <filesystem>
#include <string>
#include <vector>

#include "vmatflux/core_types.hpp"

namespace vmatflux {

struct GridSpec {
  std::array<int, 3> dims{48, 48, 48};
  Vec3 origin_mm{-70.5, -70.5, -70.5};
  Vec3 spacing_mm{3.0, 3.0, 3.0};

  static GridSpec centered(std::array<int, 3> dims, double spacing_mm, const Vec3& center = {});
  static GridSpec of(const Grid3& grid) { return {grid.dims, grid.origin_mm, grid.spacing_mm}; }
};

/// Back-projection of the fluence stack: every voxel sums, over control
/// points, the bilinear fluence at its projection onto the beam's isocenter
/// plane times (SAD / |voxel - source|)^2. attenuation_per_mm > 0 adds
/// exp(-mu * depth) with depth measured from the ray's grid entry.
Grid3 forward_dose(const PlaneStack& fluence, const VmatPlan& plan, const GridSpec& spec,
                   double attenuation_per_mm = 0.0);

/// Mean |a - b| over the voxels where mask > 0.5, or over all voxels.
double mae_gy(const Grid3& dose_a, const Grid3& dose_b, const Grid3* mask = nullptr);

inline constexpr int kDefaultDvhBins = 256;

struct DvhCurve {
  std::string structure;
  std::vector<double> dose_bins_gy;
  std::vector<double> volume_fraction;
};

/// Cumulative DVH on n_bins uniform dose points over [0, d_max]. A
/// non-positive d_max selects 1.05 x the maximum dose inside the mask.
DvhCurve dvh(const Grid3& dose, const Grid3& mask, int n_bins = kDefaultDvhBins, double d_max = -1.0,
             std::string structure = "target");

/// Largest |a - b| over the shared bins, in volume fraction.
double dvh_max_difference(const DvhCurve& a, const DvhCurve& b);

void write_dvh_csv(const DvhCurve& curve, const std::filesystem::path& path);

}  // namespace vmatflux
