#pragma once

// Per-control-point fluence from MLC leaf motion and MU weights.
//
// Model: leaf transmission plus linear leaf motion between control points;
// no tongue-and-groove. Plane i integrates the aperture over the gantry
// interval [mid(g[i-1], g[i]), mid(g[i], g[i+1])], clamped at the arc ends,
// with mu_weight[i] spread uniformly over that interval.

#include <vector>

#include "vmatflux/core_types.hpp"

namespace vmatflux {

inline constexpr int kDefaultSubsteps = 8;

struct ApertureSample {
  LeafBank leaf_left_mm{};
  LeafBank leaf_right_mm{};
  double mu_fraction{0.0};
};

/// Leaf tips (1 - t) * a + t * b. Throws std::invalid_argument for t outside [0, 1].
ApertureSample interp_leaves(const ControlPoint& cp_a, const ControlPoint& cp_b, double t);

/// Exact open-area fraction of every pixel (nv x nu, row-major), in [0, 1].
std::vector<double> aperture_coverage(const ApertureSample& sample, const MachineModel& machine,
                                      const PlaneGeometry& geom);

/// The `substeps` aperture samples attributed to control point i, each
/// carrying mu_weight[i] / substeps.
std::vector<ApertureSample> attributed_samples(const VmatPlan& plan, std::size_t i, int substeps);

std::vector<double> fluence_for_cp(const VmatPlan& plan, std::size_t i, const PlaneGeometry& geom,
                                   int substeps = kDefaultSubsteps);

PlaneStack fluence_stack(const VmatPlan& plan, const PlaneGeometry& geom, int substeps = kDefaultSubsteps);

}  // namespace vmatflux
