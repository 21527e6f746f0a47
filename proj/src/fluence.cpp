#include "vmatflux/fluence.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "vmatflux/parallel.hpp"

namespace vmatflux {

namespace {

double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

// First and one-past-last pixel index whose extent intersects [lo, hi].
std::pair<int, int> pixel_range(double lo, double hi, double origin, double spacing, int n) {
  const double first = std::floor((lo - origin) / spacing + 0.5);
  const double last = std::ceil((hi - origin) / spacing - 0.5);
  const int a = static_cast<int>(std::clamp(first, 0.0, static_cast<double>(n)));
  const int b = static_cast<int>(std::clamp(last + 1.0, 0.0, static_cast<double>(n)));
  return {a, b};
}

}  // namespace

ApertureSample interp_leaves(const ControlPoint& cp_a, const ControlPoint& cp_b, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interpolation parameter must lie in [0, 1]");
  ApertureSample s;
  for (int k = 0; k < kLeafPairs; ++k) {
    s.leaf_left_mm[k] = (1.0 - t) * cp_a.leaf_left_mm[k] + t * cp_b.leaf_left_mm[k];
    s.leaf_right_mm[k] = (1.0 - t) * cp_a.leaf_right_mm[k] + t * cp_b.leaf_right_mm[k];
  }
  return s;
}

std::vector<double> aperture_coverage(const ApertureSample& sample, const MachineModel& machine,
                                      const PlaneGeometry& geom) {
  std::vector<double> out(geom.pixels(), 0.0);
  const auto& edges = machine.leaf_boundaries_mm;
  for (int k = 0; k < kLeafPairs; ++k) {
    const double left = sample.leaf_left_mm[k];
    const double right = sample.leaf_right_mm[k];
    if (!(right > left)) continue;
    const auto [q0, q1] = pixel_range(edges[k], edges[k + 1], geom.v0, geom.dv, geom.nv);
    const auto [p0, p1] = pixel_range(left, right, geom.u0, geom.du, geom.nu);
    for (int q = q0; q < q1; ++q) {
      const double vc = geom.v_at(q);
      const double vfrac = overlap(vc - 0.5 * geom.dv, vc + 0.5 * geom.dv, edges[k], edges[k + 1]) / geom.dv;
      if (vfrac <= 0.0) continue;
      double* row = out.data() + static_cast<std::size_t>(q) * geom.nu;
      for (int p = p0; p < p1; ++p) {
        const double uc = geom.u_at(p);
        row[p] += vfrac * overlap(uc - 0.5 * geom.du, uc + 0.5 * geom.du, left, right) / geom.du;
      }
    }
  }
  // Adjacent bands can push a shared pixel a rounding step above 1.
  for (double& v : out) v = std::min(v, 1.0);
  return out;
}

std::vector<ApertureSample> attributed_samples(const VmatPlan& plan, std::size_t i, int substeps) {
  const auto& cps = plan.control_points;
  if (i >= cps.size()) {
    throw std::out_of_range("control point index " + std::to_string(i) + " out of range (n_cp = " +
                            std::to_string(cps.size()) + ")");
  }
  if (substeps < 1) throw std::invalid_argument("substeps must be >= 1");
  const std::size_t n = cps.size();
  const double g = cps[i].gantry_deg;
  const double lo = i > 0 ? 0.5 * (cps[i - 1].gantry_deg + g) : g;
  const double hi = i + 1 < n ? 0.5 * (g + cps[i + 1].gantry_deg) : g;
  const double weight = cps[i].mu_weight / substeps;

  std::vector<ApertureSample> samples;
  samples.reserve(substeps);
  for (int s = 0; s < substeps; ++s) {
    const double angle = lo + (s + 0.5) * (hi - lo) / substeps;
    ApertureSample sample;
    if (angle < g && i > 0) {
      const double g0 = cps[i - 1].gantry_deg;
      sample = interp_leaves(cps[i - 1], cps[i], std::clamp((angle - g0) / (g - g0), 0.0, 1.0));
    } else if (angle > g && i + 1 < n) {
      const double g1 = cps[i + 1].gantry_deg;
      sample = interp_leaves(cps[i], cps[i + 1], std::clamp((angle - g) / (g1 - g), 0.0, 1.0));
    } else {
      sample = interp_leaves(cps[i], cps[i], 0.0);
    }
    sample.mu_fraction = weight;
    samples.push_back(sample);
  }
  return samples;
}

std::vector<double> fluence_for_cp(const VmatPlan& plan, std::size_t i, const PlaneGeometry& geom,
                                   int substeps) {
  validate_geometry(geom);
  const double transmission = plan.machine.transmission;
  std::vector<double> fluence(geom.pixels(), 0.0);
  for (const auto& sample : attributed_samples(plan, i, substeps)) {
    const auto coverage = aperture_coverage(sample, plan.machine, geom);
    for (std::size_t px = 0; px < fluence.size(); ++px) {
      fluence[px] += sample.mu_fraction * (transmission + (1.0 - transmission) * coverage[px]);
    }
  }
  return fluence;
}

PlaneStack fluence_stack(const VmatPlan& plan, const PlaneGeometry& geom, int substeps) {
  validate_plan(plan);
  PlaneStack stack(PlaneKind::Fluence, geom, static_cast<int>(plan.n_cp()));
  parallel_for(plan.n_cp(), [&](std::size_t i) {
    const auto plane = fluence_for_cp(plan, i, geom, substeps);
    std::copy(plane.begin(), plane.end(), stack.plane(static_cast<int>(i)));
  });
  return stack;
}

}  // namespace vmatflux
