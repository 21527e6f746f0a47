#include "vmatflux/core_types.hpp"

#include <algorithm>
#include <sstream>

namespace vmatflux {

namespace {

LeafBoundaries boundaries_from_widths(int outer_count, double outer_width, int inner_count,
                                      double inner_width) {
  LeafBoundaries edges{};
  const double span = 2.0 * outer_count * outer_width + inner_count * inner_width;
  double edge = -0.5 * span;
  edges[0] = edge;
  int idx = 1;
  auto push = [&](int count, double width) {
    for (int i = 0; i < count; ++i) {
      edge += width;
      edges[idx++] = edge;
    }
  };
  push(outer_count, outer_width);
  push(inner_count, inner_width);
  push(outer_count, outer_width);
  // Summation drift: pin the last edge and the center exactly.
  edges[kLeafPairs] = 0.5 * span;
  edges[kLeafPairs / 2] = 0.0;
  return edges;
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

std::string_view to_string(MlcModel model) {
  switch (model) {
    case MlcModel::HD120:
      return "HD120";
    case MlcModel::M120:
      return "M120";
  }
  return "unknown";
}

MlcModel mlc_model_from_string(std::string_view name) {
  if (name == "HD120") return MlcModel::HD120;
  if (name == "M120") return MlcModel::M120;
  throw std::invalid_argument("unknown MLC model '" + std::string(name) + "'");
}

LeafBoundaries leaf_boundaries(MlcModel model) {
  switch (model) {
    case MlcModel::HD120:
      return boundaries_from_widths(14, 5.0, 32, 2.5);
    case MlcModel::M120:
      return boundaries_from_widths(10, 10.0, 40, 5.0);
  }
  throw std::invalid_argument("unknown MLC model");
}

LeafBoundaries leaf_boundaries(std::string_view model_name) {
  return leaf_boundaries(mlc_model_from_string(model_name));
}

MachineModel MachineModel::make(MlcModel model, double transmission) {
  MachineModel m;
  m.name = model;
  m.leaf_pair_count = kLeafPairs;
  m.leaf_boundaries_mm = leaf_boundaries(model);
  m.transmission = transmission;
  return m;
}

void validate_machine(const MachineModel& machine) {
  if (machine.leaf_pair_count != kLeafPairs) {
    throw PlanValidationError("machine must have 60 leaf pairs");
  }
  if (!(machine.transmission >= 0.0 && machine.transmission < 1.0)) {
    throw PlanValidationError("transmission must lie in [0, 1)");
  }
  const auto& b = machine.leaf_boundaries_mm;
  for (int i = 0; i < kLeafPairs; ++i) {
    if (!(b[i + 1] > b[i])) throw PlanValidationError("leaf boundaries must be strictly increasing");
  }
  for (int i = 0; i <= kLeafPairs; ++i) {
    if (std::abs(b[i] + b[kLeafPairs - i]) > 1e-9) {
      throw PlanValidationError("leaf boundaries must be symmetric about 0");
    }
  }
}

void validate_plan(const VmatPlan& plan) {
  validate_machine(plan.machine);
  if (!(plan.sad_mm > 0.0) || !finite(plan.sad_mm)) throw PlanValidationError("sad_mm must be positive");
  if (!finite(plan.isocenter_mm.x) || !finite(plan.isocenter_mm.y) || !finite(plan.isocenter_mm.z)) {
    throw PlanValidationError("isocenter must be finite");
  }
  if (plan.control_points.empty()) throw PlanValidationError("plan has no control points");

  double mu_total = 0.0;
  for (std::size_t i = 0; i < plan.control_points.size(); ++i) {
    const auto& cp = plan.control_points[i];
    const int ci = static_cast<int>(i);
    auto fail = [&](const std::string& msg, int pair = -1) {
      std::ostringstream os;
      os << "control point " << ci;
      if (pair >= 0) os << ", leaf pair " << pair;
      os << ": " << msg;
      throw PlanValidationError(os.str(), ci, pair);
    };
    if (!finite(cp.gantry_deg) || cp.gantry_deg < 0.0 || cp.gantry_deg >= 360.0) {
      fail("gantry_deg must lie in [0, 360)");
    }
    if (!finite(cp.collimator_deg) || !finite(cp.couch_deg)) fail("non-finite collimator/couch angle");
    if (!finite(cp.mu_weight) || cp.mu_weight < 0.0) fail("mu_weight must be finite and non-negative");
    if (i > 0 && !(cp.gantry_deg > plan.control_points[i - 1].gantry_deg)) {
      fail("gantry angles must be strictly increasing");
    }
    for (int k = 0; k < kLeafPairs; ++k) {
      if (!finite(cp.leaf_left_mm[k]) || !finite(cp.leaf_right_mm[k])) fail("non-finite leaf position", k);
      if (cp.leaf_left_mm[k] > cp.leaf_right_mm[k]) fail("leaf_left_mm > leaf_right_mm", k);
    }
    mu_total += cp.mu_weight;
  }
  if (!(mu_total > 0.0)) throw PlanValidationError("total mu_weight must be positive");
}

VmatPlan sorted_by_gantry(VmatPlan plan) {
  std::stable_sort(plan.control_points.begin(), plan.control_points.end(),
                   [](const ControlPoint& a, const ControlPoint& b) { return a.gantry_deg < b.gantry_deg; });
  return plan;
}

Grid3::Grid3(std::array<int, 3> dims_, Vec3 origin, Vec3 spacing, double fill)
    : dims(dims_), origin_mm(origin), spacing_mm(spacing) {
  for (int d : dims) {
    if (d < 1) throw std::invalid_argument("grid dims must be >= 1");
  }
  values.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], fill);
}

void validate_grid(const Grid3& grid) {
  for (int d : grid.dims) {
    if (d < 1) throw std::invalid_argument("grid dims must be >= 1");
  }
  if (!(grid.spacing_mm.x > 0 && grid.spacing_mm.y > 0 && grid.spacing_mm.z > 0)) {
    throw std::invalid_argument("grid spacing must be positive");
  }
  if (grid.values.size() != static_cast<std::size_t>(grid.dims[0]) * grid.dims[1] * grid.dims[2]) {
    throw std::invalid_argument("grid value count does not match dims");
  }
  for (double v : grid.values) {
    if (!finite(v)) throw std::invalid_argument("grid contains non-finite values");
  }
}

PlaneGeometry PlaneGeometry::centered(int nu, int nv, double du, double dv) {
  PlaneGeometry g;
  g.nu = nu;
  g.nv = nv;
  g.du = du;
  g.dv = dv;
  g.u0 = -0.5 * (nu - 1) * du;
  g.v0 = -0.5 * (nv - 1) * dv;
  return g;
}

void validate_geometry(const PlaneGeometry& geom) {
  if (geom.nu < 1 || geom.nv < 1) throw std::invalid_argument("plane size must be >= 1");
  if (!(geom.du > 0.0) || !(geom.dv > 0.0)) throw std::invalid_argument("plane spacing must be positive");
}

std::string_view to_string(PlaneKind kind) {
  return kind == PlaneKind::Fluence ? "Fluence" : "BevDose";
}

PlaneKind plane_kind_from_string(std::string_view name) {
  if (name == "Fluence") return PlaneKind::Fluence;
  if (name == "BevDose") return PlaneKind::BevDose;
  throw std::invalid_argument("unknown plane kind '" + std::string(name) + "'");
}

PlaneStack::PlaneStack(PlaneKind kind_, const PlaneGeometry& geom, int n_cp_, double fill)
    : kind(kind_), geometry(geom), n_cp(n_cp_) {
  validate_geometry(geom);
  if (n_cp_ < 0) throw std::invalid_argument("n_cp must be non-negative");
  values.assign(static_cast<std::size_t>(n_cp_) * geom.pixels(), fill);
}

}  // namespace vmatflux
