#include "vmatflux/bev.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

#include "vmatflux/parallel.hpp"

namespace vmatflux {

namespace {

// Rotation of v about the unit axis a by angle th (right-hand rule).
Vec3 rotate_about(const Vec3& v, const Vec3& a, double th) {
  const double c = std::cos(th);
  const double s = std::sin(th);
  return c * v + s * cross(a, v) + (1.0 - c) * dot(a, v) * a;
}

struct Box {
  Vec3 lo;
  Vec3 hi;
};

Box support_box(const Grid3& g) {
  const Vec3& o = g.origin_mm;
  const Vec3& s = g.spacing_mm;
  return {{o.x - s.x, o.y - s.y, o.z - s.z},
          {o.x + g.dims[0] * s.x, o.y + g.dims[1] * s.y, o.z + g.dims[2] * s.z}};
}

}  // namespace

BeamFrame beam_frame(double gantry_deg, double collimator_deg, double couch_deg, const Vec3& isocenter_mm,
                     double sad_mm) {
  const double g = deg_to_rad(gantry_deg);
  const Vec3 offset{sad_mm * std::sin(g), -sad_mm * std::cos(g), 0.0};
  const Vec3 axis0{-std::sin(g), std::cos(g), 0.0};
  // Leaf pairs stack along patient z at collimator 0; u completes (u, v, axis).
  const Vec3 v0{0.0, 0.0, 1.0};
  const Vec3 u0 = cross(v0, axis0);

  const double th = deg_to_rad(collimator_deg);
  Vec3 u = std::cos(th) * u0 + std::sin(th) * v0;
  Vec3 v = -std::sin(th) * u0 + std::cos(th) * v0;

  const Vec3 vertical{0.0, 1.0, 0.0};
  const double couch = deg_to_rad(couch_deg);
  BeamFrame f;
  f.source_mm = isocenter_mm + rotate_about(offset, vertical, couch);
  f.axis = normalized(isocenter_mm - f.source_mm);
  f.u_axis = rotate_about(u, vertical, couch);
  f.v_axis = rotate_about(v, vertical, couch);
  return f;
}

BeamFrame beam_frame(const VmatPlan& plan, std::size_t cp_index) {
  const auto& cp = plan.control_points.at(cp_index);
  return beam_frame(cp.gantry_deg, cp.collimator_deg, cp.couch_deg, plan.isocenter_mm, plan.sad_mm);
}

double sample_trilinear(const Grid3& grid, const Vec3& p) {
  const double fx = (p.x - grid.origin_mm.x) / grid.spacing_mm.x;
  const double fy = (p.y - grid.origin_mm.y) / grid.spacing_mm.y;
  const double fz = (p.z - grid.origin_mm.z) / grid.spacing_mm.z;
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  if (!(fx > -1.0 && fy > -1.0 && fz > -1.0 && fx < nx && fy < ny && fz < nz)) return 0.0;
  const int ix = static_cast<int>(std::floor(fx));
  const int iy = static_cast<int>(std::floor(fy));
  const int iz = static_cast<int>(std::floor(fz));
  const double tx = fx - ix, ty = fy - iy, tz = fz - iz;
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const int z = iz + dz;
    if (z < 0 || z >= nz) continue;
    const double wz = dz ? tz : 1.0 - tz;
    for (int dy = 0; dy < 2; ++dy) {
      const int y = iy + dy;
      if (y < 0 || y >= ny) continue;
      const double wzy = wz * (dy ? ty : 1.0 - ty);
      const double* row = grid.values.data() + (static_cast<std::size_t>(z) * ny + y) * nx;
      if (ix >= 0) acc += wzy * (1.0 - tx) * row[ix];
      if (ix + 1 < nx) acc += wzy * tx * row[ix + 1];
    }
  }
  return acc;
}

std::optional<std::pair<double, double>> clip_ray_to_grid(const Grid3& grid, const Vec3& origin, const Vec3& dir) {
  const Box box = support_box(grid);
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  const double o[3] = {origin.x, origin.y, origin.z};
  const double d[3] = {dir.x, dir.y, dir.z};
  const double lo[3] = {box.lo.x, box.lo.y, box.lo.z};
  const double hi[3] = {box.hi.x, box.hi.y, box.hi.z};
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] <= lo[a] || o[a] >= hi[a]) return std::nullopt;
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a];
    double tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0)) return std::nullopt;
  return std::make_pair(t0, t1);
}

bool point_inside_grid_support(const Grid3& grid, const Vec3& p) {
  const Box b = support_box(grid);
  return p.x > b.lo.x && p.x < b.hi.x && p.y > b.lo.y && p.y < b.hi.y && p.z > b.lo.z && p.z < b.hi.z;
}

PlaneStack project_dose(const Grid3& grid, const VmatPlan& plan, const PlaneGeometry& geom, double step_mm) {
  if (!(step_mm > 0.0)) throw std::invalid_argument("step_mm must be positive");
  validate_grid(grid);
  validate_geometry(geom);
  const int n_cp = static_cast<int>(plan.n_cp());
  PlaneStack stack(PlaneKind::BevDose, geom, n_cp);
  for (int i = 0; i < n_cp; ++i) {
    if (point_inside_grid_support(grid, beam_frame(plan, i).source_mm)) {
      throw std::invalid_argument("degenerate geometry: source of control point " + std::to_string(i) +
                                  " lies inside the dose grid");
    }
  }
  const std::size_t rays = static_cast<std::size_t>(n_cp) * geom.pixels();
  parallel_for(rays, [&](std::size_t r) {
    const int i = static_cast<int>(r / geom.pixels());
    const std::size_t px = r % geom.pixels();
    const int q = static_cast<int>(px / geom.nu);
    const int p = static_cast<int>(px % geom.nu);
    const BeamFrame f = beam_frame(plan, i);
    const Vec3 target = plan.isocenter_mm + geom.u_at(p) * f.u_axis + geom.v_at(q) * f.v_axis;
    const Vec3 dir = normalized(target - f.source_mm);
    double sum = 0.0;
    if (const auto span = clip_ray_to_grid(grid, f.source_mm, dir)) {
      const long j0 = static_cast<long>(std::ceil(std::max(0.0, span->first) / step_mm));
      const long j1 = static_cast<long>(std::floor(span->second / step_mm));
      for (long j = j0; j <= j1; ++j) sum += sample_trilinear(grid, f.source_mm + (j * step_mm) * dir);
    }
    stack.plane(i)[px] = sum * step_mm;
  });
  return stack;
}

Grid3 rotate_grid_about_gantry_axis(const Grid3& grid, double angle_deg, const Vec3& isocenter_mm) {
  validate_grid(grid);
  Grid3 out(grid.dims, grid.origin_mm, grid.spacing_mm);
  if (angle_deg == 0.0) {
    out.values = grid.values;
    return out;
  }
  const double th = deg_to_rad(angle_deg);
  const double c = std::cos(th);
  const double s = std::sin(th);
  const std::size_t slab = static_cast<std::size_t>(grid.dims[0]) * grid.dims[1];
  parallel_for(static_cast<std::size_t>(grid.dims[2]), [&](std::size_t iz) {
    for (int iy = 0; iy < grid.dims[1]; ++iy) {
      for (int ix = 0; ix < grid.dims[0]; ++ix) {
        const Vec3 d = grid.voxel_center(ix, iy, static_cast<int>(iz)) - isocenter_mm;
        // Pull back through the inverse rotation.
        const Vec3 src{c * d.x + s * d.y, -s * d.x + c * d.y, d.z};
        out.values[iz * slab + static_cast<std::size_t>(iy) * grid.dims[0] + ix] =
            sample_trilinear(grid, isocenter_mm + src);
      }
    }
  });
  return out;
}

}  // namespace vmatflux
