#include "vmatflux/dose.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "vmatflux/bev.hpp"
#include "vmatflux/io.hpp"
#include "vmatflux/parallel.hpp"

namespace vmatflux {

namespace {

double sample_bilinear(const PlaneStack& stack, int i, double u, double v) {
  const auto& g = stack.geometry;
  const double fu = (u - g.u0) / g.du;
  const double fv = (v - g.v0) / g.dv;
  if (!(fu > -1.0 && fv > -1.0 && fu < g.nu && fv < g.nv)) return 0.0;
  const int p = static_cast<int>(std::floor(fu));
  const int q = static_cast<int>(std::floor(fv));
  const double tu = fu - p, tv = fv - q;
  const double* plane = stack.plane(i);
  double acc = 0.0;
  for (int dq = 0; dq < 2; ++dq) {
    const int qq = q + dq;
    if (qq < 0 || qq >= g.nv) continue;
    const double wv = dq ? tv : 1.0 - tv;
    const double* row = plane + static_cast<std::size_t>(qq) * g.nu;
    if (p >= 0) acc += wv * (1.0 - tu) * row[p];
    if (p + 1 < g.nu) acc += wv * tu * row[p + 1];
  }
  return acc;
}

bool in_mask(const Grid3* mask, std::size_t i) { return mask == nullptr || mask->values[i] > 0.5; }

}  // namespace

GridSpec GridSpec::centered(std::array<int, 3> dims, double spacing_mm, const Vec3& center) {
  GridSpec s;
  s.dims = dims;
  s.spacing_mm = {spacing_mm, spacing_mm, spacing_mm};
  s.origin_mm = {center.x - 0.5 * (dims[0] - 1) * spacing_mm, center.y - 0.5 * (dims[1] - 1) * spacing_mm,
                 center.z - 0.5 * (dims[2] - 1) * spacing_mm};
  return s;
}

Grid3 forward_dose(const PlaneStack& fluence, const VmatPlan& plan, const GridSpec& spec,
                   double attenuation_per_mm) {
  if (fluence.n_cp != static_cast<int>(plan.n_cp())) {
    throw std::invalid_argument("fluence stack has " + std::to_string(fluence.n_cp) + " planes but plan has " +
                                std::to_string(plan.n_cp()) + " control points");
  }
  Grid3 dose(spec.dims, spec.origin_mm, spec.spacing_mm);
  std::vector<BeamFrame> frames;
  for (std::size_t i = 0; i < plan.n_cp(); ++i) {
    frames.push_back(beam_frame(plan, i));
    if (point_inside_grid_support(dose, frames.back().source_mm)) {
      throw std::invalid_argument("degenerate geometry: source of control point " + std::to_string(i) +
                                  " lies inside the dose grid");
    }
  }
  const double sad = plan.sad_mm;
  const int nx = spec.dims[0], ny = spec.dims[1];
  parallel_for(static_cast<std::size_t>(spec.dims[2]), [&](std::size_t iz) {
    for (int iy = 0; iy < ny; ++iy) {
      for (int ix = 0; ix < nx; ++ix) {
        const Vec3 x = dose.voxel_center(ix, iy, static_cast<int>(iz));
        double acc = 0.0;
        for (std::size_t i = 0; i < frames.size(); ++i) {
          const BeamFrame& f = frames[i];
          const Vec3 w = x - f.source_mm;
          const double depth = dot(w, f.axis);
          if (depth <= 0.0) continue;
          const double scale = sad / depth;
          const double value =
              sample_bilinear(fluence, static_cast<int>(i), dot(w, f.u_axis) * scale, dot(w, f.v_axis) * scale);
          if (value == 0.0) continue;
          const double dist2 = dot(w, w);
          double contrib = value * (sad * sad) / dist2;
          if (attenuation_per_mm > 0.0) {
            const double dist = std::sqrt(dist2);
            const auto span = clip_ray_to_grid(dose, f.source_mm, (1.0 / dist) * w);
            const double entry = span ? std::max(0.0, span->first) : dist;
            contrib *= std::exp(-attenuation_per_mm * std::max(0.0, dist - entry));
          }
          acc += contrib;
        }
        dose.values[dose.index(ix, iy, static_cast<int>(iz))] = acc;
      }
    }
  });
  return dose;
}

double mae_gy(const Grid3& dose_a, const Grid3& dose_b, const Grid3* mask) {
  if (!dose_a.same_geometry(dose_b) || (mask != nullptr && !dose_a.same_geometry(*mask))) {
    throw std::invalid_argument("mae_gy: grid geometry mismatch");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < dose_a.values.size(); ++i) {
    if (!in_mask(mask, i)) continue;
    sum += std::abs(dose_a.values[i] - dose_b.values[i]);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("mae_gy: empty mask");
  return sum / static_cast<double>(count);
}

DvhCurve dvh(const Grid3& dose, const Grid3& mask, int n_bins, double d_max, std::string structure) {
  if (!dose.same_geometry(mask)) throw std::invalid_argument("dvh: dose and mask geometry differ");
  if (n_bins < 2) throw std::invalid_argument("dvh: need at least 2 bins");
  std::vector<double> doses;
  for (std::size_t i = 0; i < dose.values.size(); ++i) {
    if (mask.values[i] > 0.5) doses.push_back(dose.values[i]);
  }
  if (doses.empty()) throw std::invalid_argument("dvh: empty mask for structure '" + structure + "'");
  std::sort(doses.begin(), doses.end());
  if (!(d_max > 0.0)) {
    d_max = 1.05 * doses.back();
    if (!(d_max > 0.0)) d_max = 1.0;
  }
  DvhCurve c;
  c.structure = std::move(structure);
  c.dose_bins_gy.resize(n_bins);
  c.volume_fraction.resize(n_bins);
  const double n = static_cast<double>(doses.size());
  for (int j = 0; j < n_bins; ++j) {
    const double d = d_max * j / (n_bins - 1);
    const auto first = std::lower_bound(doses.begin(), doses.end(), d);
    c.dose_bins_gy[j] = d;
    c.volume_fraction[j] = static_cast<double>(doses.end() - first) / n;
  }
  return c;
}

double dvh_max_difference(const DvhCurve& a, const DvhCurve& b) {
  if (a.dose_bins_gy != b.dose_bins_gy) throw std::invalid_argument("dvh curves use different bins");
  double worst = 0.0;
  for (std::size_t j = 0; j < a.volume_fraction.size(); ++j) {
    worst = std::max(worst, std::abs(a.volume_fraction[j] - b.volume_fraction[j]));
  }
  return worst;
}

void write_dvh_csv(const DvhCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "dose_gy,volume_fraction\n";
  out.precision(10);
  for (std::size_t j = 0; j < curve.dose_bins_gy.size(); ++j) {
    out << curve.dose_bins_gy[j] << ',' << curve.volume_fraction[j] << '\n';
  }
}

}  // namespace vmatflux
