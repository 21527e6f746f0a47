#include <doctest.h>

#include <cmath>
#include <fstream>

#include "test_util.hpp"
#include "vmatflux/bev.hpp"
#include "vmatflux/dose.hpp"
#include "vmatflux/io.hpp"

using namespace vmatflux;

TEST_CASE("grid spec centering") {
  const GridSpec s = GridSpec::centered({48, 48, 48}, 3.0);
  CHECK(s.origin_mm.x == doctest::Approx(-70.5));
  const GridSpec t = GridSpec::centered({4, 6, 8}, 2.0, {10, 0, 0});
  CHECK(t.origin_mm.x == doctest::Approx(7.0));
  CHECK(t.origin_mm.y == doctest::Approx(-5.0));
  CHECK(t.origin_mm.z == doctest::Approx(-7.0));
}

TEST_CASE("single beam dose follows the inverse square law on axis") {
  VmatPlan plan = testing::open_arc(1, 100.0);
  PlaneStack f(PlaneKind::Fluence, PlaneGeometry::centered(33, 33, 2.5, 2.5), 1, 1.0);
  // Column of voxels along the beam axis (gantry 0: source at y = -1000).
  GridSpec spec;
  spec.dims = {1, 21, 1};
  spec.origin_mm = {0.0, -100.0, 0.0};
  spec.spacing_mm = {1.0, 10.0, 1.0};
  const Grid3 d = forward_dose(f, plan, spec);
  for (int iy = 0; iy < 21; ++iy) {
    const double depth = 1000.0 + d.voxel_center(0, iy, 0).y;
    CHECK(d.at(0, iy, 0) == doctest::Approx(1000.0 * 1000.0 / (depth * depth)));
  }
  CHECK(d.at(0, 10, 0) == doctest::Approx(1.0));

  const Grid3 att = forward_dose(f, plan, spec, 0.01);
  for (int iy = 1; iy < 21; ++iy) CHECK(att.at(0, iy, 0) < d.at(0, iy, 0));
  // Depth below the grid entry of voxel 0's ray: entry lies one spacing before the first center.
  const double expected = d.at(0, 10, 0) * std::exp(-0.01 * 110.0);
  CHECK(att.at(0, 10, 0) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("forward dose is linear in fluence and sums over control points") {
  const VmatPlan plan = testing::open_arc(4, 30.0);
  const PlaneGeometry geom = PlaneGeometry::centered(16, 16, 2.5, 2.5);
  PlaneStack a(PlaneKind::Fluence, geom, 4), b(PlaneKind::Fluence, geom, 4);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    a.values[i] = std::sin(0.01 * static_cast<double>(i)) + 1.0;
    b.values[i] = std::cos(0.02 * static_cast<double>(i)) + 1.0;
  }
  PlaneStack ab = a;
  for (std::size_t i = 0; i < ab.values.size(); ++i) ab.values[i] = 2.0 * a.values[i] + b.values[i];
  const GridSpec spec = GridSpec::centered({12, 12, 12}, 4.0);
  const Grid3 da = forward_dose(a, plan, spec), db = forward_dose(b, plan, spec), dab = forward_dose(ab, plan, spec);
  for (std::size_t i = 0; i < dab.size(); ++i) CHECK(dab.values[i] == doctest::Approx(2.0 * da.values[i] + db.values[i]));

  PlaneStack wrong(PlaneKind::Fluence, geom, 3);
  CHECK_THROWS_AS(forward_dose(wrong, plan, spec), std::invalid_argument);
}

TEST_CASE("back-projection is the measure-weighted adjoint of the projector") {
  // <P G, F> du dv ~ <G, B F> dV, up to cos^3 of the ray angle and discretization.
  const VmatPlan plan = testing::open_arc(6, 30.0);
  const PlaneGeometry geom = PlaneGeometry::centered(32, 32, 2.5, 2.5);
  Grid3 g({40, 40, 40}, {-58.5, -58.5, -58.5}, {3.0, 3.0, 3.0});
  for (int z = 0; z < 40; ++z)
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 40; ++x) {
        const Vec3 c = g.voxel_center(x, y, z) - Vec3{5.0, -4.0, 3.0};
        g.at(x, y, z) = std::exp(-dot(c, c) / (2.0 * 15.0 * 15.0));
      }
  PlaneStack f(PlaneKind::Fluence, geom, 6);
  for (int i = 0; i < 6; ++i)
    for (int q = 0; q < geom.nv; ++q)
      for (int p = 0; p < geom.nu; ++p) {
        const double u = geom.u_at(p), v = geom.v_at(q);
        f.at(i, q, p) = (1.0 + 0.2 * i) * std::exp(-(u * u + (v - 5.0) * (v - 5.0)) / (2.0 * 20.0 * 20.0));
      }
  const PlaneStack pg = project_dose(g, plan, geom, 0.5);
  double lhs = 0.0;
  for (std::size_t i = 0; i < f.values.size(); ++i) lhs += pg.values[i] * f.values[i];
  lhs *= geom.du * geom.dv;
  const Grid3 bf = forward_dose(f, plan, GridSpec::of(g));
  double rhs = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) rhs += g.values[i] * bf.values[i];
  rhs *= 27.0;
  CHECK(lhs == doctest::Approx(rhs).epsilon(0.02));
}

TEST_CASE("mae over all voxels and a mask") {
  Grid3 a({2, 2, 1}, {}, {1, 1, 1}), b({2, 2, 1}, {}, {1, 1, 1}), m({2, 2, 1}, {}, {1, 1, 1});
  a.values = {1, 2, 3, 4};
  b.values = {1, 0, 3, 8};
  m.values = {0, 1, 0, 0};
  CHECK(mae_gy(a, b) == doctest::Approx(1.5));
  CHECK(mae_gy(a, b, &m) == doctest::Approx(2.0));
  m.values = {0, 0, 0, 0};
  CHECK_THROWS(mae_gy(a, b, &m));
}

TEST_CASE("uniform dose has a step DVH") {
  const GridSpec s = GridSpec::centered({10, 10, 10}, 2.0);
  Grid3 dose(s.dims, s.origin_mm, s.spacing_mm, 10.0);
  Grid3 mask(s.dims, s.origin_mm, s.spacing_mm, 0.0);
  for (int z = 2; z < 7; ++z)
    for (int y = 2; y < 7; ++y)
      for (int x = 2; x < 7; ++x) mask.at(x, y, z) = 1.0;
  const DvhCurve c = dvh(dose, mask, 211, 21.0);
  for (std::size_t j = 0; j < c.dose_bins_gy.size(); ++j) {
    CHECK(c.volume_fraction[j] == (c.dose_bins_gy[j] <= 10.0 ? 1.0 : 0.0));
  }
  CHECK(c.dose_bins_gy[100] == doctest::Approx(10.0));
  CHECK(c.volume_fraction[100] == 1.0);
  CHECK(c.volume_fraction[101] == 0.0);
}

TEST_CASE("dvh is monotone and starts at full volume") {
  const Grid3 mask = testing::sphere_grid(16, 2.0, {}, 10.0);
  Grid3 dose = mask;
  for (std::size_t i = 0; i < dose.size(); ++i) dose.values[i] = static_cast<double>(i % 97) * 0.1;
  const DvhCurve c = dvh(dose, mask);
  CHECK(c.volume_fraction.front() == 1.0);
  CHECK(c.volume_fraction.back() == 0.0);
  for (std::size_t j = 1; j < c.volume_fraction.size(); ++j) CHECK(c.volume_fraction[j] <= c.volume_fraction[j - 1]);
  CHECK(dvh_max_difference(c, c) == 0.0);
  CHECK_THROWS(dvh_max_difference(c, dvh(dose, mask, 10)));
  Grid3 empty = mask;
  std::fill(empty.values.begin(), empty.values.end(), 0.0);
  CHECK_THROWS(dvh(dose, empty));
}

TEST_CASE("dvh csv") {
  const auto dir = testing::scratch_dir("dvh_csv");
  const Grid3 mask = testing::sphere_grid(8, 2.0, {}, 5.0);
  write_dvh_csv(dvh(mask, mask, 4), dir / "d.csv");
  std::ifstream in(dir / "d.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "dose_gy,volume_fraction");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 4);
}
