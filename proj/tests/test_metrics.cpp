#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "vmatflux/metrics.hpp"

using namespace vmatflux;

namespace {

PlaneStack random_stack(int n, int w, int h, std::uint64_t seed) {
  PlaneStack s(PlaneKind::Fluence, PlaneGeometry::centered(w, h, 1, 1), n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : s.values) v = u(rng);
  return s;
}

// Direct windowed SSIM, no summed-area tables.
double ssim_brute(const std::vector<double>& x, const std::vector<double>& y, int w, int h, double L) {
  const double c1 = (kSsimK1 * L) * (kSsimK1 * L), c2 = (kSsimK2 * L) * (kSsimK2 * L);
  const int k = kSsimWindow;
  double total = 0.0;
  int count = 0;
  for (int r = 0; r + k <= h; ++r)
    for (int c = 0; c + k <= w; ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          mx += x[(r + i) * w + c + j];
          my += y[(r + i) * w + c + j];
        }
      mx /= k * k;
      my /= k * k;
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          const double a = x[(r + i) * w + c + j] - mx, b = y[(r + i) * w + c + j] - my;
          vx += a * a;
          vy += b * b;
          cxy += a * b;
        }
      vx /= k * k;
      vy /= k * k;
      cxy /= k * k;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / count;
}

}  // namespace

TEST_CASE("psnr of a constant offset of a tenth of the peak is 20 dB") {
  PlaneStack t = random_stack(3, 16, 16, 1);
  double peak = 0.0;
  for (double v : t.values) peak = std::max(peak, v);
  PlaneStack p = t;
  for (double& v : p.values) v += 0.1 * peak;
  CHECK(std::abs(psnr(p, t) - 20.0) < 1e-6);
}

TEST_CASE("psnr closed form and sentinels") {
  const std::vector<double> t{0.0, 2.0, 1.0, 1.0};
  const std::vector<double> p{0.5, 2.0, 1.0, 0.5};
  // MSE = 0.125, peak 2.
  CHECK(psnr(p, t) == doctest::Approx(10.0 * std::log10(4.0 / 0.125)));
  CHECK(psnr(t, t) == std::numeric_limits<double>::infinity());
  CHECK(format_psnr(psnr(t, t)) == "inf");
  CHECK(format_psnr(20.0).rfind("20", 0) == 0);
  CHECK_THROWS(psnr(std::vector<double>{1.0}, t));
  CHECK_THROWS(psnr(t, std::vector<double>(4, 0.0)));
}

TEST_CASE("ssim of identical stacks is exactly one") {
  const PlaneStack t = random_stack(4, 20, 12, 2);
  CHECK(ssim(t, t) == 1.0);
}

TEST_CASE("ssim matches a direct windowed evaluation") {
  const PlaneStack a = random_stack(1, 15, 11, 3);
  PlaneStack b = random_stack(1, 15, 11, 4);
  for (std::size_t i = 0; i < b.values.size(); ++i) b.values[i] = 0.7 * a.values[i] + 0.3 * b.values[i];
  const double fast = ssim_plane(b.values, a.values, 15, 11, 1.0);
  CHECK(fast == doctest::Approx(ssim_brute(b.values, a.values, 15, 11, 1.0)).epsilon(1e-9));
  CHECK(ssim_plane(a.values, b.values, 15, 11, 1.0) == doctest::Approx(fast).epsilon(1e-12));
}

TEST_CASE("ssim degrades with noise") {
  const PlaneStack t = random_stack(2, 24, 24, 5);
  PlaneStack mild = t, strong = t;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    const double z = n(rng);
    mild.values[i] += 0.05 * z;
    strong.values[i] += 0.3 * z;
  }
  const double sm = ssim(mild, t), ss = ssim(strong, t);
  CHECK(sm < 1.0);
  CHECK(ss < sm);
}

TEST_CASE("ssim rejects mismatched shapes") {
  CHECK_THROWS(ssim(random_stack(2, 8, 8, 1), random_stack(3, 8, 8, 1)));
}
