#include "vmatflux/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <vector>

namespace vmatflux {

double psnr(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || target.empty()) throw std::invalid_argument("psnr: shape mismatch");
  const double peak = *std::max_element(target.begin(), target.end());
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: target must have a positive peak");
  double sq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    sq += d * d;
  }
  if (sq == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = sq / static_cast<double>(pred.size());
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const PlaneStack& pred, const PlaneStack& target) {
  if (!pred.same_shape(target)) throw std::invalid_argument("psnr: stack shape mismatch");
  return psnr(std::span<const double>(pred.values), std::span<const double>(target.values));
}

std::string format_psnr(double db) {
  if (std::isinf(db) && db > 0) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", db);
  return buf;
}

double ssim_plane(std::span<const double> pred, std::span<const double> target, int width, int height,
                  double data_range) {
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (pred.size() != n || target.size() != n) throw std::invalid_argument("ssim: shape mismatch");
  const int win = std::min({kSsimWindow, width, height});
  const double c1 = (kSsimK1 * data_range) * (kSsimK1 * data_range);
  const double c2 = (kSsimK2 * data_range) * (kSsimK2 * data_range);

  // Summed-area tables of x, y, x^2, y^2, xy with a zero first row/column.
  const int W = width + 1;
  std::vector<double> sx(static_cast<std::size_t>(W) * (height + 1), 0.0), sy(sx), sxx(sx), syy(sx), sxy(sx);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double x = pred[static_cast<std::size_t>(r) * width + c];
      const double y = target[static_cast<std::size_t>(r) * width + c];
      const std::size_t k = static_cast<std::size_t>(r + 1) * W + (c + 1);
      const std::size_t up = k - W, left = k - 1, diag = k - W - 1;
      sx[k] = x + sx[up] + sx[left] - sx[diag];
      sy[k] = y + sy[up] + sy[left] - sy[diag];
      sxx[k] = x * x + sxx[up] + sxx[left] - sxx[diag];
      syy[k] = y * y + syy[up] + syy[left] - syy[diag];
      sxy[k] = x * y + sxy[up] + sxy[left] - sxy[diag];
    }
  }
  auto box = [&](const std::vector<double>& s, int r, int c) {
    const std::size_t a = static_cast<std::size_t>(r) * W + c;
    const std::size_t b = static_cast<std::size_t>(r + win) * W + c;
    return s[b + win] - s[a + win] - s[b] + s[a];
  };
  const double inv = 1.0 / (static_cast<double>(win) * win);
  double total = 0.0;
  int count = 0;
  for (int r = 0; r + win <= height; ++r) {
    for (int c = 0; c + win <= width; ++c) {
      const double mx = box(sx, r, c) * inv;
      const double my = box(sy, r, c) * inv;
      const double vx = box(sxx, r, c) * inv - mx * mx;
      const double vy = box(syy, r, c) * inv - my * my;
      const double cxy = box(sxy, r, c) * inv - mx * my;
      total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / count;
}

double ssim(const PlaneStack& pred, const PlaneStack& target) {
  if (!pred.same_shape(target)) throw std::invalid_argument("ssim: stack shape mismatch");
  if (target.n_cp == 0) throw std::invalid_argument("ssim: empty stack");
  double range = *std::max_element(target.values.begin(), target.values.end());
  if (!(range > 0.0)) range = 1.0;
  const auto& g = target.geometry;
  const std::size_t plane = g.pixels();
  double total = 0.0;
  for (int i = 0; i < target.n_cp; ++i) {
    total += ssim_plane(std::span<const double>(pred.plane(i), plane), std::span<const double>(target.plane(i), plane),
                        g.nu, g.nv, range);
  }
  return total / target.n_cp;
}

}  // namespace vmatflux
