#pragma once

#include <span>
#include <string>

#include "vmatflux/core_types.hpp"

namespace vmatflux {

/// 10 log10(peak^2 / MSE) with peak = max(target). Returns +infinity when
/// MSE == 0; throws on size mismatch or a non-positive target peak.
double psnr(std::span<const double> pred, std::span<const double> target);
double psnr(const PlaneStack& pred, const PlaneStack& target);

/// "inf" for the identity sentinel, fixed-point otherwise.
std::string format_psnr(double db);

inline constexpr int kSsimWindow = 7;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// Mean over slices of 2D SSIM with a 7x7 uniform window over all fully
/// contained window positions; data range = max of the target stack.
double ssim(const PlaneStack& pred, const PlaneStack& target);

/// Single-plane SSIM with an explicit data range.
double ssim_plane(std::span<const double> pred, std::span<const double> target, int width, int height,
                  double data_range);

}  // namespace vmatflux
