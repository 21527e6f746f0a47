#pragma once

// Cyclic padding and center cropping along the gantry (depth) axis.

#include "vmatflux/nn/tensor.hpp"

namespace vmatflux::nn {

/// Adds (target - depth) / 2 slices on each side, taken cyclically from the
/// opposite end. ShapeError when target < depth or the total is odd.
template <class T>
Tensor5<T> circular_pad_gantry(const Tensor5<T>& x, int target_depth);

/// Adjoint of circular_pad_gantry: wrapped copies add back into their source slice.
template <class T>
Tensor5<T> circular_pad_gantry_backward(const Tensor5<T>& g, int original_depth);

/// Removes (depth - target) / 2 slices from each side.
template <class T>
Tensor5<T> crop_gantry(const Tensor5<T>& x, int target_depth);

/// Adjoint of crop_gantry: zero-fills the removed slices.
template <class T>
Tensor5<T> crop_gantry_backward(const Tensor5<T>& g, int original_depth);

/// Smallest multiple of `multiple` that is >= depth.
int padded_depth(int depth, int multiple);

}  // namespace vmatflux::nn
