#pragma once

// Layers with cached forward state and exact backward passes.
//
// Every layer follows the same protocol: forward(x) caches what backward
// needs; backward(g) accumulates parameter gradients into the owning
// ParamSet and returns the gradient with respect to x. backward without a
// preceding forward throws std::logic_error.

#include <optional>
#include <string>
#include <vector>

#include "vmatflux/nn/tensor.hpp"

namespace vmatflux::nn {

/// Spatial resampling performed by a layer: none, stride-2 subsampling, or
/// stride-2 transposed (output = 2x input along every axis).
enum class Resample { Same, Down, Up };

/// 1x1x1 convolution.
template <class T>
class PointwiseConv {
 public:
  PointwiseConv(ParamSet<T>& params, const std::string& name, int cin, int cout, Resample mode = Resample::Same,
                ParamInit weight_init = ParamInit::Kernel);
  Tensor5<T> forward(const Tensor5<T>& x);
  Tensor5<T> backward(const Tensor5<T>& g);

 private:
  Param<T>* w_;
  Param<T>* b_;
  int cin_, cout_;
  Resample mode_;
  Tensor5<T> x_;
  bool cached_{false};
};

/// Depthwise 3x3x3 convolution with zero padding 1. Depth may instead wrap
/// cyclically (Same mode only).
template <class T>
class DepthwiseConv3 {
 public:
  DepthwiseConv3(ParamSet<T>& params, const std::string& name, int channels, Resample mode = Resample::Same,
                 bool circular_depth = false);
  Tensor5<T> forward(const Tensor5<T>& x);
  Tensor5<T> backward(const Tensor5<T>& g);

 private:
  Param<T>* w_;
  Param<T>* b_;
  int channels_;
  Resample mode_;
  bool circular_;
  Tensor5<T> x_;
  bool cached_{false};
};

/// GroupNorm with one group per channel, affine. Passes x through unchanged
/// when disabled.
template <class T>
class ChannelNorm {
 public:
  ChannelNorm(ParamSet<T>& params, const std::string& name, int channels, bool enabled = true);
  Tensor5<T> forward(const Tensor5<T>& x);
  Tensor5<T> backward(const Tensor5<T>& g);

  static constexpr double kEps = 1e-5;

 private:
  Param<T>* gamma_;
  Param<T>* beta_;
  int channels_;
  bool enabled_;
  Tensor5<T> xhat_;
  std::vector<T> rstd_;
  bool cached_{false};
};

/// Exact GELU, x * Phi(x).
template <class T>
class Gelu {
 public:
  Tensor5<T> forward(const Tensor5<T>& x);
  Tensor5<T> backward(const Tensor5<T>& g);

 private:
  Tensor5<T> dydx_;
  bool cached_{false};
};

template <class T>
class Relu {
 public:
  Tensor5<T> forward(const Tensor5<T>& x);
  Tensor5<T> backward(const Tensor5<T>& g);

 private:
  std::vector<unsigned char> active_;
  Shape5 shape_{};
  bool cached_{false};
};

/// Dense convolution with an odd kernel (kd, kh, kw), stride 1, "same" zero padding.
template <class T>
class Conv3d {
 public:
  Conv3d(ParamSet<T>& params, const std::string& name, int cin, int cout, std::array<int, 3> kernel);
  Tensor5<T> forward(const Tensor5<T>& x);
  Tensor5<T> backward(const Tensor5<T>& g);

 private:
  Param<T>* w_;
  Param<T>* b_;
  int cin_, cout_;
  std::array<int, 3> k_;
  Tensor5<T> x_;
  bool cached_{false};
};

/// Transposed convolution whose kernel equals its stride (kd, 2, 2).
template <class T>
class UpConv {
 public:
  UpConv(ParamSet<T>& params, const std::string& name, int cin, int cout, int kd);
  Tensor5<T> forward(const Tensor5<T>& x);
  Tensor5<T> backward(const Tensor5<T>& g);

 private:
  Param<T>* w_;
  Param<T>* b_;
  int cin_, cout_, kd_;
  Tensor5<T> x_;
  bool cached_{false};
};

/// Max pooling with window = stride = (kd, 2, 2).
template <class T>
class MaxPool {
 public:
  explicit MaxPool(int kd) : kd_(kd) {}
  Tensor5<T> forward(const Tensor5<T>& x);
  Tensor5<T> backward(const Tensor5<T>& g);

 private:
  int kd_;
  std::vector<std::size_t> argmax_;
  Shape5 in_shape_{};
  bool cached_{false};
};

template <class T>
Tensor5<T> concat_channels(const Tensor5<T>& a, const Tensor5<T>& b);
/// Inverse of concat_channels for gradients: splits off the first `ca` channels.
template <class T>
std::pair<Tensor5<T>, Tensor5<T>> split_channels(const Tensor5<T>& g, int ca);

struct BlockOptions {
  int expansion{4};
  bool use_norm{true};
  bool circular_depth{false};
};

/// ConvNeXt block: depthwise 3x3x3 (resampling per mode) -> ChannelNorm ->
/// 1x1x1 expansion (x expansion) -> GELU -> 1x1x1 compression to cout,
/// plus a residual that is the identity for Same mode with cin == cout and
/// a 1x1x1 (strided or transposed) projection otherwise.
template <class T>
class ConvNextBlock {
 public:
  ConvNextBlock(ParamSet<T>& params, const std::string& name, int cin, int cout, Resample mode,
                const BlockOptions& options);
  Tensor5<T> forward(const Tensor5<T>& x);
  Tensor5<T> backward(const Tensor5<T>& g);

 private:
  DepthwiseConv3<T> dw_;
  ChannelNorm<T> norm_;
  PointwiseConv<T> expand_;
  Gelu<T> act_;
  PointwiseConv<T> compress_;
  std::optional<PointwiseConv<T>> residual_;
};

}  // namespace vmatflux::nn
