#include "vmatflux/nn/gantry.hpp"

#include <algorithm>
#include <string>

namespace vmatflux::nn {

namespace {

int half_margin(int larger, int smaller, const char* op) {
  if (larger < smaller) {
    throw ShapeError(std::string(op) + ": target depth " + std::to_string(larger) + " below input depth " +
                     std::to_string(smaller));
  }
  if ((larger - smaller) % 2 != 0) {
    throw ShapeError(std::string(op) + ": odd total padding " + std::to_string(larger - smaller) + " (" +
                     std::to_string(smaller) + " -> " + std::to_string(larger) + ")");
  }
  return (larger - smaller) / 2;
}

}  // namespace

int padded_depth(int depth, int multiple) {
  if (depth < 1 || multiple < 1) throw std::invalid_argument("padded_depth: arguments must be positive");
  return ((depth + multiple - 1) / multiple) * multiple;
}

template <class T>
Tensor5<T> circular_pad_gantry(const Tensor5<T>& x, int target_depth) {
  const int D = x.depth();
  const int front = half_margin(target_depth, D, "circular_pad_gantry");
  if (front == 0) return x;
  Tensor5<T> y(Shape5{x.batch(), x.channels(), target_depth, x.height(), x.width()});
  const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
  for (int b = 0; b < x.batch(); ++b)
    for (int c = 0; c < x.channels(); ++c) {
      const T* src = x.channel_ptr(b, c);
      T* dst = y.channel_ptr(b, c);
      for (int j = 0; j < target_depth; ++j) {
        const int s = (((j - front) % D) + D) % D;
        std::copy(src + s * plane, src + (s + 1) * plane, dst + j * plane);
      }
    }
  return y;
}

template <class T>
Tensor5<T> circular_pad_gantry_backward(const Tensor5<T>& g, int original_depth) {
  const int front = half_margin(g.depth(), original_depth, "circular_pad_gantry_backward");
  if (front == 0) return g;
  Tensor5<T> gx(Shape5{g.batch(), g.channels(), original_depth, g.height(), g.width()});
  const std::size_t plane = static_cast<std::size_t>(g.height()) * g.width();
  for (int b = 0; b < g.batch(); ++b)
    for (int c = 0; c < g.channels(); ++c) {
      const T* src = g.channel_ptr(b, c);
      T* dst = gx.channel_ptr(b, c);
      for (int j = 0; j < g.depth(); ++j) {
        const int s = (((j - front) % original_depth) + original_depth) % original_depth;
        for (std::size_t i = 0; i < plane; ++i) dst[s * plane + i] += src[j * plane + i];
      }
    }
  return gx;
}

template <class T>
Tensor5<T> crop_gantry(const Tensor5<T>& x, int target_depth) {
  const int front = half_margin(x.depth(), target_depth, "crop_gantry");
  if (front == 0) return x;
  Tensor5<T> y(Shape5{x.batch(), x.channels(), target_depth, x.height(), x.width()});
  const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
  for (int b = 0; b < x.batch(); ++b)
    for (int c = 0; c < x.channels(); ++c) {
      const T* src = x.channel_ptr(b, c) + front * plane;
      std::copy(src, src + target_depth * plane, y.channel_ptr(b, c));
    }
  return y;
}

template <class T>
Tensor5<T> crop_gantry_backward(const Tensor5<T>& g, int original_depth) {
  const int front = half_margin(original_depth, g.depth(), "crop_gantry_backward");
  if (front == 0) return g;
  Tensor5<T> gx(Shape5{g.batch(), g.channels(), original_depth, g.height(), g.width()});
  const std::size_t plane = static_cast<std::size_t>(g.height()) * g.width();
  for (int b = 0; b < g.batch(); ++b)
    for (int c = 0; c < g.channels(); ++c) {
      const T* src = g.channel_ptr(b, c);
      std::copy(src, src + g.depth() * plane, gx.channel_ptr(b, c) + front * plane);
    }
  return gx;
}

#define VMATFLUX_INSTANTIATE_GANTRY(T)                                 \
  template Tensor5<T> circular_pad_gantry(const Tensor5<T>&, int);          \
  template Tensor5<T> circular_pad_gantry_backward(const Tensor5<T>&, int); \
  template Tensor5<T> crop_gantry(const Tensor5<T>&, int);                  \
  template Tensor5<T> crop_gantry_backward(const Tensor5<T>&, int);

VMATFLUX_INSTANTIATE_GANTRY(float)
VMATFLUX_INSTANTIATE_GANTRY(double)

#undef VMATFLUX_INSTANTIATE_GANTRY

}  // namespace vmatflux::nn
