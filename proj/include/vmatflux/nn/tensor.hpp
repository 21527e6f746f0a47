#pragma once

// Dense (batch, channel, depth, height, width) arrays and the parameter store.

#include <array>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace vmatflux::nn {

using Shape5 = std::array<int, 5>;

std::string shape_string(const Shape5& s);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <class T>
struct Tensor5 {
  Shape5 shape{0, 0, 0, 0, 0};
  std::vector<T> data;

  Tensor5() = default;
  explicit Tensor5(const Shape5& s, T fill = T(0)) : shape(s) {
    for (int d : s) {
      if (d < 1) throw ShapeError("tensor dims must be >= 1, got " + shape_string(s));
    }
    data.assign(static_cast<std::size_t>(s[0]) * s[1] * s[2] * s[3] * s[4], fill);
  }
  Tensor5(int n, int c, int d, int h, int w, T fill = T(0)) : Tensor5(Shape5{n, c, d, h, w}, fill) {}

  int batch() const { return shape[0]; }
  int channels() const { return shape[1]; }
  int depth() const { return shape[2]; }
  int height() const { return shape[3]; }
  int width() const { return shape[4]; }
  std::size_t spatial() const { return static_cast<std::size_t>(shape[2]) * shape[3] * shape[4]; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  T* channel_ptr(int b, int c) { return data.data() + (static_cast<std::size_t>(b) * shape[1] + c) * spatial(); }
  const T* channel_ptr(int b, int c) const {
    return data.data() + (static_cast<std::size_t>(b) * shape[1] + c) * spatial();
  }
  std::size_t offset(int b, int c, int d, int h, int w) const {
    return (((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + d) * shape[3] + h) * shape[4] + w;
  }
  T& at(int b, int c, int d, int h, int w) { return data[offset(b, c, d, h, w)]; }
  T at(int b, int c, int d, int h, int w) const { return data[offset(b, c, d, h, w)]; }
};

template <class T>
void add_inplace(Tensor5<T>& dst, const Tensor5<T>& src) {
  if (dst.shape != src.shape) {
    throw ShapeError("add: shape mismatch " + shape_string(dst.shape) + " vs " + shape_string(src.shape));
  }
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

/// Throws std::runtime_error naming `where` on the first NaN/Inf.
template <class T>
void check_finite(const Tensor5<T>& t, const char* where);

template <class To, class From>
Tensor5<To> tensor_cast(const Tensor5<From>& t) {
  Tensor5<To> out;
  out.shape = t.shape;
  out.data.assign(t.data.begin(), t.data.end());
  return out;
}

enum class ParamInit { Kernel, Zero, One };

template <class T>
struct Param {
  std::string name;
  std::vector<int> shape;
  ParamInit init{ParamInit::Kernel};
  std::vector<T> value;
  std::vector<T> grad;

  std::size_t size() const { return value.size(); }
};

/// Parameters in registration order; addresses stay stable for the layers.
template <class T>
class ParamSet {
 public:
  Param<T>& add(const std::string& name, std::vector<int> shape, ParamInit init);
  Param<T>* find(const std::string& name);
  const Param<T>* find(const std::string& name) const;

  void zero_grad();
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return *params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return *params_[i]; }

 private:
  std::vector<std::unique_ptr<Param<T>>> params_;
};

}  // namespace vmatflux::nn
