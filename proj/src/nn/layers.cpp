#include "vmatflux/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace vmatflux::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

void require(bool cached, const char* layer) {
  if (!cached) throw std::logic_error(std::string(layer) + ": backward called without a cached forward");
}

void require_channels(const Shape5& s, int expected, const char* layer) {
  if (s[1] != expected) {
    throw ShapeError(std::string(layer) + ": expected " + std::to_string(expected) + " channels, got input " +
                     shape_string(s));
  }
}

int half_up(int n) { return (n + 1) / 2; }

Shape5 resampled(const Shape5& s, int channels, Resample mode) {
  switch (mode) {
    case Resample::Same:
      return {s[0], channels, s[2], s[3], s[4]};
    case Resample::Down:
      return {s[0], channels, half_up(s[2]), half_up(s[3]), half_up(s[4])};
    case Resample::Up:
      return {s[0], channels, 2 * s[2], 2 * s[3], 2 * s[4]};
  }
  return s;
}

// Copies full[2i, 2j, 2k] into the dense (d2, h2, w2) block `sub`.
template <class T>
void gather_even(const T* full, int H, int W, T* sub, int d2, int h2, int w2) {
  for (int i = 0; i < d2; ++i)
    for (int j = 0; j < h2; ++j) {
      const T* src = full + (static_cast<std::size_t>(2 * i) * H + 2 * j) * W;
      T* dst = sub + (static_cast<std::size_t>(i) * h2 + j) * w2;
      for (int k = 0; k < w2; ++k) dst[k] = src[2 * k];
    }
}

template <class T>
void scatter_even_add(T* full, int H, int W, const T* sub, int d2, int h2, int w2) {
  for (int i = 0; i < d2; ++i)
    for (int j = 0; j < h2; ++j) {
      T* dst = full + (static_cast<std::size_t>(2 * i) * H + 2 * j) * W;
      const T* src = sub + (static_cast<std::size_t>(i) * h2 + j) * w2;
      for (int k = 0; k < w2; ++k) dst[2 * k] += src[k];
    }
}

}  // namespace

// ---------------------------------------------------------------- PointwiseConv

template <class T>
PointwiseConv<T>::PointwiseConv(ParamSet<T>& params, const std::string& name, int cin, int cout, Resample mode,
                                ParamInit weight_init)
    : w_(&params.add(name + ".weight", {cout, cin}, weight_init)),
      b_(&params.add(name + ".bias", {cout}, ParamInit::Zero)),
      cin_(cin),
      cout_(cout),
      mode_(mode) {}

template <class T>
Tensor5<T> PointwiseConv<T>::forward(const Tensor5<T>& x) {
  require_channels(x.shape, cin_, "PointwiseConv");
  x_ = x;
  cached_ = true;
  Tensor5<T> out(resampled(x.shape, cout_, mode_));
  const ConstMatMap<T> w(w_->value.data(), cout_, cin_);
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(b_->value.data(), cout_);
  const auto in_vol = static_cast<Eigen::Index>(x.spatial());
  const auto out_vol = static_cast<Eigen::Index>(out.spatial());
  for (int b = 0; b < x.batch(); ++b) {
    MatMap<T> y(out.channel_ptr(b, 0), cout_, out_vol);
    switch (mode_) {
      case Resample::Same: {
        const ConstMatMap<T> xin(x.channel_ptr(b, 0), cin_, in_vol);
        y.noalias() = w * xin;
        y.colwise() += bias;
        break;
      }
      case Resample::Down: {
        RowMat<T> xs(cin_, out_vol);
        for (int c = 0; c < cin_; ++c) {
          gather_even(x.channel_ptr(b, c), x.height(), x.width(), xs.row(c).data(), out.depth(), out.height(),
                      out.width());
        }
        y.noalias() = w * xs;
        y.colwise() += bias;
        break;
      }
      case Resample::Up: {
        const ConstMatMap<T> xin(x.channel_ptr(b, 0), cin_, in_vol);
        RowMat<T> ys = w * xin;
        for (int c = 0; c < cout_; ++c) {
          T* dst = out.channel_ptr(b, c);
          std::fill(dst, dst + out_vol, b_->value[c]);
          scatter_even_add(dst, out.height(), out.width(), ys.row(c).data(), x.depth(), x.height(), x.width());
        }
        break;
      }
    }
  }
  return out;
}

template <class T>
Tensor5<T> PointwiseConv<T>::backward(const Tensor5<T>& g) {
  require(cached_, "PointwiseConv");
  Tensor5<T> gx(x_.shape);
  const ConstMatMap<T> w(w_->value.data(), cout_, cin_);
  MatMap<T> gw(w_->grad.data(), cout_, cin_);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(b_->grad.data(), cout_);
  const auto in_vol = static_cast<Eigen::Index>(x_.spatial());
  const auto out_vol = static_cast<Eigen::Index>(g.spatial());
  for (int b = 0; b < x_.batch(); ++b) {
    const ConstMatMap<T> gy(g.channel_ptr(b, 0), cout_, out_vol);
    gb += gy.rowwise().sum();
    switch (mode_) {
      case Resample::Same: {
        const ConstMatMap<T> xin(x_.channel_ptr(b, 0), cin_, in_vol);
        gw.noalias() += gy * xin.transpose();
        MatMap<T>(gx.channel_ptr(b, 0), cin_, in_vol).noalias() = w.transpose() * gy;
        break;
      }
      case Resample::Down: {
        RowMat<T> xs(cin_, out_vol);
        for (int c = 0; c < cin_; ++c) {
          gather_even(x_.channel_ptr(b, c), x_.height(), x_.width(), xs.row(c).data(), g.depth(), g.height(),
                      g.width());
        }
        gw.noalias() += gy * xs.transpose();
        RowMat<T> gxs = w.transpose() * gy;
        for (int c = 0; c < cin_; ++c) {
          scatter_even_add(gx.channel_ptr(b, c), x_.height(), x_.width(), gxs.row(c).data(), g.depth(), g.height(),
                           g.width());
        }
        break;
      }
      case Resample::Up: {
        RowMat<T> gys(cout_, in_vol);
        for (int c = 0; c < cout_; ++c) {
          gather_even(g.channel_ptr(b, c), g.height(), g.width(), gys.row(c).data(), x_.depth(), x_.height(),
                      x_.width());
        }
        const ConstMatMap<T> xin(x_.channel_ptr(b, 0), cin_, in_vol);
        gw.noalias() += gys * xin.transpose();
        MatMap<T>(gx.channel_ptr(b, 0), cin_, in_vol).noalias() = w.transpose() * gys;
        break;
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------- DepthwiseConv3

template <class T>
DepthwiseConv3<T>::DepthwiseConv3(ParamSet<T>& params, const std::string& name, int channels, Resample mode,
                                  bool circular_depth)
    : w_(&params.add(name + ".weight", {channels, 3, 3, 3}, ParamInit::Kernel)),
      b_(&params.add(name + ".bias", {channels}, ParamInit::Zero)),
      channels_(channels),
      mode_(mode),
      circular_(circular_depth) {
  if (circular_ && mode_ != Resample::Same) {
    throw std::invalid_argument("circular depth padding is only supported for stride-1 depthwise convolution");
  }
}

template <class T>
Tensor5<T> DepthwiseConv3<T>::forward(const Tensor5<T>& x) {
  require_channels(x.shape, channels_, "DepthwiseConv3");
  x_ = x;
  cached_ = true;
  Tensor5<T> out(resampled(x.shape, channels_, mode_));
  const int D = x.depth(), H = x.height(), W = x.width();
  const int OD = out.depth(), OH = out.height(), OW = out.width();
  for (int b = 0; b < x.batch(); ++b) {
    for (int c = 0; c < channels_; ++c) {
      const T* in = x.channel_ptr(b, c);
      T* o = out.channel_ptr(b, c);
      const T* wk = w_->value.data() + static_cast<std::size_t>(c) * 27;
      std::fill(o, o + out.spatial(), b_->value[c]);
      if (mode_ == Resample::Same) {
        for (int od = 0; od < D; ++od) {
          for (int kd = 0; kd < 3; ++kd) {
            int id = od + kd - 1;
            if (circular_) {
              id = ((id % D) + D) % D;
            } else if (id < 0 || id >= D) {
              continue;
            }
            for (int oh = 0; oh < H; ++oh) {
              T* orow = o + (static_cast<std::size_t>(od) * H + oh) * W;
              for (int kh = 0; kh < 3; ++kh) {
                const int ih = oh + kh - 1;
                if (ih < 0 || ih >= H) continue;
                const T* irow = in + (static_cast<std::size_t>(id) * H + ih) * W;
                for (int kw = 0; kw < 3; ++kw) {
                  const T wv = wk[(kd * 3 + kh) * 3 + kw];
                  const int off = kw - 1;
                  const int lo = std::max(0, -off), hi = std::min(W, W - off);
                  for (int ow = lo; ow < hi; ++ow) orow[ow] += wv * irow[ow + off];
                }
              }
            }
          }
        }
      } else if (mode_ == Resample::Down) {
        for (int od = 0; od < OD; ++od)
          for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow) {
              T acc = 0;
              for (int kd = 0; kd < 3; ++kd) {
                const int id = 2 * od + kd - 1;
                if (id < 0 || id >= D) continue;
                for (int kh = 0; kh < 3; ++kh) {
                  const int ih = 2 * oh + kh - 1;
                  if (ih < 0 || ih >= H) continue;
                  for (int kw = 0; kw < 3; ++kw) {
                    const int iw = 2 * ow + kw - 1;
                    if (iw < 0 || iw >= W) continue;
                    acc += wk[(kd * 3 + kh) * 3 + kw] * in[(static_cast<std::size_t>(id) * H + ih) * W + iw];
                  }
                }
              }
              o[(static_cast<std::size_t>(od) * OH + oh) * OW + ow] += acc;
            }
      } else {
        for (int id = 0; id < D; ++id)
          for (int ih = 0; ih < H; ++ih)
            for (int iw = 0; iw < W; ++iw) {
              const T v = in[(static_cast<std::size_t>(id) * H + ih) * W + iw];
              for (int kd = 0; kd < 3; ++kd) {
                const int od = 2 * id + kd - 1;
                if (od < 0 || od >= OD) continue;
                for (int kh = 0; kh < 3; ++kh) {
                  const int oh = 2 * ih + kh - 1;
                  if (oh < 0 || oh >= OH) continue;
                  for (int kw = 0; kw < 3; ++kw) {
                    const int ow = 2 * iw + kw - 1;
                    if (ow < 0 || ow >= OW) continue;
                    o[(static_cast<std::size_t>(od) * OH + oh) * OW + ow] += wk[(kd * 3 + kh) * 3 + kw] * v;
                  }
                }
              }
            }
      }
    }
  }
  return out;
}

template <class T>
Tensor5<T> DepthwiseConv3<T>::backward(const Tensor5<T>& g) {
  require(cached_, "DepthwiseConv3");
  Tensor5<T> gx(x_.shape);
  const int D = x_.depth(), H = x_.height(), W = x_.width();
  const int OD = g.depth(), OH = g.height(), OW = g.width();
  for (int b = 0; b < x_.batch(); ++b) {
    for (int c = 0; c < channels_; ++c) {
      const T* in = x_.channel_ptr(b, c);
      const T* go = g.channel_ptr(b, c);
      T* gi = gx.channel_ptr(b, c);
      const T* wk = w_->value.data() + static_cast<std::size_t>(c) * 27;
      T* gwk = w_->grad.data() + static_cast<std::size_t>(c) * 27;
      T bias_acc = 0;
      for (std::size_t i = 0; i < g.spatial(); ++i) bias_acc += go[i];
      b_->grad[c] += bias_acc;
      if (mode_ == Resample::Same) {
        for (int od = 0; od < D; ++od) {
          for (int kd = 0; kd < 3; ++kd) {
            int id = od + kd - 1;
            if (circular_) {
              id = ((id % D) + D) % D;
            } else if (id < 0 || id >= D) {
              continue;
            }
            for (int oh = 0; oh < H; ++oh) {
              const T* grow = go + (static_cast<std::size_t>(od) * H + oh) * W;
              for (int kh = 0; kh < 3; ++kh) {
                const int ih = oh + kh - 1;
                if (ih < 0 || ih >= H) continue;
                const T* irow = in + (static_cast<std::size_t>(id) * H + ih) * W;
                T* girow = gi + (static_cast<std::size_t>(id) * H + ih) * W;
                for (int kw = 0; kw < 3; ++kw) {
                  const int k = (kd * 3 + kh) * 3 + kw;
                  const T wv = wk[k];
                  const int off = kw - 1;
                  const int lo = std::max(0, -off), hi = std::min(W, W - off);
                  T acc = 0;
                  for (int ow = lo; ow < hi; ++ow) {
                    acc += grow[ow] * irow[ow + off];
                    girow[ow + off] += wv * grow[ow];
                  }
                  gwk[k] += acc;
                }
              }
            }
          }
        }
      } else if (mode_ == Resample::Down) {
        for (int od = 0; od < OD; ++od)
          for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow) {
              const T gv = go[(static_cast<std::size_t>(od) * OH + oh) * OW + ow];
              for (int kd = 0; kd < 3; ++kd) {
                const int id = 2 * od + kd - 1;
                if (id < 0 || id >= D) continue;
                for (int kh = 0; kh < 3; ++kh) {
                  const int ih = 2 * oh + kh - 1;
                  if (ih < 0 || ih >= H) continue;
                  for (int kw = 0; kw < 3; ++kw) {
                    const int iw = 2 * ow + kw - 1;
                    if (iw < 0 || iw >= W) continue;
                    const std::size_t ii = (static_cast<std::size_t>(id) * H + ih) * W + iw;
                    const int k = (kd * 3 + kh) * 3 + kw;
                    gwk[k] += gv * in[ii];
                    gi[ii] += wk[k] * gv;
                  }
                }
              }
            }
      } else {
        for (int id = 0; id < D; ++id)
          for (int ih = 0; ih < H; ++ih)
            for (int iw = 0; iw < W; ++iw) {
              const std::size_t ii = (static_cast<std::size_t>(id) * H + ih) * W + iw;
              const T v = in[ii];
              T acc = 0;
              for (int kd = 0; kd < 3; ++kd) {
                const int od = 2 * id + kd - 1;
                if (od < 0 || od >= OD) continue;
                for (int kh = 0; kh < 3; ++kh) {
                  const int oh = 2 * ih + kh - 1;
                  if (oh < 0 || oh >= OH) continue;
                  for (int kw = 0; kw < 3; ++kw) {
                    const int ow = 2 * iw + kw - 1;
                    if (ow < 0 || ow >= OW) continue;
                    const int k = (kd * 3 + kh) * 3 + kw;
                    const T gv = go[(static_cast<std::size_t>(od) * OH + oh) * OW + ow];
                    gwk[k] += gv * v;
                    acc += wk[k] * gv;
                  }
                }
              }
              gi[ii] += acc;
            }
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------- ChannelNorm

template <class T>
ChannelNorm<T>::ChannelNorm(ParamSet<T>& params, const std::string& name, int channels, bool enabled)
    : gamma_(&params.add(name + ".gamma", {channels}, ParamInit::One)),
      beta_(&params.add(name + ".beta", {channels}, ParamInit::Zero)),
      channels_(channels),
      enabled_(enabled) {}

template <class T>
Tensor5<T> ChannelNorm<T>::forward(const Tensor5<T>& x) {
  require_channels(x.shape, channels_, "ChannelNorm");
  cached_ = true;
  if (!enabled_) return x;
  Tensor5<T> y(x.shape);
  xhat_ = Tensor5<T>(x.shape);
  rstd_.assign(static_cast<std::size_t>(x.batch()) * channels_, T(0));
  const std::size_t n = x.spatial();
  for (int b = 0; b < x.batch(); ++b) {
    for (int c = 0; c < channels_; ++c) {
      const T* in = x.channel_ptr(b, c);
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += in[i];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = in[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(n);
      const T rstd = static_cast<T>(1.0 / std::sqrt(var + kEps));
      rstd_[static_cast<std::size_t>(b) * channels_ + c] = rstd;
      T* xh = xhat_.channel_ptr(b, c);
      T* out = y.channel_ptr(b, c);
      const T m = static_cast<T>(mean);
      const T ga = gamma_->value[c], be = beta_->value[c];
      for (std::size_t i = 0; i < n; ++i) {
        xh[i] = (in[i] - m) * rstd;
        out[i] = ga * xh[i] + be;
      }
    }
  }
  return y;
}

template <class T>
Tensor5<T> ChannelNorm<T>::backward(const Tensor5<T>& g) {
  require(cached_, "ChannelNorm");
  if (!enabled_) return g;
  Tensor5<T> gx(g.shape);
  const std::size_t n = g.spatial();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int b = 0; b < g.batch(); ++b) {
    for (int c = 0; c < channels_; ++c) {
      const T* go = g.channel_ptr(b, c);
      const T* xh = xhat_.channel_ptr(b, c);
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sum_g += go[i];
        sum_gx += static_cast<double>(go[i]) * xh[i];
      }
      gamma_->grad[c] += static_cast<T>(sum_gx);
      beta_->grad[c] += static_cast<T>(sum_g);
      const T scale = gamma_->value[c] * rstd_[static_cast<std::size_t>(b) * channels_ + c];
      const T mg = static_cast<T>(sum_g * inv_n), mgx = static_cast<T>(sum_gx * inv_n);
      T* gi = gx.channel_ptr(b, c);
      for (std::size_t i = 0; i < n; ++i) gi[i] = scale * (go[i] - mg - xh[i] * mgx);
    }
  }
  return gx;
}

// ---------------------------------------------------------------- activations

template <class T>
Tensor5<T> Gelu<T>::forward(const Tensor5<T>& x) {
  Tensor5<T> y(x.shape);
  dydx_ = Tensor5<T>(x.shape);
  constexpr T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  constexpr T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const T v = x.data[i];
    const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
    y.data[i] = v * cdf;
    dydx_.data[i] = cdf + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
  }
  cached_ = true;
  return y;
}

template <class T>
Tensor5<T> Gelu<T>::backward(const Tensor5<T>& g) {
  require(cached_, "Gelu");
  Tensor5<T> gx(g.shape);
  for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] = g.data[i] * dydx_.data[i];
  return gx;
}

template <class T>
Tensor5<T> Relu<T>::forward(const Tensor5<T>& x) {
  Tensor5<T> y(x.shape);
  active_.assign(x.data.size(), 0);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    if (x.data[i] > T(0)) {
      y.data[i] = x.data[i];
      active_[i] = 1;
    }
  }
  shape_ = x.shape;
  cached_ = true;
  return y;
}

template <class T>
Tensor5<T> Relu<T>::backward(const Tensor5<T>& g) {
  require(cached_, "Relu");
  Tensor5<T> gx(shape_);
  for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] = active_[i] ? g.data[i] : T(0);
  return gx;
}

// ---------------------------------------------------------------- Conv3d

template <class T>
Conv3d<T>::Conv3d(ParamSet<T>& params, const std::string& name, int cin, int cout, std::array<int, 3> kernel)
    : w_(&params.add(name + ".weight", {cout, cin, kernel[0], kernel[1], kernel[2]}, ParamInit::Kernel)),
      b_(&params.add(name + ".bias", {cout}, ParamInit::Zero)),
      cin_(cin),
      cout_(cout),
      k_(kernel) {
  for (int k : kernel) {
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("Conv3d kernel extents must be odd");
  }
}

namespace {

// Column block for output slice od: rows (ci, a, b, c), columns (oh, ow).
template <class T>
void im2col_slice(const Tensor5<T>& x, int batch, int od, const std::array<int, 3>& k, RowMat<T>& col) {
  const int D = x.depth(), H = x.height(), W = x.width();
  const int pd = k[0] / 2, ph = k[1] / 2, pw = k[2] / 2;
  col.setZero();
  Eigen::Index row = 0;
  for (int ci = 0; ci < x.channels(); ++ci) {
    const T* in = x.channel_ptr(batch, ci);
    for (int a = 0; a < k[0]; ++a) {
      const int id = od + a - pd;
      for (int bb = 0; bb < k[1]; ++bb) {
        for (int cc = 0; cc < k[2]; ++cc, ++row) {
          if (id < 0 || id >= D) continue;
          T* dst = col.row(row).data();
          for (int oh = 0; oh < H; ++oh) {
            const int ih = oh + bb - ph;
            if (ih < 0 || ih >= H) continue;
            const T* src = in + (static_cast<std::size_t>(id) * H + ih) * W;
            const int off = cc - pw;
            const int lo = std::max(0, -off), hi = std::min(W, W - off);
            for (int ow = lo; ow < hi; ++ow) dst[oh * W + ow] = src[ow + off];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_slice_add(const RowMat<T>& col, int batch, int od, const std::array<int, 3>& k, Tensor5<T>& gx) {
  const int D = gx.depth(), H = gx.height(), W = gx.width();
  const int pd = k[0] / 2, ph = k[1] / 2, pw = k[2] / 2;
  Eigen::Index row = 0;
  for (int ci = 0; ci < gx.channels(); ++ci) {
    T* gi = gx.channel_ptr(batch, ci);
    for (int a = 0; a < k[0]; ++a) {
      const int id = od + a - pd;
      for (int bb = 0; bb < k[1]; ++bb) {
        for (int cc = 0; cc < k[2]; ++cc, ++row) {
          if (id < 0 || id >= D) continue;
          const T* src = col.row(row).data();
          for (int oh = 0; oh < H; ++oh) {
            const int ih = oh + bb - ph;
            if (ih < 0 || ih >= H) continue;
            T* dst = gi + (static_cast<std::size_t>(id) * H + ih) * W;
            const int off = cc - pw;
            const int lo = std::max(0, -off), hi = std::min(W, W - off);
            for (int ow = lo; ow < hi; ++ow) dst[ow + off] += src[oh * W + ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
Tensor5<T> Conv3d<T>::forward(const Tensor5<T>& x) {
  require_channels(x.shape, cin_, "Conv3d");
  x_ = x;
  cached_ = true;
  Tensor5<T> out(resampled(x.shape, cout_, Resample::Same));
  const int kvol = k_[0] * k_[1] * k_[2];
  const auto plane = static_cast<Eigen::Index>(x.height()) * x.width();
  const ConstMatMap<T> w(w_->value.data(), cout_, static_cast<Eigen::Index>(cin_) * kvol);
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(b_->value.data(), cout_);
  RowMat<T> col(static_cast<Eigen::Index>(cin_) * kvol, plane);
  for (int b = 0; b < x.batch(); ++b) {
    for (int od = 0; od < x.depth(); ++od) {
      im2col_slice(x, b, od, k_, col);
      StridedMap<T> y(out.channel_ptr(b, 0) + od * plane, cout_, plane,
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(out.spatial())));
      y.noalias() = w * col;
      y.colwise() += bias;
    }
  }
  return out;
}

template <class T>
Tensor5<T> Conv3d<T>::backward(const Tensor5<T>& g) {
  require(cached_, "Conv3d");
  Tensor5<T> gx(x_.shape);
  const int kvol = k_[0] * k_[1] * k_[2];
  const auto plane = static_cast<Eigen::Index>(x_.height()) * x_.width();
  const ConstMatMap<T> w(w_->value.data(), cout_, static_cast<Eigen::Index>(cin_) * kvol);
  MatMap<T> gw(w_->grad.data(), cout_, static_cast<Eigen::Index>(cin_) * kvol);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(b_->grad.data(), cout_);
  RowMat<T> col(static_cast<Eigen::Index>(cin_) * kvol, plane);
  RowMat<T> gcol(static_cast<Eigen::Index>(cin_) * kvol, plane);
  for (int b = 0; b < x_.batch(); ++b) {
    for (int od = 0; od < x_.depth(); ++od) {
      im2col_slice(x_, b, od, k_, col);
      const Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>> gy(
          g.channel_ptr(b, 0) + od * plane, cout_, plane, Eigen::OuterStride<>(static_cast<Eigen::Index>(g.spatial())));
      gw.noalias() += gy * col.transpose();
      gb += gy.rowwise().sum();
      gcol.noalias() = w.transpose() * gy;
      col2im_slice_add(gcol, b, od, k_, gx);
    }
  }
  return gx;
}

// ---------------------------------------------------------------- UpConv

template <class T>
UpConv<T>::UpConv(ParamSet<T>& params, const std::string& name, int cin, int cout, int kd)
    : w_(&params.add(name + ".weight", {cout, cin, kd, 2, 2}, ParamInit::Kernel)),
      b_(&params.add(name + ".bias", {cout}, ParamInit::Zero)),
      cin_(cin),
      cout_(cout),
      kd_(kd) {
  if (kd != 1 && kd != 2) throw std::invalid_argument("UpConv depth kernel must be 1 or 2");
}

template <class T>
Tensor5<T> UpConv<T>::forward(const Tensor5<T>& x) {
  require_channels(x.shape, cin_, "UpConv");
  x_ = x;
  cached_ = true;
  const int D = x.depth(), H = x.height(), W = x.width();
  Tensor5<T> out(Shape5{x.batch(), cout_, D * kd_, 2 * H, 2 * W});
  const int kvol = kd_ * 4;
  const auto vol = static_cast<Eigen::Index>(x.spatial());
  RowMat<T> wk(cout_, cin_);
  for (int b = 0; b < x.batch(); ++b) {
    const ConstMatMap<T> xin(x.channel_ptr(b, 0), cin_, vol);
    for (int k = 0; k < kvol; ++k) {
      for (int co = 0; co < cout_; ++co)
        for (int ci = 0; ci < cin_; ++ci) wk(co, ci) = w_->value[(static_cast<std::size_t>(co) * cin_ + ci) * kvol + k];
      const RowMat<T> yk = wk * xin;
      const int a = k / 4, bb = (k / 2) % 2, cc = k % 2;
      for (int co = 0; co < cout_; ++co) {
        T* o = out.channel_ptr(b, co);
        const T* src = yk.row(co).data();
        const T bias = b_->value[co];
        for (int d = 0; d < D; ++d)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
              o[((static_cast<std::size_t>(d) * kd_ + a) * 2 * H + 2 * h + bb) * 2 * W + 2 * w + cc] =
                  src[(static_cast<std::size_t>(d) * H + h) * W + w] + bias;
            }
      }
    }
  }
  return out;
}

template <class T>
Tensor5<T> UpConv<T>::backward(const Tensor5<T>& g) {
  require(cached_, "UpConv");
  Tensor5<T> gx(x_.shape);
  const int D = x_.depth(), H = x_.height(), W = x_.width();
  const int kvol = kd_ * 4;
  const auto vol = static_cast<Eigen::Index>(x_.spatial());
  RowMat<T> wk(cout_, cin_), gk(cout_, vol);
  for (int b = 0; b < x_.batch(); ++b) {
    const ConstMatMap<T> xin(x_.channel_ptr(b, 0), cin_, vol);
    MatMap<T> gxin(gx.channel_ptr(b, 0), cin_, vol);
    for (int co = 0; co < cout_; ++co) {
      const T* go = g.channel_ptr(b, co);
      T acc = 0;
      for (std::size_t i = 0; i < g.spatial(); ++i) acc += go[i];
      b_->grad[co] += acc;
    }
    for (int k = 0; k < kvol; ++k) {
      const int a = k / 4, bb = (k / 2) % 2, cc = k % 2;
      for (int co = 0; co < cout_; ++co) {
        const T* go = g.channel_ptr(b, co);
        T* dst = gk.row(co).data();
        for (int d = 0; d < D; ++d)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
              dst[(static_cast<std::size_t>(d) * H + h) * W + w] =
                  go[((static_cast<std::size_t>(d) * kd_ + a) * 2 * H + 2 * h + bb) * 2 * W + 2 * w + cc];
            }
        for (int ci = 0; ci < cin_; ++ci) wk(co, ci) = w_->value[(static_cast<std::size_t>(co) * cin_ + ci) * kvol + k];
      }
      const RowMat<T> gwk = gk * xin.transpose();
      for (int co = 0; co < cout_; ++co)
        for (int ci = 0; ci < cin_; ++ci) w_->grad[(static_cast<std::size_t>(co) * cin_ + ci) * kvol + k] += gwk(co, ci);
      gxin.noalias() += wk.transpose() * gk;
    }
  }
  return gx;
}

// ---------------------------------------------------------------- MaxPool

template <class T>
Tensor5<T> MaxPool<T>::forward(const Tensor5<T>& x) {
  const int D = x.depth(), H = x.height(), W = x.width();
  if (D % kd_ != 0 || H % 2 != 0 || W % 2 != 0) {
    throw ShapeError("MaxPool: input " + shape_string(x.shape) + " not divisible by the pooling window");
  }
  Tensor5<T> out(Shape5{x.batch(), x.channels(), D / kd_, H / 2, W / 2});
  argmax_.assign(out.size(), 0);
  in_shape_ = x.shape;
  std::size_t o = 0;
  for (int b = 0; b < x.batch(); ++b)
    for (int c = 0; c < x.channels(); ++c)
      for (int d = 0; d < out.depth(); ++d)
        for (int h = 0; h < out.height(); ++h)
          for (int w = 0; w < out.width(); ++w, ++o) {
            std::size_t best = x.offset(b, c, d * kd_, 2 * h, 2 * w);
            for (int a = 0; a < kd_; ++a)
              for (int bb = 0; bb < 2; ++bb)
                for (int cc = 0; cc < 2; ++cc) {
                  const std::size_t idx = x.offset(b, c, d * kd_ + a, 2 * h + bb, 2 * w + cc);
                  if (x.data[idx] > x.data[best]) best = idx;
                }
            out.data[o] = x.data[best];
            argmax_[o] = best;
          }
  cached_ = true;
  return out;
}

template <class T>
Tensor5<T> MaxPool<T>::backward(const Tensor5<T>& g) {
  require(cached_, "MaxPool");
  Tensor5<T> gx(in_shape_);
  for (std::size_t o = 0; o < g.data.size(); ++o) gx.data[argmax_[o]] += g.data[o];
  return gx;
}

template <class T>
Tensor5<T> concat_channels(const Tensor5<T>& a, const Tensor5<T>& b) {
  if (a.batch() != b.batch() || a.depth() != b.depth() || a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("concat: incompatible " + shape_string(a.shape) + " and " + shape_string(b.shape));
  }
  Tensor5<T> out(Shape5{a.batch(), a.channels() + b.channels(), a.depth(), a.height(), a.width()});
  const std::size_t n = a.spatial();
  for (int i = 0; i < a.batch(); ++i) {
    std::copy(a.channel_ptr(i, 0), a.channel_ptr(i, 0) + n * a.channels(), out.channel_ptr(i, 0));
    std::copy(b.channel_ptr(i, 0), b.channel_ptr(i, 0) + n * b.channels(), out.channel_ptr(i, a.channels()));
  }
  return out;
}

template <class T>
std::pair<Tensor5<T>, Tensor5<T>> split_channels(const Tensor5<T>& g, int ca) {
  const int cb = g.channels() - ca;
  Tensor5<T> a(Shape5{g.batch(), ca, g.depth(), g.height(), g.width()});
  Tensor5<T> b(Shape5{g.batch(), cb, g.depth(), g.height(), g.width()});
  const std::size_t n = g.spatial();
  for (int i = 0; i < g.batch(); ++i) {
    std::copy(g.channel_ptr(i, 0), g.channel_ptr(i, 0) + n * ca, a.channel_ptr(i, 0));
    std::copy(g.channel_ptr(i, ca), g.channel_ptr(i, ca) + n * cb, b.channel_ptr(i, 0));
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------- ConvNextBlock

template <class T>
ConvNextBlock<T>::ConvNextBlock(ParamSet<T>& params, const std::string& name, int cin, int cout, Resample mode,
                                const BlockOptions& options)
    : dw_(params, name + ".dw", cin, mode, options.circular_depth && mode == Resample::Same),
      norm_(params, name + ".norm", cin, options.use_norm),
      expand_(params, name + ".expand", cin, options.expansion * cin),
      compress_(params, name + ".compress", options.expansion * cin, cout, Resample::Same, ParamInit::Zero) {
  if (mode != Resample::Same || cin != cout) residual_.emplace(params, name + ".residual", cin, cout, mode);
}

template <class T>
Tensor5<T> ConvNextBlock<T>::forward(const Tensor5<T>& x) {
  Tensor5<T> h = compress_.forward(act_.forward(expand_.forward(norm_.forward(dw_.forward(x)))));
  add_inplace(h, residual_ ? residual_->forward(x) : x);
  return h;
}

template <class T>
Tensor5<T> ConvNextBlock<T>::backward(const Tensor5<T>& g) {
  Tensor5<T> gx = dw_.backward(norm_.backward(expand_.backward(act_.backward(compress_.backward(g)))));
  add_inplace(gx, residual_ ? residual_->backward(g) : g);
  return gx;
}

#define VMATFLUX_INSTANTIATE_LAYERS(T)                                                      \
  template class PointwiseConv<T>;                                                          \
  template class DepthwiseConv3<T>;                                                         \
  template class ChannelNorm<T>;                                                            \
  template class Gelu<T>;                                                                   \
  template class Relu<T>;                                                                   \
  template class Conv3d<T>;                                                                 \
  template class UpConv<T>;                                                                 \
  template class MaxPool<T>;                                                                \
  template class ConvNextBlock<T>;                                                          \
  template Tensor5<T> concat_channels(const Tensor5<T>&, const Tensor5<T>&);                \
  template std::pair<Tensor5<T>, Tensor5<T>> split_channels(const Tensor5<T>&, int);

VMATFLUX_INSTANTIATE_LAYERS(float)
VMATFLUX_INSTANTIATE_LAYERS(double)

#undef VMATFLUX_INSTANTIATE_LAYERS

}  // namespace vmatflux::nn
