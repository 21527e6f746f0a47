#include "vmatflux/nn/optim.hpp"

#include <cmath>

namespace vmatflux::nn {

template <class T>
LossResult<T> loss_l1l2(const Tensor5<T>& pred, const Tensor5<T>& target, double alpha, double beta) {
  if (pred.shape != target.shape) {
    throw ShapeError("loss: prediction " + shape_string(pred.shape) + " vs target " + shape_string(target.shape));
  }
  LossResult<T> r;
  r.grad = Tensor5<T>(pred.shape);
  const double n = static_cast<double>(pred.size());
  double l1 = 0.0, l2 = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
    l1 += std::abs(d);
    l2 += d * d;
    const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    r.grad.data[i] = static_cast<T>((alpha * sign + 2.0 * beta * d) / n);
  }
  r.loss = alpha * l1 / n + beta * l2 / n;
  return r;
}

template <class T>
Adam<T>::Adam(ParamSet<T>& params, const AdamOptions& options) : params_(params), opt_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

template <class T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Param<T>& p = params_[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
      const double update = opt_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
      p.value[i] = static_cast<T>(p.value[i] - update);
    }
  }
}

template LossResult<float> loss_l1l2(const Tensor5<float>&, const Tensor5<float>&, double, double);
template LossResult<double> loss_l1l2(const Tensor5<double>&, const Tensor5<double>&, double, double);
template class Adam<float>;
template class Adam<double>;

}  // namespace vmatflux::nn
