#pragma once

// L1 + L2 regression loss and the Adam optimizer.

#include <cstdint>
#include <vector>

#include "vmatflux/nn/tensor.hpp"

namespace vmatflux::nn {

template <class T>
struct LossResult {
  double loss{0.0};
  Tensor5<T> grad;
};

/// alpha * mean|p - t| + beta * mean (p - t)^2 and its gradient w.r.t. p.
/// The L1 subgradient at p == t is taken as 0.
template <class T>
LossResult<T> loss_l1l2(const Tensor5<T>& pred, const Tensor5<T>& target, double alpha = 1.0, double beta = 1.0);

struct AdamOptions {
  double lr{1e-4};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
};

template <class T>
class Adam {
 public:
  Adam(ParamSet<T>& params, const AdamOptions& options);

  /// One bias-corrected update from the accumulated gradients.
  void step();
  std::int64_t steps_taken() const { return t_; }

 private:
  ParamSet<T>& params_;
  AdamOptions opt_;
  std::int64_t t_{0};
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace vmatflux::nn
