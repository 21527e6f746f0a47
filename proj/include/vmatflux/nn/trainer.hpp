#pragma once

// Training and inference harness around a Network<float>.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vmatflux/core_types.hpp"
#include "vmatflux/nn/network.hpp"
#include "vmatflux/nn/optim.hpp"

namespace vmatflux::nn {

/// One (BEV dose, fluence) pair as (1, 1, n_cp, nv, nu) tensors, each
/// divided by its own maximum.
struct TrainSample {
  std::string id;
  PlaneGeometry geometry{};
  Tensor5<float> input;
  Tensor5<float> target;
  double input_max{1.0};
  double target_max{1.0};
};

/// Normalized tensor of a stack; `max_out` receives the divisor (1 for an all-zero stack).
Tensor5<float> stack_to_tensor(const PlaneStack& stack, double* max_out = nullptr);
PlaneStack tensor_to_stack(const Tensor5<float>& t, PlaneKind kind, const PlaneGeometry& geom, double scale);

TrainSample make_sample(const PlaneStack& bev, const PlaneStack& fluence, std::string id = {});

/// Loads plan, dose and fluence for each id and projects the dose into BEV.
std::vector<TrainSample> load_samples(const std::filesystem::path& dataset_dir, const std::vector<std::string>& ids,
                                      double step_mm = 1.0);

/// Gantry depth the network sees for an n_cp stack.
int network_depth(const NetConfig& config, int n_cp);

struct StepRecord {
  int step{0};
  double loss{0.0};
  double psnr_db{0.0};
};

struct TrainOptions {
  int steps{2000};
  AdamOptions adam{};
  double alpha{1.0};
  double beta{1.0};
  std::uint64_t seed{0};
  /// Called after every step; may be empty.
  std::function<void(const StepRecord&, const Network<float>&)> on_step;
};

struct TrainResult {
  std::unique_ptr<Network<float>> net;
  std::vector<StepRecord> curve;
  /// Mean over the training pairs of target_max / input_max; multiplies the
  /// normalized prediction times the input max at inference.
  double fluence_scale_ratio{1.0};
};

/// Adam over single-pair batches visited in a seeded per-epoch shuffle. The
/// network is initialized from options.seed. PSNR in each record is that of
/// the step's prediction against its normalized target. Throws
/// std::runtime_error naming the step on a non-finite loss.
TrainResult train(const std::vector<TrainSample>& data, const NetConfig& config, const TrainOptions& options);

/// Same, continuing from an existing network.
TrainResult train(const std::vector<TrainSample>& data, std::unique_ptr<Network<float>> net,
                  const TrainOptions& options);

/// Normalized prediction for one normalized input tensor (pad, forward, crop).
Tensor5<float> infer(Network<float>& net, const Tensor5<float>& input);

/// BEV stack -> fluence stack: normalize, pad, forward, crop, denormalize
/// by input_max * fluence_scale_ratio, clamp negatives to zero. Runs on a
/// private clone, so concurrent calls on one network are safe.
PlaneStack predict_from_bev(const Network<float>& net, const PlaneStack& bev, double fluence_scale_ratio);

PlaneStack predict(const VmatPlan& plan, const Grid3& dose, const Network<float>& net, double fluence_scale_ratio,
                   const PlaneGeometry& geometry, double step_mm = 1.0);

}  // namespace vmatflux::nn
