#pragma once

// Encoder-decoder networks over (batch, 1, gantry, v, u) stacks.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include <json.hpp>

#include "vmatflux/nn/tensor.hpp"

namespace vmatflux::nn {

enum class Arch { MedNeXt3D, UNet3D, UNet2D };

std::string_view to_string(Arch arch);
/// Accepts "mednext", "mednext3d", "unet3d", "unet2d" (case-insensitive).
Arch arch_from_string(std::string_view name);

struct NetConfig {
  Arch arch{Arch::MedNeXt3D};
  int base_channels{8};
  int n_scales{5};
  int blocks_per_stage{1};
  int expansion{4};
  std::array<int, 3> kernel{3, 3, 3};
  int pad_multiple{16};
  // UNet2D stacks control points as channels, so it needs the CP count.
  int in_channels{1};
  bool use_norm{true};
  bool circular_depth{false};

  bool operator==(const NetConfig&) const = default;
};

void validate_config(const NetConfig& config);
nlohmann::json config_to_json(const NetConfig& config);
NetConfig config_from_json(const nlohmann::json& doc);

template <class T>
class Network {
 public:
  virtual ~Network() = default;

  /// x has shape (b, 1, D, H, W); the result has the same shape.
  virtual Tensor5<T> forward(const Tensor5<T>& x) = 0;
  /// Gradient w.r.t. the last forward's input; accumulates parameter grads.
  virtual Tensor5<T> backward(const Tensor5<T>& g) = 0;

  const NetConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  std::uint64_t init_seed() const { return seed_; }

  /// Required divisor of the gantry depth (1 when depth is a channel axis).
  int depth_multiple() const;
  /// Required divisor of H and W.
  int spatial_multiple() const;

  /// Fresh network with identical configuration and parameter values.
  std::unique_ptr<Network<T>> clone() const;

 protected:
  Network(const NetConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {}
  void check_input(const Tensor5<T>& x) const;

  NetConfig config_;
  std::uint64_t seed_;
  ParamSet<T> params_;
};

/// Builds the network and initializes every parameter from `seed`:
/// kernels truncated-normal (std 0.02, cut at 2 std), biases and block
/// compression layers zero, norm scales one.
template <class T>
std::unique_ptr<Network<T>> build_network(const NetConfig& config, std::uint64_t seed);

template <class T>
void init_params(ParamSet<T>& params, std::uint64_t seed);

}  // namespace vmatflux::nn
