#pragma once

// Checkpoint directory: manifest.json plus one VFT1 file per parameter.

#include <cstdint>
#include <filesystem>
#include <memory>

#include "vmatflux/core_types.hpp"
#include "vmatflux/nn/network.hpp"

namespace vmatflux::nn {

struct CheckpointMeta {
  int step{0};
  double loss{0.0};
  std::uint64_t seed{0};
  double fluence_scale_ratio{1.0};
  PlaneGeometry geometry{};
};

void save_checkpoint(const std::filesystem::path& dir, const Network<float>& net, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  std::unique_ptr<Network<float>> net;
  CheckpointMeta meta;
};

/// ShapeError when a stored tensor disagrees with the manifest config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace vmatflux::nn
