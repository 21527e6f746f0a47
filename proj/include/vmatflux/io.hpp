#pragma once

// Plan JSON and the VFT1 tensor container.
//
// VFT1 layout: "VFT1" magic, u32 LE ndim, ndim x u64 LE dims, then the
// row-major payload as 32-bit LE floats. Grids and plane stacks carry a JSON
// sidecar "<stem>.geom.json" next to the tensor file.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vmatflux/core_types.hpp"

namespace vmatflux {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json plan_to_json(const VmatPlan& plan);
/// Validates every invariant; PlanValidationError on violations, IoError on
/// structurally malformed documents.
VmatPlan plan_from_json(const nlohmann::json& doc);

VmatPlan load_plan(const std::filesystem::path& path);
void save_plan(const VmatPlan& plan, const std::filesystem::path& path);

struct RawTensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;
};

void write_tensor(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                  std::span<const float> values);
RawTensor read_tensor(const std::filesystem::path& path);

/// "<dir>/<stem>.geom.json" for "<dir>/<stem>.<ext>".
std::filesystem::path sidecar_path(const std::filesystem::path& tensor_path);

/// Tensor dims are stored as (nz, ny, nx).
void save_grid(const Grid3& grid, const std::filesystem::path& path);
Grid3 load_grid(const std::filesystem::path& path);

/// Tensor dims are stored as (n_cp, nv, nu).
void save_stack(const PlaneStack& stack, const std::filesystem::path& path);
PlaneStack load_stack(const std::filesystem::path& path);

}  // namespace vmatflux
