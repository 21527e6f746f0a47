#pragma once

// Synthetic (plan, dose, fluence) triples for desk-scale training.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vmatflux/core_types.hpp"
#include "vmatflux/dose.hpp"

namespace vmatflux {

struct Ellipsoid {
  Vec3 center_mm{};
  Vec3 radii_mm{10.0, 10.0, 10.0};
};

struct PhantomSpec {
  std::array<int, 3> dims{48, 48, 48};
  Vec3 spacing_mm{3.0, 3.0, 3.0};
  Vec3 origin_mm{-70.5, -70.5, -70.5};
  Ellipsoid target{};
  std::vector<Ellipsoid> oars;
  std::uint64_t seed{0};
};

struct Phantom {
  Grid3 target_mask;
  std::vector<Grid3> oar_masks;
  Ellipsoid target{};
};

/// Binary masks (1 inside, 0 outside) rasterized at voxel centers.
Phantom gen_phantom(const PhantomSpec& spec);

struct PlanConstraints {
  double max_leaf_travel_mm_per_cp{10.0};
};

struct PlanOptions {
  double collimator_deg{30.0};
  double margin_mm{6.0};
  double transmission{kDefaultTransmission};
  double sad_mm{kDefaultSadMm};
};

/// Conformal arc: each aperture covers the target's divergent silhouette
/// plus a smooth seeded outward margin; MU weights carry a smooth seeded
/// modulation and sum to 1. Gantry angles are k * 360 / n_cp. The isocenter
/// is the target center.
VmatPlan gen_plan(const Phantom& phantom, MlcModel machine, int n_cp, std::uint64_t seed,
                  const PlanConstraints& constraints = {}, const PlanOptions& options = {});

/// Desk-scale shapes.
struct Preset {
  std::string name;
  int n_cp{32};
  int fluence_px{32};
  double fluence_spacing_mm{2.5};
  int grid_dim{48};
  double grid_spacing_mm{3.0};
  double min_radius_mm{10.0};
  double max_radius_mm{20.0};

  PlaneGeometry plane_geometry() const;
  GridSpec grid_spec() const;
};

/// "ci" or "paper-shape"; std::invalid_argument otherwise.
Preset preset_by_name(const std::string& name);

/// Random phantom for (seed, plan_index); independent of generation order.
PhantomSpec random_phantom_spec(const Preset& preset, std::uint64_t seed, int plan_index);

struct DatasetEntry {
  std::string id;
  MlcModel machine{MlcModel::HD120};
};

struct DatasetManifest {
  std::uint64_t seed{0};
  std::string preset;
  std::vector<DatasetEntry> plans;
  std::vector<std::string> train;
  std::vector<std::string> val;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& doc);
};

/// Writes plans/<id>.json, doses/<id>.vft, fluences/<id>.vft, masks/<id>.vft
/// (target mask) and manifest.json into out_dir.
DatasetManifest gen_dataset(int n_plans, const std::filesystem::path& out_dir, std::uint64_t seed,
                            const Preset& preset);

DatasetManifest load_manifest(const std::filesystem::path& dataset_dir);

/// Per-plan RNG seed derived from (seed, index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace vmatflux
