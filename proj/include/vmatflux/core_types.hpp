#pragma once

// Domain model shared by every stage of the pipeline.
//
// Patient coordinates follow LPS (x to the left, y to posterior, z to
// superior). A gantry angle g rotates the source about +z through the
// isocenter, with g = 0 placing the source anteriorly:
//   source = iso + SAD * (sin g, -cos g, 0).

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vmatflux {

struct Vec3 {
  double x{};
  double y{};
  double z{};
};

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, const Vec3& v) { return {s * v.x, s * v.y, s * v.z}; }
inline Vec3 operator*(const Vec3& v, double s) { return s * v; }
inline bool operator==(const Vec3& a, const Vec3& b) { return a.x == b.x && a.y == b.y && a.z == b.z; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) { return (1.0 / norm(v)) * v; }

inline constexpr double kPi = 3.14159265358979323846;
inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }

inline constexpr int kLeafPairs = 60;
inline constexpr double kDefaultTransmission = 0.015;
inline constexpr double kDefaultSadMm = 1000.0;

using LeafBank = std::array<double, kLeafPairs>;
using LeafBoundaries = std::array<double, kLeafPairs + 1>;

enum class MlcModel : std::uint8_t { HD120, M120 };

std::string_view to_string(MlcModel model);
/// Throws std::invalid_argument for anything other than "HD120" / "M120".
MlcModel mlc_model_from_string(std::string_view name);

/// Edges of the 60 leaf pairs along v at the isocenter plane, ascending, in mm.
LeafBoundaries leaf_boundaries(MlcModel model);
LeafBoundaries leaf_boundaries(std::string_view model_name);

struct MachineModel {
  MlcModel name{MlcModel::HD120};
  int leaf_pair_count{kLeafPairs};
  LeafBoundaries leaf_boundaries_mm{};
  double transmission{kDefaultTransmission};

  static MachineModel make(MlcModel model, double transmission = kDefaultTransmission);
};

struct ControlPoint {
  double gantry_deg{};
  double collimator_deg{};
  double couch_deg{};
  double mu_weight{};
  LeafBank leaf_left_mm{};
  LeafBank leaf_right_mm{};
};

struct VmatPlan {
  MachineModel machine{};
  Vec3 isocenter_mm{};
  double sad_mm{kDefaultSadMm};
  std::vector<ControlPoint> control_points;

  std::size_t n_cp() const { return control_points.size(); }
};

/// Raised by validate_plan and the plan loader. cp_index / leaf_pair are -1
/// when the violation is not tied to one control point or pair.
class PlanValidationError : public std::runtime_error {
 public:
  PlanValidationError(const std::string& what, int cp_index = -1, int leaf_pair = -1)
      : std::runtime_error(what), cp_index_(cp_index), leaf_pair_(leaf_pair) {}
  int cp_index() const { return cp_index_; }
  int leaf_pair() const { return leaf_pair_; }

 private:
  int cp_index_;
  int leaf_pair_;
};

void validate_machine(const MachineModel& machine);
void validate_plan(const VmatPlan& plan);

/// Control points reordered by increasing gantry angle.
VmatPlan sorted_by_gantry(VmatPlan plan);

/// Regular 3D scalar field; values are row-major with x fastest.
struct Grid3 {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 origin_mm{};
  Vec3 spacing_mm{1.0, 1.0, 1.0};
  std::vector<double> values;

  Grid3() = default;
  Grid3(std::array<int, 3> dims_, Vec3 origin, Vec3 spacing, double fill = 0.0);

  std::size_t size() const { return values.size(); }
  std::size_t index(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(iz) * dims[1] + iy) * dims[0] + ix;
  }
  double& at(int ix, int iy, int iz) { return values[index(ix, iy, iz)]; }
  double at(int ix, int iy, int iz) const { return values[index(ix, iy, iz)]; }
  Vec3 voxel_center(int ix, int iy, int iz) const {
    return {origin_mm.x + ix * spacing_mm.x, origin_mm.y + iy * spacing_mm.y,
            origin_mm.z + iz * spacing_mm.z};
  }
  bool same_geometry(const Grid3& other) const {
    return dims == other.dims && origin_mm == other.origin_mm && spacing_mm == other.spacing_mm;
  }
};

void validate_grid(const Grid3& grid);

/// Isocenter-plane raster, in collimator-rotated beam coordinates (u along
/// leaf travel, v across leaf pairs). origin is the center of pixel (0, 0).
struct PlaneGeometry {
  int nu{64};
  int nv{64};
  double du{2.5};
  double dv{2.5};
  double u0{-78.75};
  double v0{-78.75};

  static PlaneGeometry centered(int nu, int nv, double du, double dv);
  static PlaneGeometry default_geometry() { return centered(64, 64, 2.5, 2.5); }

  double u_at(int p) const { return u0 + p * du; }
  double v_at(int q) const { return v0 + q * dv; }
  std::size_t pixels() const { return static_cast<std::size_t>(nu) * nv; }
  bool operator==(const PlaneGeometry&) const = default;
};

void validate_geometry(const PlaneGeometry& geom);

enum class PlaneKind : std::uint8_t { Fluence, BevDose };

std::string_view to_string(PlaneKind kind);
PlaneKind plane_kind_from_string(std::string_view name);

/// n_cp planes of nv x nu pixels, plane i belonging to control point i.
struct PlaneStack {
  PlaneKind kind{PlaneKind::Fluence};
  PlaneGeometry geometry{};
  int n_cp{0};
  std::vector<double> values;

  PlaneStack() = default;
  PlaneStack(PlaneKind kind_, const PlaneGeometry& geom, int n_cp_, double fill = 0.0);

  std::size_t plane_size() const { return geometry.pixels(); }
  double* plane(int i) { return values.data() + static_cast<std::size_t>(i) * plane_size(); }
  const double* plane(int i) const { return values.data() + static_cast<std::size_t>(i) * plane_size(); }
  double& at(int i, int q, int p) { return plane(i)[static_cast<std::size_t>(q) * geometry.nu + p]; }
  double at(int i, int q, int p) const { return plane(i)[static_cast<std::size_t>(q) * geometry.nu + p]; }
  bool same_shape(const PlaneStack& other) const {
    return n_cp == other.n_cp && geometry.nu == other.geometry.nu && geometry.nv == other.geometry.nv;
  }
};

}  // namespace vmatflux
