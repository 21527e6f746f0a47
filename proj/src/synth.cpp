#include "vmatflux/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

#include "vmatflux/bev.hpp"
#include "vmatflux/fluence.hpp"
#include "vmatflux/io.hpp"

namespace vmatflux {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Low-frequency profile in [0, 1] over (control point, leaf pair).
struct SmoothField {
  double f1, f2, phase1, phase2, k1, k2;

  static SmoothField draw(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
    std::uniform_int_distribution<int> freq(1, 2);
    std::uniform_real_distribution<double> slope(-0.25, 0.25);
    SmoothField s{};
    s.f1 = freq(rng);
    s.f2 = freq(rng);
    s.phase1 = phase(rng);
    s.phase2 = phase(rng);
    s.k1 = slope(rng);
    s.k2 = slope(rng);
    return s;
  }

  double operator()(int i, int n, int k) const {
    const double x = 2.0 * kPi * i / n;
    const double v = 0.5 + 0.25 * std::sin(f1 * x + phase1 + k1 * k) + 0.25 * std::sin(f2 * x + phase2 + k2 * k);
    return std::clamp(v, 0.0, 1.0);
  }
};

bool inside(const Ellipsoid& e, const Vec3& p) {
  const double dx = (p.x - e.center_mm.x) / e.radii_mm.x;
  const double dy = (p.y - e.center_mm.y) / e.radii_mm.y;
  const double dz = (p.z - e.center_mm.z) / e.radii_mm.z;
  return dx * dx + dy * dy + dz * dz <= 1.0;
}

Grid3 rasterize(const PhantomSpec& spec, const Ellipsoid& e) {
  Grid3 g(spec.dims, spec.origin_mm, spec.spacing_mm);
  for (int iz = 0; iz < spec.dims[2]; ++iz) {
    for (int iy = 0; iy < spec.dims[1]; ++iy) {
      for (int ix = 0; ix < spec.dims[0]; ++ix) {
        if (inside(e, g.voxel_center(ix, iy, iz))) g.at(ix, iy, iz) = 1.0;
      }
    }
  }
  return g;
}

void check_ellipsoid(const Ellipsoid& e, const char* what) {
  if (!(e.radii_mm.x > 0.0 && e.radii_mm.y > 0.0 && e.radii_mm.z > 0.0)) {
    throw std::invalid_argument(std::string(what) + " radii must be positive");
  }
}

void write_json(const json& doc, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

std::string plan_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "plan_%04d", index);
  return buf;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ull));
}

Phantom gen_phantom(const PhantomSpec& spec) {
  check_ellipsoid(spec.target, "target");
  for (const auto& o : spec.oars) check_ellipsoid(o, "oar");
  for (int d : spec.dims) {
    if (d < 1) throw std::invalid_argument("phantom dims must be >= 1");
  }
  const Vec3 lo = spec.origin_mm;
  const Vec3 hi{lo.x + (spec.dims[0] - 1) * spec.spacing_mm.x, lo.y + (spec.dims[1] - 1) * spec.spacing_mm.y,
                lo.z + (spec.dims[2] - 1) * spec.spacing_mm.z};
  const auto& t = spec.target;
  if (t.center_mm.x - t.radii_mm.x < lo.x || t.center_mm.x + t.radii_mm.x > hi.x ||
      t.center_mm.y - t.radii_mm.y < lo.y || t.center_mm.y + t.radii_mm.y > hi.y ||
      t.center_mm.z - t.radii_mm.z < lo.z || t.center_mm.z + t.radii_mm.z > hi.z) {
    throw std::invalid_argument("target ellipsoid extends outside the grid");
  }
  Phantom ph;
  ph.target = spec.target;
  ph.target_mask = rasterize(spec, spec.target);
  for (const auto& o : spec.oars) ph.oar_masks.push_back(rasterize(spec, o));
  return ph;
}

VmatPlan gen_plan(const Phantom& phantom, MlcModel machine, int n_cp, std::uint64_t seed,
                  const PlanConstraints& constraints, const PlanOptions& options) {
  if (n_cp < 8) throw std::invalid_argument("gen_plan needs n_cp >= 8");
  if (constraints.max_leaf_travel_mm_per_cp < 0.0) {
    throw std::invalid_argument("max_leaf_travel_mm_per_cp must be non-negative");
  }
  std::mt19937_64 rng(seed);
  const SmoothField left_field = SmoothField::draw(rng);
  const SmoothField right_field = SmoothField::draw(rng);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  std::uniform_real_distribution<double> depth(0.2, 0.6);
  const double mu_phase = phase(rng);
  const double mu_depth = depth(rng);
  const int mu_freq = std::uniform_int_distribution<int>(1, 3)(rng);

  VmatPlan plan;
  plan.machine = MachineModel::make(machine, options.transmission);
  plan.sad_mm = options.sad_mm;
  plan.isocenter_mm = phantom.target.center_mm;

  const Grid3& mask = phantom.target_mask;
  std::vector<Vec3> voxels;
  for (int iz = 0; iz < mask.dims[2]; ++iz)
    for (int iy = 0; iy < mask.dims[1]; ++iy)
      for (int ix = 0; ix < mask.dims[0]; ++ix)
        if (mask.at(ix, iy, iz) > 0.5) voxels.push_back(mask.voxel_center(ix, iy, iz));
  if (voxels.empty()) throw std::invalid_argument("gen_plan: empty target mask");
  const Vec3 h = 0.5 * mask.spacing_mm;
  const auto& edges = plan.machine.leaf_boundaries_mm;

  double mu_total = 0.0;
  for (int i = 0; i < n_cp; ++i) {
    ControlPoint cp;
    cp.gantry_deg = 360.0 * i / n_cp;
    cp.collimator_deg = options.collimator_deg;
    cp.couch_deg = 0.0;
    const BeamFrame f = beam_frame(cp.gantry_deg, cp.collimator_deg, cp.couch_deg, plan.isocenter_mm, plan.sad_mm);

    LeafBank lo, hi;
    lo.fill(std::numeric_limits<double>::infinity());
    hi.fill(-std::numeric_limits<double>::infinity());
    double u_min = std::numeric_limits<double>::infinity(), u_max = -u_min;
    for (const Vec3& c : voxels) {
      constexpr double inf = std::numeric_limits<double>::infinity();
      double umin = inf, umax = -inf, vmin = inf, vmax = -inf;
      for (int corner = 0; corner < 8; ++corner) {
        const Vec3 p{c.x + ((corner & 1) ? h.x : -h.x), c.y + ((corner & 2) ? h.y : -h.y),
                     c.z + ((corner & 4) ? h.z : -h.z)};
        const Vec3 w = p - f.source_mm;
        const double scale = plan.sad_mm / dot(w, f.axis);
        const double u = dot(w, f.u_axis) * scale;
        const double v = dot(w, f.v_axis) * scale;
        umin = std::min(umin, u);
        umax = std::max(umax, u);
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
      }
      u_min = std::min(u_min, umin);
      u_max = std::max(u_max, umax);
      for (int k = 0; k < kLeafPairs; ++k) {
        if (edges[k + 1] <= vmin || edges[k] >= vmax) continue;
        lo[k] = std::min(lo[k], umin);
        hi[k] = std::max(hi[k], umax);
      }
    }
    const double center = 0.5 * (u_min + u_max);
    for (int k = 0; k < kLeafPairs; ++k) {
      if (lo[k] > hi[k]) {
        cp.leaf_left_mm[k] = cp.leaf_right_mm[k] = center;
      } else {
        cp.leaf_left_mm[k] = lo[k] - options.margin_mm * left_field(i, n_cp, k);
        cp.leaf_right_mm[k] = hi[k] + options.margin_mm * right_field(i, n_cp, k);
      }
    }
    cp.mu_weight = 1.0 + mu_depth * std::sin(2.0 * kPi * mu_freq * i / n_cp + mu_phase);
    mu_total += cp.mu_weight;
    plan.control_points.push_back(cp);
  }
  for (auto& cp : plan.control_points) cp.mu_weight /= mu_total;

  // Forward clamp; clamp is monotone, so left <= right survives it.
  const double travel = constraints.max_leaf_travel_mm_per_cp;
  for (int i = 1; i < n_cp; ++i) {
    auto& prev = plan.control_points[i - 1];
    auto& cur = plan.control_points[i];
    for (int k = 0; k < kLeafPairs; ++k) {
      cur.leaf_left_mm[k] = std::clamp(cur.leaf_left_mm[k], prev.leaf_left_mm[k] - travel, prev.leaf_left_mm[k] + travel);
      cur.leaf_right_mm[k] =
          std::clamp(cur.leaf_right_mm[k], prev.leaf_right_mm[k] - travel, prev.leaf_right_mm[k] + travel);
    }
  }
  validate_plan(plan);
  return plan;
}

PlaneGeometry Preset::plane_geometry() const {
  return PlaneGeometry::centered(fluence_px, fluence_px, fluence_spacing_mm, fluence_spacing_mm);
}

GridSpec Preset::grid_spec() const { return GridSpec::centered({grid_dim, grid_dim, grid_dim}, grid_spacing_mm); }

Preset preset_by_name(const std::string& name) {
  if (name == "ci") return Preset{"ci", 32, 32, 2.5, 48, 3.0, 10.0, 20.0};
  if (name == "paper-shape") return Preset{"paper-shape", 180, 64, 2.5, 96, 2.0, 15.0, 35.0};
  throw std::invalid_argument("unknown preset '" + name + "' (expected ci or paper-shape)");
}

PhantomSpec random_phantom_spec(const Preset& preset, std::uint64_t seed, int plan_index) {
  std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(plan_index)));
  const GridSpec grid = preset.grid_spec();
  PhantomSpec spec;
  spec.dims = grid.dims;
  spec.spacing_mm = grid.spacing_mm;
  spec.origin_mm = grid.origin_mm;
  spec.seed = rng();
  std::uniform_real_distribution<double> radius(preset.min_radius_mm, preset.max_radius_mm);
  std::uniform_real_distribution<double> offset(-0.5 * preset.min_radius_mm, 0.5 * preset.min_radius_mm);
  spec.target.radii_mm = {radius(rng), radius(rng), radius(rng)};
  spec.target.center_mm = {offset(rng), offset(rng), offset(rng)};
  const auto& t = spec.target;
  // Posterior and anterior-superior organs at risk.
  spec.oars.push_back({{t.center_mm.x, t.center_mm.y + t.radii_mm.y + 8.0, t.center_mm.z},
                       {0.6 * t.radii_mm.x, 6.0, 1.2 * t.radii_mm.z}});
  spec.oars.push_back({{t.center_mm.x, t.center_mm.y - 0.5 * t.radii_mm.y, t.center_mm.z + t.radii_mm.z + 10.0},
                       {1.2 * t.radii_mm.x, 0.8 * t.radii_mm.y, 8.0}});
  return spec;
}

json DatasetManifest::to_json() const {
  json doc;
  doc["seed"] = seed;
  doc["preset"] = preset;
  json plans_j = json::array();
  for (const auto& p : plans) plans_j.push_back({{"id", p.id}, {"machine", std::string(to_string(p.machine))}});
  doc["plans"] = std::move(plans_j);
  doc["splits"] = {{"train", train}, {"val", val}};
  return doc;
}

DatasetManifest DatasetManifest::from_json(const json& doc) {
  DatasetManifest m;
  try {
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.preset = doc.at("preset").get<std::string>();
    for (const auto& p : doc.at("plans")) {
      m.plans.push_back({p.at("id").get<std::string>(), mlc_model_from_string(p.at("machine").get<std::string>())});
    }
    m.train = doc.at("splits").at("train").get<std::vector<std::string>>();
    m.val = doc.at("splits").at("val").get<std::vector<std::string>>();
  } catch (const std::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

DatasetManifest gen_dataset(int n_plans, const fs::path& out_dir, std::uint64_t seed, const Preset& preset) {
  if (n_plans < 1) throw std::invalid_argument("gen_dataset needs n_plans >= 1");
  for (const char* sub : {"plans", "doses", "fluences", "masks"}) fs::create_directories(out_dir / sub);

  DatasetManifest manifest;
  manifest.seed = seed;
  manifest.preset = preset.name;
  const PlaneGeometry geom = preset.plane_geometry();
  const GridSpec grid = preset.grid_spec();
  for (int j = 0; j < n_plans; ++j) {
    const PhantomSpec spec = random_phantom_spec(preset, seed, j);
    std::mt19937_64 rng(spec.seed);
    const MlcModel machine = std::bernoulli_distribution(0.5)(rng) ? MlcModel::HD120 : MlcModel::M120;
    const Phantom phantom = gen_phantom(spec);
    const VmatPlan plan = gen_plan(phantom, machine, preset.n_cp, rng());
    const PlaneStack fluence = fluence_stack(plan, geom);
    const Grid3 dose = forward_dose(fluence, plan, grid);

    const std::string id = plan_id(j);
    save_plan(plan, out_dir / "plans" / (id + ".json"));
    save_stack(fluence, out_dir / "fluences" / (id + ".vft"));
    save_grid(dose, out_dir / "doses" / (id + ".vft"));
    save_grid(phantom.target_mask, out_dir / "masks" / (id + ".vft"));
    manifest.plans.push_back({id, machine});
  }

  std::vector<std::string> ids;
  for (const auto& p : manifest.plans) ids.push_back(p.id);
  std::mt19937_64 split_rng(derive_seed(seed, 0xD15EA5Eull));
  std::shuffle(ids.begin(), ids.end(), split_rng);
  const int n_val = n_plans >= 2 ? std::max(1, static_cast<int>(std::lround(0.1 * n_plans))) : 0;
  manifest.val.assign(ids.begin(), ids.begin() + n_val);
  manifest.train.assign(ids.begin() + n_val, ids.end());
  std::sort(manifest.val.begin(), manifest.val.end());
  std::sort(manifest.train.begin(), manifest.train.end());

  write_json(manifest.to_json(), out_dir / "manifest.json");
  return manifest;
}

DatasetManifest load_manifest(const fs::path& dataset_dir) {
  std::ifstream in(dataset_dir / "manifest.json");
  if (!in) throw IoError("cannot open " + (dataset_dir / "manifest.json").string());
  try {
    return DatasetManifest::from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace vmatflux
