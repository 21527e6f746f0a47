#include "vmatflux/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace vmatflux {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "VFT1 I/O assumes a little-endian host");

constexpr char kMagic[4] = {'V', 'F', 'T', '1'};

json vec3_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec3_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw IoError(std::string(what) + " must be an array of 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

LeafBank leaf_bank_from(const json& j, int cp_index, const char* what) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(kLeafPairs)) {
    std::ostringstream os;
    os << "control point " << cp_index << ": " << what << " must hold " << kLeafPairs << " values (got "
       << (j.is_array() ? j.size() : 0) << ")";
    throw PlanValidationError(os.str(), cp_index);
  }
  LeafBank bank{};
  for (int k = 0; k < kLeafPairs; ++k) bank[k] = j[k].get<double>();
  return bank;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_json_file(const json& doc, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::vector<float> to_f32(const std::vector<double>& values) {
  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<float>(values[i]);
  return out;
}

}  // namespace

json plan_to_json(const VmatPlan& plan) {
  json doc;
  doc["machine"] = std::string(to_string(plan.machine.name));
  doc["transmission"] = plan.machine.transmission;
  doc["sad_mm"] = plan.sad_mm;
  doc["isocenter_mm"] = vec3_json(plan.isocenter_mm);
  json cps = json::array();
  for (const auto& cp : plan.control_points) {
    json c;
    c["gantry_deg"] = cp.gantry_deg;
    c["collimator_deg"] = cp.collimator_deg;
    c["couch_deg"] = cp.couch_deg;
    c["mu_weight"] = cp.mu_weight;
    c["leaf_left_mm"] = cp.leaf_left_mm;
    c["leaf_right_mm"] = cp.leaf_right_mm;
    cps.push_back(std::move(c));
  }
  doc["control_points"] = std::move(cps);
  return doc;
}

VmatPlan plan_from_json(const json& doc) {
  VmatPlan plan;
  try {
    if (!doc.is_object()) throw IoError("plan document must be a JSON object");
    MlcModel model;
    try {
      model = mlc_model_from_string(doc.at("machine").get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw PlanValidationError(e.what());
    }
    plan.machine = MachineModel::make(model, doc.value("transmission", kDefaultTransmission));
    plan.sad_mm = doc.value("sad_mm", kDefaultSadMm);
    plan.isocenter_mm = vec3_from(doc.at("isocenter_mm"), "isocenter_mm");
    const json& cps = doc.at("control_points");
    if (!cps.is_array()) throw IoError("control_points must be an array");
    for (std::size_t i = 0; i < cps.size(); ++i) {
      const json& c = cps[i];
      const int ci = static_cast<int>(i);
      ControlPoint cp;
      try {
        cp.gantry_deg = c.at("gantry_deg").get<double>();
        cp.collimator_deg = c.value("collimator_deg", 0.0);
        cp.couch_deg = c.value("couch_deg", 0.0);
        cp.mu_weight = c.at("mu_weight").get<double>();
      } catch (const json::exception& e) {
        throw PlanValidationError("control point " + std::to_string(ci) + ": " + e.what(), ci);
      }
      cp.leaf_left_mm = leaf_bank_from(c.at("leaf_left_mm"), ci, "leaf_left_mm");
      cp.leaf_right_mm = leaf_bank_from(c.at("leaf_right_mm"), ci, "leaf_right_mm");
      plan.control_points.push_back(cp);
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed plan: ") + e.what());
  }
  validate_plan(plan);
  return plan;
}

VmatPlan load_plan(const fs::path& path) { return plan_from_json(read_json_file(path)); }

void save_plan(const VmatPlan& plan, const fs::path& path) {
  validate_plan(plan);
  write_json_file(plan_to_json(plan), path);
}

void write_tensor(const fs::path& path, std::span<const std::uint64_t> dims, std::span<const float> values) {
  std::uint64_t count = 1;
  for (auto d : dims) count *= d;
  if (count != values.size()) throw IoError("tensor dims do not match payload size");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, 4);
  const auto ndim = static_cast<std::uint32_t>(dims.size());
  out.write(reinterpret_cast<const char*>(&ndim), sizeof ndim);
  out.write(reinterpret_cast<const char*>(dims.data()), static_cast<std::streamsize>(dims.size_bytes()));
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (!out) throw IoError("write failed for " + path.string());
}

RawTensor read_tensor(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::size_t off = 0;
  auto take = [&](void* dst, std::size_t n, const char* what) {
    if (bytes.size() - off < n) throw IoError(std::string("truncated header: ") + what);
    std::memcpy(dst, bytes.data() + off, n);
    off += n;
  };
  char magic[4];
  take(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw IoError("magic mismatch in " + path.string());
  std::uint32_t ndim = 0;
  take(&ndim, sizeof ndim, "ndim");
  if (ndim > 16) throw IoError("implausible ndim");
  RawTensor t;
  t.dims.resize(ndim);
  take(t.dims.data(), ndim * sizeof(std::uint64_t), "dims");
  std::uint64_t count = 1;
  for (auto d : t.dims) count *= d;
  if (bytes.size() - off != count * sizeof(float)) throw IoError("payload size mismatch in " + path.string());
  t.values.resize(count);
  std::memcpy(t.values.data(), bytes.data() + off, count * sizeof(float));
  return t;
}

fs::path sidecar_path(const fs::path& tensor_path) {
  fs::path p = tensor_path;
  p.replace_extension(".geom.json");
  return p;
}

void save_grid(const Grid3& grid, const fs::path& path) {
  validate_grid(grid);
  const std::uint64_t dims[3] = {static_cast<std::uint64_t>(grid.dims[2]), static_cast<std::uint64_t>(grid.dims[1]),
                                 static_cast<std::uint64_t>(grid.dims[0])};
  const auto payload = to_f32(grid.values);
  write_tensor(path, dims, payload);
  json side;
  side["kind"] = "Grid";
  side["origin_mm"] = vec3_json(grid.origin_mm);
  side["spacing_mm"] = vec3_json(grid.spacing_mm);
  write_json_file(side, sidecar_path(path));
}

Grid3 load_grid(const fs::path& path) {
  RawTensor t = read_tensor(path);
  if (t.dims.size() != 3) throw IoError("grid tensor must be 3-dimensional");
  const json side = read_json_file(sidecar_path(path));
  Grid3 grid;
  try {
    grid.origin_mm = vec3_from(side.at("origin_mm"), "origin_mm");
    grid.spacing_mm = vec3_from(side.at("spacing_mm"), "spacing_mm");
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed grid sidecar: ") + e.what());
  }
  grid.dims = {static_cast<int>(t.dims[2]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[0])};
  grid.values.assign(t.values.begin(), t.values.end());
  try {
    validate_grid(grid);
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("invalid grid: ") + e.what());
  }
  return grid;
}

void save_stack(const PlaneStack& stack, const fs::path& path) {
  const auto& g = stack.geometry;
  const std::uint64_t dims[3] = {static_cast<std::uint64_t>(stack.n_cp), static_cast<std::uint64_t>(g.nv),
                                 static_cast<std::uint64_t>(g.nu)};
  write_tensor(path, dims, to_f32(stack.values));
  json side;
  side["kind"] = std::string(to_string(stack.kind));
  side["size_px"] = json::array({g.nu, g.nv});
  side["spacing_mm"] = json::array({g.du, g.dv});
  side["origin_mm"] = json::array({g.u0, g.v0});
  write_json_file(side, sidecar_path(path));
}

PlaneStack load_stack(const fs::path& path) {
  RawTensor t = read_tensor(path);
  if (t.dims.size() != 3) throw IoError("plane stack tensor must be 3-dimensional");
  const json side = read_json_file(sidecar_path(path));
  PlaneStack stack;
  try {
    stack.kind = plane_kind_from_string(side.at("kind").get<std::string>());
    stack.geometry.nu = side.at("size_px").at(0).get<int>();
    stack.geometry.nv = side.at("size_px").at(1).get<int>();
    stack.geometry.du = side.at("spacing_mm").at(0).get<double>();
    stack.geometry.dv = side.at("spacing_mm").at(1).get<double>();
    stack.geometry.u0 = side.at("origin_mm").at(0).get<double>();
    stack.geometry.v0 = side.at("origin_mm").at(1).get<double>();
  } catch (const std::exception& e) {
    throw IoError(std::string("malformed stack sidecar: ") + e.what());
  }
  if (t.dims[1] != static_cast<std::uint64_t>(stack.geometry.nv) ||
      t.dims[2] != static_cast<std::uint64_t>(stack.geometry.nu)) {
    throw IoError("stack tensor dims disagree with sidecar geometry");
  }
  stack.n_cp = static_cast<int>(t.dims[0]);
  stack.values.assign(t.values.begin(), t.values.end());
  return stack;
}

}  // namespace vmatflux
