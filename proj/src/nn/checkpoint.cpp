#include "vmatflux/nn/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vmatflux/io.hpp"

namespace vmatflux::nn {

namespace fs = std::filesystem;

namespace {

std::string param_file(const std::string& name) {
  std::string f = name;
  for (char& c : f) {
    if (c == '/') c = '.';
  }
  return f + ".vft";
}

std::string dims_string(const std::vector<std::uint64_t>& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ')';
  return os.str();
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Network<float>& net, const CheckpointMeta& meta) {
  fs::create_directories(dir);
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : net.params()) {
    std::vector<std::uint64_t> dims(p->shape.begin(), p->shape.end());
    const std::string file = param_file(p->name);
    write_tensor(dir / file, dims, p->value);
    params.push_back({{"name", p->name}, {"file", file}, {"shape", p->shape}});
  }
  const auto& g = meta.geometry;
  nlohmann::json doc = {{"format", "vmatflux-checkpoint-1"},
                        {"config", config_to_json(net.config())},
                        {"step", meta.step},
                        {"loss", meta.loss},
                        {"seed", meta.seed},
                        {"init_seed", net.init_seed()},
                        {"fluence_scale_ratio", meta.fluence_scale_ratio},
                        {"geometry",
                         {{"size_px", {g.nu, g.nv}}, {"spacing_mm", {g.du, g.dv}}, {"origin_mm", {g.u0, g.v0}}}},
                        {"params", params}};
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
  os << doc.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  std::ifstream is(manifest);
  if (!is) throw IoError("cannot open checkpoint manifest " + manifest.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest.string() + ": " + e.what());
  }

  LoadedCheckpoint out;
  try {
    const NetConfig config = config_from_json(doc.at("config"));
    out.meta.step = doc.at("step").get<int>();
    out.meta.loss = doc.at("loss").get<double>();
    out.meta.seed = doc.at("seed").get<std::uint64_t>();
    out.meta.fluence_scale_ratio = doc.at("fluence_scale_ratio").get<double>();
    const auto& g = doc.at("geometry");
    out.meta.geometry.nu = g.at("size_px").at(0).get<int>();
    out.meta.geometry.nv = g.at("size_px").at(1).get<int>();
    out.meta.geometry.du = g.at("spacing_mm").at(0).get<double>();
    out.meta.geometry.dv = g.at("spacing_mm").at(1).get<double>();
    out.meta.geometry.u0 = g.at("origin_mm").at(0).get<double>();
    out.meta.geometry.v0 = g.at("origin_mm").at(1).get<double>();
    out.net = build_network<float>(config, doc.value("init_seed", out.meta.seed));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest.string() + ": " + e.what());
  }

  const auto& stored = doc.at("params");
  auto& params = out.net->params();
  if (stored.size() != params.size()) {
    throw ShapeError("checkpoint lists " + std::to_string(stored.size()) + " parameters, config implies " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<float>& p = params[i];
    const std::string name = stored[i].at("name").get<std::string>();
    if (name != p.name) throw ShapeError("checkpoint parameter " + std::to_string(i) + " is '" + name +
                                         "', config expects '" + p.name + "'");
    RawTensor t = read_tensor(dir / stored[i].at("file").get<std::string>());
    const std::vector<std::uint64_t> want(p.shape.begin(), p.shape.end());
    if (t.dims != want) {
      throw ShapeError("parameter " + p.name + ": stored " + dims_string(t.dims) + ", config expects " +
                       dims_string(want));
    }
    p.value.assign(t.values.begin(), t.values.end());
  }
  return out;
}

}  // namespace vmatflux::nn
