#include "vmatflux/nn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "vmatflux/bev.hpp"
#include "vmatflux/io.hpp"
#include "vmatflux/metrics.hpp"
#include "vmatflux/nn/gantry.hpp"

namespace vmatflux::nn {

Tensor5<float> stack_to_tensor(const PlaneStack& stack, double* max_out) {
  double peak = 0.0;
  for (double v : stack.values) peak = std::max(peak, v);
  if (!(peak > 0.0)) peak = 1.0;
  Tensor5<float> t(Shape5{1, 1, stack.n_cp, stack.geometry.nv, stack.geometry.nu});
  for (std::size_t i = 0; i < stack.values.size(); ++i) t.data[i] = static_cast<float>(stack.values[i] / peak);
  if (max_out != nullptr) *max_out = peak;
  return t;
}

PlaneStack tensor_to_stack(const Tensor5<float>& t, PlaneKind kind, const PlaneGeometry& geom, double scale) {
  if (t.batch() != 1 || t.channels() != 1 || t.height() != geom.nv || t.width() != geom.nu) {
    throw ShapeError("tensor " + shape_string(t.shape) + " does not match a " + std::to_string(geom.nv) + "x" +
                     std::to_string(geom.nu) + " plane stack");
  }
  PlaneStack s(kind, geom, t.depth());
  for (std::size_t i = 0; i < t.data.size(); ++i) s.values[i] = static_cast<double>(t.data[i]) * scale;
  return s;
}

TrainSample make_sample(const PlaneStack& bev, const PlaneStack& fluence, std::string id) {
  if (!bev.same_shape(fluence)) {
    throw ShapeError("sample " + id + ": BEV stack " + std::to_string(bev.n_cp) + "x" +
                     std::to_string(bev.geometry.nv) + "x" + std::to_string(bev.geometry.nu) +
                     " does not match fluence stack " + std::to_string(fluence.n_cp) + "x" +
                     std::to_string(fluence.geometry.nv) + "x" + std::to_string(fluence.geometry.nu));
  }
  TrainSample s;
  s.id = std::move(id);
  s.geometry = fluence.geometry;
  s.input = stack_to_tensor(bev, &s.input_max);
  s.target = stack_to_tensor(fluence, &s.target_max);
  return s;
}

std::vector<TrainSample> load_samples(const std::filesystem::path& dir, const std::vector<std::string>& ids,
                                      double step_mm) {
  std::vector<TrainSample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const VmatPlan plan = load_plan(dir / "plans" / (id + ".json"));
    const Grid3 dose = load_grid(dir / "doses" / (id + ".vft"));
    const PlaneStack fluence = load_stack(dir / "fluences" / (id + ".vft"));
    out.push_back(make_sample(project_dose(dose, plan, fluence.geometry, step_mm), fluence, id));
  }
  return out;
}

int network_depth(const NetConfig& config, int n_cp) {
  if (config.arch == Arch::UNet2D) return n_cp;
  const int multiple = std::lcm(config.pad_multiple, 1 << (config.n_scales - 1));
  return padded_depth(n_cp, multiple);
}

Tensor5<float> infer(Network<float>& net, const Tensor5<float>& input) {
  const int depth = network_depth(net.config(), input.depth());
  return crop_gantry(net.forward(circular_pad_gantry(input, depth)), input.depth());
}

namespace {

double normalized_psnr(const Tensor5<float>& pred, const Tensor5<float>& target) {
  std::vector<double> p(pred.data.begin(), pred.data.end());
  std::vector<double> t(target.data.begin(), target.data.end());
  return psnr(p, t);
}

}  // namespace

TrainResult train(const std::vector<TrainSample>& data, const NetConfig& config, const TrainOptions& options) {
  return train(data, build_network<float>(config, options.seed), options);
}

TrainResult train(const std::vector<TrainSample>& data, std::unique_ptr<Network<float>> net,
                  const TrainOptions& options) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (options.steps < 0) throw std::invalid_argument("train: steps must be >= 0");
  if (!net) throw std::invalid_argument("train: null network");
  for (const auto& s : data) {
    if (s.input.shape != s.target.shape) throw ShapeError("train: sample " + s.id + " input/target shape mismatch");
  }

  TrainResult result;
  double ratio = 0.0;
  for (const auto& s : data) ratio += s.target_max / s.input_max;
  result.fluence_scale_ratio = ratio / static_cast<double>(data.size());

  Adam<float> adam(net->params(), options.adam);
  std::mt19937_64 order_rng(options.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  result.curve.reserve(static_cast<std::size_t>(options.steps));

  for (int step = 1; step <= options.steps; ++step) {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), order_rng);
      cursor = 0;
    }
    const TrainSample& s = data[order[cursor++]];
    const int n_cp = s.input.depth();
    const int depth = network_depth(net->config(), n_cp);

    net->params().zero_grad();
    const Tensor5<float> pred = crop_gantry(net->forward(circular_pad_gantry(s.input, depth)), n_cp);
    LossResult<float> loss = loss_l1l2(pred, s.target, options.alpha, options.beta);
    if (!std::isfinite(loss.loss)) {
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) + " (sample " + s.id + ")");
    }
    net->backward(crop_gantry_backward(loss.grad, depth));
    adam.step();

    StepRecord rec{step, loss.loss, normalized_psnr(pred, s.target)};
    result.curve.push_back(rec);
    if (options.on_step) options.on_step(rec, *net);
  }
  result.net = std::move(net);
  return result;
}

PlaneStack predict_from_bev(const Network<float>& net, const PlaneStack& bev, double fluence_scale_ratio) {
  double input_max = 1.0;
  const Tensor5<float> x = stack_to_tensor(bev, &input_max);
  auto local = net.clone();
  PlaneStack out = tensor_to_stack(infer(*local, x), PlaneKind::Fluence, bev.geometry, input_max * fluence_scale_ratio);
  for (double& v : out.values) v = std::max(v, 0.0);
  return out;
}

PlaneStack predict(const VmatPlan& plan, const Grid3& dose, const Network<float>& net, double fluence_scale_ratio,
                   const PlaneGeometry& geometry, double step_mm) {
  return predict_from_bev(net, project_dose(dose, plan, geometry, step_mm), fluence_scale_ratio);
}

}  // namespace vmatflux::nn
