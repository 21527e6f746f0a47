#include "vmatflux/nn/network.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "vmatflux/nn/layers.hpp"

namespace vmatflux::nn {

std::string_view to_string(Arch arch) {
  switch (arch) {
    case Arch::MedNeXt3D:
      return "mednext3d";
    case Arch::UNet3D:
      return "unet3d";
    case Arch::UNet2D:
      return "unet2d";
  }
  return "unknown";
}

Arch arch_from_string(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "mednext" || lower == "mednext3d") return Arch::MedNeXt3D;
  if (lower == "unet3d") return Arch::UNet3D;
  if (lower == "unet2d") return Arch::UNet2D;
  throw std::invalid_argument("unknown architecture '" + std::string(name) + "' (mednext, unet3d, unet2d)");
}

void validate_config(const NetConfig& c) {
  if (c.n_scales < 2) throw std::invalid_argument("n_scales must be >= 2");
  if (c.n_scales > 8) throw std::invalid_argument("n_scales must be <= 8");
  if (c.expansion < 1) throw std::invalid_argument("expansion must be >= 1");
  if (c.base_channels < 1) throw std::invalid_argument("base_channels must be >= 1");
  if (c.blocks_per_stage < 0) throw std::invalid_argument("blocks_per_stage must be >= 0");
  if (c.pad_multiple < 1) throw std::invalid_argument("pad_multiple must be >= 1");
  if (c.in_channels < 1) throw std::invalid_argument("in_channels must be >= 1");
  for (int k : c.kernel) {
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("kernel extents must be odd and positive");
  }
  if (c.arch == Arch::MedNeXt3D && c.kernel != std::array<int, 3>{3, 3, 3}) {
    throw std::invalid_argument("MedNeXt3D uses a 3x3x3 kernel");
  }
  if (c.arch != Arch::UNet2D && c.in_channels != 1) {
    throw std::invalid_argument("in_channels other than 1 is only meaningful for unet2d");
  }
}

nlohmann::json config_to_json(const NetConfig& c) {
  return {{"arch", to_string(c.arch)},
          {"base_channels", c.base_channels},
          {"n_scales", c.n_scales},
          {"blocks_per_stage", c.blocks_per_stage},
          {"expansion", c.expansion},
          {"kernel", c.kernel},
          {"pad_multiple", c.pad_multiple},
          {"in_channels", c.in_channels},
          {"use_norm", c.use_norm},
          {"circular_depth", c.circular_depth}};
}

NetConfig config_from_json(const nlohmann::json& doc) {
  NetConfig c;
  c.arch = arch_from_string(doc.at("arch").get<std::string>());
  c.base_channels = doc.at("base_channels").get<int>();
  c.n_scales = doc.at("n_scales").get<int>();
  c.blocks_per_stage = doc.at("blocks_per_stage").get<int>();
  c.expansion = doc.at("expansion").get<int>();
  c.kernel = doc.at("kernel").get<std::array<int, 3>>();
  c.pad_multiple = doc.at("pad_multiple").get<int>();
  c.in_channels = doc.value("in_channels", 1);
  c.use_norm = doc.value("use_norm", true);
  c.circular_depth = doc.value("circular_depth", false);
  validate_config(c);
  return c;
}

template <class T>
int Network<T>::spatial_multiple() const {
  return 1 << (config_.n_scales - 1);
}

template <class T>
int Network<T>::depth_multiple() const {
  return config_.arch == Arch::UNet2D ? 1 : spatial_multiple();
}

template <class T>
void Network<T>::check_input(const Tensor5<T>& x) const {
  if (x.channels() != 1) throw ShapeError("network input must have 1 channel, got " + shape_string(x.shape));
  const int sm = spatial_multiple();
  if (config_.arch == Arch::UNet2D) {
    if (x.depth() != config_.in_channels) {
      throw ShapeError("unet2d expects " + std::to_string(config_.in_channels) + " control points, got input " +
                       shape_string(x.shape));
    }
    if (x.height() % sm != 0 || x.width() % sm != 0) {
      throw ShapeError("unet2d requires H and W to be multiples of " + std::to_string(sm) + ", got " +
                       shape_string(x.shape));
    }
    return;
  }
  if (x.depth() % sm != 0 || x.height() % sm != 0 || x.width() % sm != 0) {
    throw ShapeError(std::string(to_string(config_.arch)) + " requires D, H and W to be multiples of " +
                     std::to_string(sm) + ", got " + shape_string(x.shape));
  }
}

template <class T>
std::unique_ptr<Network<T>> Network<T>::clone() const {
  auto copy = build_network<T>(config_, seed_);
  for (std::size_t i = 0; i < params_.size(); ++i) copy->params()[i].value = params_[i].value;
  return copy;
}

template <class T>
void init_params(ParamSet<T>& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double kStd = 0.02;
  for (auto& p : params) {
    switch (p->init) {
      case ParamInit::Kernel:
        for (auto& v : p->value) {
          double z = normal(rng);
          while (std::abs(z) > 2.0) z = normal(rng);
          v = static_cast<T>(kStd * z);
        }
        break;
      case ParamInit::Zero:
        std::fill(p->value.begin(), p->value.end(), T(0));
        break;
      case ParamInit::One:
        std::fill(p->value.begin(), p->value.end(), T(1));
        break;
    }
    std::fill(p->grad.begin(), p->grad.end(), T(0));
  }
}

namespace {

template <class T>
class MedNeXt final : public Network<T> {
 public:
  MedNeXt(const NetConfig& c, std::uint64_t seed)
      : Network<T>(c, seed), stem_(this->params_, "stem", 1, c.base_channels) {
    BlockOptions opt{c.expansion, c.use_norm, c.circular_depth};
    const int n = c.n_scales;
    auto channels = [&](int s) { return c.base_channels << s; };
    auto& ps = this->params_;
    enc_.resize(n);
    dec_.resize(n - 1);
    for (int s = 0; s < n; ++s) {
      const std::string stage = s == n - 1 ? "bottleneck" : "enc" + std::to_string(s);
      for (int j = 0; j < c.blocks_per_stage; ++j) {
        enc_[s].emplace_back(ps, stage + ".block" + std::to_string(j), channels(s), channels(s), Resample::Same, opt);
      }
      if (s < n - 1) {
        down_.emplace_back(ps, "down" + std::to_string(s), channels(s), channels(s + 1), Resample::Down, opt);
      }
    }
    for (int s = n - 2; s >= 0; --s) {
      up_.emplace_back(ps, "up" + std::to_string(s), channels(s + 1), channels(s), Resample::Up, opt);
      for (int j = 0; j < c.blocks_per_stage; ++j) {
        dec_[s].emplace_back(ps, "dec" + std::to_string(s) + ".block" + std::to_string(j), channels(s), channels(s),
                             Resample::Same, opt);
      }
    }
    head_.emplace(ps, "head", c.base_channels, 1);
    init_params(ps, seed);
  }

  Tensor5<T> forward(const Tensor5<T>& x) override {
    this->check_input(x);
    const int n = this->config_.n_scales;
    std::vector<Tensor5<T>> skips(n - 1);
    Tensor5<T> h = stem_.forward(x);
    for (int s = 0; s < n - 1; ++s) {
      for (auto& b : enc_[s]) h = b.forward(h);
      skips[s] = h;
      h = down_[s].forward(h);
    }
    for (auto& b : enc_[n - 1]) h = b.forward(h);
    for (int s = n - 2; s >= 0; --s) {
      h = up_[n - 2 - s].forward(h);
      add_inplace(h, skips[s]);
      for (auto& b : dec_[s]) h = b.forward(h);
    }
    return head_->forward(h);
  }

  Tensor5<T> backward(const Tensor5<T>& g) override {
    const int n = this->config_.n_scales;
    std::vector<Tensor5<T>> gskip(n - 1);
    Tensor5<T> gh = head_->backward(g);
    for (int s = 0; s < n - 1; ++s) {
      for (auto it = dec_[s].rbegin(); it != dec_[s].rend(); ++it) gh = it->backward(gh);
      gskip[s] = gh;
      gh = up_[n - 2 - s].backward(gh);
    }
    for (auto it = enc_[n - 1].rbegin(); it != enc_[n - 1].rend(); ++it) gh = it->backward(gh);
    for (int s = n - 2; s >= 0; --s) {
      gh = down_[s].backward(gh);
      add_inplace(gh, gskip[s]);
      for (auto it = enc_[s].rbegin(); it != enc_[s].rend(); ++it) gh = it->backward(gh);
    }
    return stem_.backward(gh);
  }

 private:
  PointwiseConv<T> stem_;
  std::vector<std::vector<ConvNextBlock<T>>> enc_;
  std::vector<ConvNextBlock<T>> down_;
  // Ordered coarse to fine: up_[0] feeds decoder stage n_scales - 2.
  std::vector<ConvNextBlock<T>> up_;
  std::vector<std::vector<ConvNextBlock<T>>> dec_;
  std::optional<PointwiseConv<T>> head_;
};

// Conv -> norm -> ReLU, twice.
template <class T>
class DoubleConv {
 public:
  DoubleConv(ParamSet<T>& ps, const std::string& name, int cin, int cout, std::array<int, 3> k, bool use_norm)
      : conv1_(ps, name + ".conv1", cin, cout, k),
        norm1_(ps, name + ".norm1", cout, use_norm),
        conv2_(ps, name + ".conv2", cout, cout, k),
        norm2_(ps, name + ".norm2", cout, use_norm) {}

  Tensor5<T> forward(const Tensor5<T>& x) {
    Tensor5<T> h = relu1_.forward(norm1_.forward(conv1_.forward(x)));
    return relu2_.forward(norm2_.forward(conv2_.forward(h)));
  }
  Tensor5<T> backward(const Tensor5<T>& g) {
    Tensor5<T> gh = conv2_.backward(norm2_.backward(relu2_.backward(g)));
    return conv1_.backward(norm1_.backward(relu1_.backward(gh)));
  }

 private:
  Conv3d<T> conv1_;
  ChannelNorm<T> norm1_;
  Relu<T> relu1_;
  Conv3d<T> conv2_;
  ChannelNorm<T> norm2_;
  Relu<T> relu2_;
};

// UNet3D pools every axis; UNet2D treats the gantry axis as channels and
// pools only H and W.
template <class T>
class UNet final : public Network<T> {
 public:
  UNet(const NetConfig& c, std::uint64_t seed) : Network<T>(c, seed), planar_(c.arch == Arch::UNet2D) {
    const int n = c.n_scales;
    const int kd = planar_ ? 1 : 2;
    const std::array<int, 3> k = planar_ ? std::array<int, 3>{1, c.kernel[1], c.kernel[2]} : c.kernel;
    const int io = planar_ ? c.in_channels : 1;
    auto channels = [&](int s) { return c.base_channels << s; };
    auto& ps = this->params_;
    for (int s = 0; s < n; ++s) {
      enc_.emplace_back(ps, s == n - 1 ? "bottleneck" : "enc" + std::to_string(s), s == 0 ? io : channels(s - 1),
                        channels(s), k, c.use_norm);
      if (s < n - 1) pool_.emplace_back(kd);
    }
    for (int s = n - 2; s >= 0; --s) {
      up_.emplace_back(ps, "up" + std::to_string(s), channels(s + 1), channels(s), kd);
      dec_.emplace_back(ps, "dec" + std::to_string(s), 2 * channels(s), channels(s), k, c.use_norm);
    }
    head_.emplace(ps, "head", c.base_channels, io);
    init_params(ps, seed);
  }

  Tensor5<T> forward(const Tensor5<T>& x) override {
    this->check_input(x);
    const int n = this->config_.n_scales;
    in_shape_ = x.shape;
    Tensor5<T> h = planar_ ? to_planar(x) : x;
    std::vector<Tensor5<T>> skips(n - 1);
    for (int s = 0; s < n - 1; ++s) {
      skips[s] = enc_[s].forward(h);
      h = pool_[s].forward(skips[s]);
    }
    h = enc_[n - 1].forward(h);
    skip_channels_.assign(n - 1, 0);
    for (int i = 0; i < n - 1; ++i) {
      const int s = n - 2 - i;
      h = up_[i].forward(h);
      skip_channels_[s] = skips[s].channels();
      h = dec_[i].forward(concat_channels(skips[s], h));
    }
    h = head_->forward(h);
    if (planar_) h.shape = in_shape_;
    return h;
  }

  Tensor5<T> backward(const Tensor5<T>& g) override {
    const int n = this->config_.n_scales;
    Tensor5<T> gh = head_->backward(planar_ ? to_planar(g) : g);
    std::vector<Tensor5<T>> gskip(n - 1);
    for (int i = n - 2; i >= 0; --i) {
      const int s = n - 2 - i;
      auto [gs, gu] = split_channels(dec_[i].backward(gh), skip_channels_[s]);
      gskip[s] = std::move(gs);
      gh = up_[i].backward(gu);
    }
    gh = enc_[n - 1].backward(gh);
    for (int s = n - 2; s >= 0; --s) {
      gh = pool_[s].backward(gh);
      add_inplace(gh, gskip[s]);
      gh = enc_[s].backward(gh);
    }
    if (planar_) gh.shape = in_shape_;
    return gh;
  }

 private:
  // (b, 1, D, H, W) -> (b, D, 1, H, W); the flat layout is unchanged.
  static Tensor5<T> to_planar(const Tensor5<T>& x) {
    Tensor5<T> y = x;
    y.shape = {x.shape[0], x.shape[2], 1, x.shape[3], x.shape[4]};
    return y;
  }

  bool planar_;
  std::vector<DoubleConv<T>> enc_;
  std::vector<MaxPool<T>> pool_;
  std::vector<UpConv<T>> up_;
  std::vector<DoubleConv<T>> dec_;
  std::optional<PointwiseConv<T>> head_;
  Shape5 in_shape_{};
  std::vector<int> skip_channels_;
};

}  // namespace

template <class T>
std::unique_ptr<Network<T>> build_network(const NetConfig& config, std::uint64_t seed) {
  validate_config(config);
  if (config.arch == Arch::MedNeXt3D) return std::make_unique<MedNeXt<T>>(config, seed);
  return std::make_unique<UNet<T>>(config, seed);
}

template class Network<float>;
template class Network<double>;
template std::unique_ptr<Network<float>> build_network(const NetConfig&, std::uint64_t);
template std::unique_ptr<Network<double>> build_network(const NetConfig&, std::uint64_t);
template void init_params(ParamSet<float>&, std::uint64_t);
template void init_params(ParamSet<double>&, std::uint64_t);

}  // namespace vmatflux::nn
