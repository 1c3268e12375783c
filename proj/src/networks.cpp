#include "hvsmark/networks.hpp"

#include <cmath>
#include <mutex>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

#include "hvsmark/errors.hpp"

namespace hvsmark {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride, int64_t pad) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
}

int64_t layers_for_field(int64_t patch_field) {
  switch (patch_field) {
    case 16: return 1;
    case 34: return 2;
    case 70: return 3;
    default: break;
  }
  throw ConfigError("unsupported discriminator patch_field " + std::to_string(patch_field) +
                    " (expected 16, 34 or 70)");
}

// Module constructors run torch's default initialisation, which draws from
// the global generator. Restores its state so building a network leaves the
// global stream untouched.
class GlobalRngGuard {
 public:
  GlobalRngGuard() : gen_(at::detail::getDefaultCPUGenerator()) {
    std::lock_guard<std::mutex> lock(gen_.mutex());
    state_ = gen_.get_state();
  }
  ~GlobalRngGuard() {
    std::lock_guard<std::mutex> lock(gen_.mutex());
    gen_.set_state(state_);
  }

 private:
  at::Generator gen_;
  at::Tensor state_;
};

}  // namespace

void GeneratorSpec::validate() const {
  if (channels != 3) throw ConfigError("generator operates on 3-channel images");
  if (depth < 1 || base_width < 1) throw ConfigError("generator depth and base_width must be positive");
  const int64_t step = int64_t{1} << depth;
  if (height < 8 || width < 8 || height % step != 0 || width % step != 0) {
    std::ostringstream os;
    os << "generator input " << height << "x" << width << " must be >= 8 and divisible by 2^"
       << depth;
    throw InvalidShape(os.str());
  }
}

void ExtractorSpec::validate() const {
  if (height < 1 || width < 1) throw InvalidShape("extractor spatial size must be positive");
  if (in_channels < 1 || out_channels < 1) throw ConfigError("extractor channel counts must be positive");
  for (auto w : hidden_widths) {
    if (w < 1) throw ConfigError("extractor hidden widths must be positive");
  }
}

std::vector<int64_t> full_extractor_widths() { return {32, 64, 128, 64, 32}; }

void DiscriminatorSpec::validate() const {
  layers_for_field(patch_field);
  if (in_channels < 1 || base_width < 1) throw ConfigError("bad discriminator widths");
}

void to_json(nlohmann::json& j, const GeneratorSpec& s) {
  j = {{"height", s.height}, {"width", s.width}, {"channels", s.channels},
       {"depth", s.depth}, {"base_width", s.base_width}};
}
void from_json(const nlohmann::json& j, GeneratorSpec& s) {
  j.at("height").get_to(s.height);
  j.at("width").get_to(s.width);
  j.at("channels").get_to(s.channels);
  j.at("depth").get_to(s.depth);
  j.at("base_width").get_to(s.base_width);
}
void to_json(nlohmann::json& j, const ExtractorSpec& s) {
  j = {{"height", s.height}, {"width", s.width}, {"in_channels", s.in_channels},
       {"out_channels", s.out_channels}, {"hidden_widths", s.hidden_widths}};
}
void from_json(const nlohmann::json& j, ExtractorSpec& s) {
  j.at("height").get_to(s.height);
  j.at("width").get_to(s.width);
  j.at("in_channels").get_to(s.in_channels);
  j.at("out_channels").get_to(s.out_channels);
  j.at("hidden_widths").get_to(s.hidden_widths);
}
void to_json(nlohmann::json& j, const DiscriminatorSpec& s) {
  j = {{"patch_field", s.patch_field}, {"enabled", s.enabled},
       {"in_channels", s.in_channels}, {"base_width", s.base_width}};
}
void from_json(const nlohmann::json& j, DiscriminatorSpec& s) {
  j.at("patch_field").get_to(s.patch_field);
  j.at("enabled").get_to(s.enabled);
  j.at("in_channels").get_to(s.in_channels);
  j.at("base_width").get_to(s.base_width);
}

// ---------------------------------------------------------------------------

GeneratorImpl::GeneratorImpl(const GeneratorSpec& spec) : spec_(spec) {
  spec_.validate();
  std::vector<int64_t> widths;
  for (int64_t i = 0; i <= spec_.depth; ++i) widths.push_back(spec_.base_width << i);

  stem_ = register_module("stem", nn::Sequential(conv(spec_.channels, widths[0], 3, 1, 1),
                                                 nn::ReLU()));
  down_ = register_module("down", nn::ModuleList());
  up_ = register_module("up", nn::ModuleList());
  fuse_ = register_module("fuse", nn::ModuleList());
  for (int64_t i = 0; i < spec_.depth; ++i) {
    down_->push_back(nn::Sequential(conv(widths[i], widths[i + 1], 4, 2, 1), nn::ReLU(),
                                    conv(widths[i + 1], widths[i + 1], 3, 1, 1), nn::ReLU()));
  }
  for (int64_t i = spec_.depth - 1; i >= 0; --i) {
    up_->push_back(nn::Sequential(
        nn::ConvTranspose2d(nn::ConvTranspose2dOptions(widths[i + 1], widths[i], 4).stride(2).padding(1)),
        nn::ReLU()));
    fuse_->push_back(nn::Sequential(conv(2 * widths[i], widths[i], 3, 1, 1), nn::ReLU()));
  }
  head_ = register_module("head", conv(widths[0], spec_.channels, 1, 1, 0));
  output_bias_ = register_parameter("output_bias",
                                    torch::zeros({1, spec_.channels, spec_.height, spec_.width}));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != spec_.channels || x.size(2) != spec_.height ||
      x.size(3) != spec_.width) {
    std::ostringstream os;
    os << "generator expects [N, " << spec_.channels << ", " << spec_.height << ", "
       << spec_.width << "], got " << x.sizes();
    throw InvalidShape(os.str());
  }
  auto h = stem_->forward(x);
  std::vector<torch::Tensor> skips{h};
  for (const auto& d : *down_) {
    h = d->as<nn::Sequential>()->forward(h);
    skips.push_back(h);
  }
  skips.pop_back();
  for (size_t i = 0; i < up_->size(); ++i) {
    h = up_[i]->as<nn::Sequential>()->forward(h);
    h = fuse_[i]->as<nn::Sequential>()->forward(torch::cat({h, skips.back()}, 1));
    skips.pop_back();
  }
  return torch::sigmoid(head_->forward(h) + output_bias_);
}

ExtractorImpl::ExtractorImpl(const ExtractorSpec& spec) : spec_(spec) {
  spec_.validate();
  nn::Sequential body;
  int64_t in = spec_.in_channels;
  for (auto w : spec_.hidden_widths) {
    body->push_back(conv(in, w, 3, 1, 1));
    body->push_back(nn::ReLU());
    in = w;
  }
  body->push_back(conv(in, spec_.out_channels, 3, 1, 1));
  body->push_back(nn::Tanh());
  body_ = register_module("body", body);
}

torch::Tensor ExtractorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != spec_.in_channels) {
    std::ostringstream os;
    os << "extractor expects [N, " << spec_.in_channels << ", H, W], got " << x.sizes();
    throw InvalidShape(os.str());
  }
  return body_->forward(x);
}

std::vector<ConvGeometry> discriminator_geometry(const DiscriminatorSpec& spec) {
  const int64_t n = layers_for_field(spec.patch_field);
  std::vector<ConvGeometry> g(static_cast<size_t>(n), ConvGeometry{4, 2, 1});
  g.push_back({4, 1, 1});
  g.push_back({4, 1, 1});
  return g;
}

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorSpec& spec) : spec_(spec) {
  spec_.validate();
  const auto geometry = discriminator_geometry(spec_);
  const int64_t strided = static_cast<int64_t>(geometry.size()) - 2;
  nn::Sequential body;
  int64_t in = spec_.in_channels;
  for (int64_t i = 0; i <= strided; ++i) {
    const int64_t out = spec_.base_width * std::min<int64_t>(int64_t{1} << i, 8);
    const auto& g = geometry[static_cast<size_t>(i)];
    body->push_back(conv(in, out, g.kernel, g.stride, g.padding));
    body->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    in = out;
  }
  const auto& last = geometry.back();
  body->push_back(conv(in, 1, last.kernel, last.stride, last.padding));
  body_ = register_module("body", body);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != spec_.in_channels) {
    throw InvalidShape("discriminator expects [N, C, H, W] input");
  }
  return body_->forward(x);
}

// ---------------------------------------------------------------------------

void initialize_parameters(torch::nn::Module& module, uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto init_weight = [&gen](torch::Tensor& weight) {
    // fan_in follows the torch convention of using weight dimension 1.
    const double fan_in = static_cast<double>(weight.size(1) * weight[0][0].numel());
    // He-uniform: keeps activation and gradient scale through the ReLU stacks.
    const double bound = std::sqrt(6.0 / fan_in);
    weight.uniform_(-bound, bound, gen);
  };
  for (auto& p : module.parameters()) p.zero_();
  for (auto& m : module.modules(/*include_self=*/true)) {
    if (auto* c = m->as<nn::Conv2d>()) {
      init_weight(c->weight);
    } else if (auto* t = m->as<nn::ConvTranspose2d>()) {
      init_weight(t->weight);
    }
  }
}

Generator build_generator(const GeneratorSpec& spec, uint64_t seed) {
  GlobalRngGuard guard;
  Generator g(spec);
  initialize_parameters(*g, seed);
  return g;
}

Extractor build_extractor(const ExtractorSpec& spec, uint64_t seed) {
  GlobalRngGuard guard;
  Extractor e(spec);
  initialize_parameters(*e, seed);
  return e;
}

Discriminator build_discriminator(const DiscriminatorSpec& spec, uint64_t seed) {
  if (!spec.enabled) throw ConfigError("discriminator requested but disabled in its spec");
  GlobalRngGuard guard;
  Discriminator d(spec);
  initialize_parameters(*d, seed);
  return d;
}

std::vector<torch::Tensor> parameter_snapshot(const torch::nn::Module& module) {
  std::vector<torch::Tensor> out;
  for (const auto& p : module.parameters()) out.push_back(p.detach().clone());
  return out;
}

}  // namespace hvsmark
