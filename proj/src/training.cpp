#include "hvsmark/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "hvsmark/errors.hpp"
#include "hvsmark/hashing.hpp"
#include "hvsmark/image_io.hpp"

namespace hvsmark {

namespace {

constexpr uint64_t kStreamInit = 1;
constexpr uint64_t kStreamShuffle = 2;
constexpr uint64_t kStreamNoise = 3;

uint64_t splitmix(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

at::Generator private_generator(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

}  // namespace

uint64_t derive_seed(uint64_t seed, std::initializer_list<uint64_t> path) {
  uint64_t s = splitmix(seed);
  for (auto p : path) s = splitmix(s ^ splitmix(p + 0x632be59bd9b4e019ULL));
  return s;
}

// ---------------------------------------------------------------------------
// Data

const std::vector<std::array<uint8_t, 3>>& synthetic_palette() {
  static const std::vector<std::array<uint8_t, 3>> palette{
      {38, 38, 51}, {217, 51, 51}, {51, 191, 64}, {64, 77, 217}, {230, 204, 51}, {179, 77, 204}};
  return palette;
}

namespace {

DatasetSample render_scene(int64_t size, std::mt19937_64& rng) {
  const int s = static_cast<int>(size);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> grain(0.0, 0.03);
  std::normal_distribution<double> tint(0.0, 0.1);

  // Textured background: flat base color, one oriented sinusoid, grain.
  const std::array<double, 3> base{uniform(0.2, 0.6), uniform(0.2, 0.6), uniform(0.2, 0.6)};
  const double fx = uniform(1.0, 6.0);
  const double fy = uniform(1.0, 6.0);
  cv::Mat img(s, s, CV_64FC3);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double wave = 0.1 * std::sin(2.0 * M_PI * (fx * x / s + fy * y / s));
      auto& px = img.at<cv::Vec3d>(y, x);
      for (int c = 0; c < 3; ++c) px[c] = base[c] + wave + grain(rng);
    }
  }

  cv::Mat labels = cv::Mat::zeros(s, s, CV_8UC1);
  const auto& palette = synthetic_palette();
  const int shapes = std::uniform_int_distribution<int>(2, 4)(rng);
  for (int k = 0; k < shapes; ++k) {
    const int cls = std::uniform_int_distribution<int>(1, static_cast<int>(palette.size()) - 1)(rng);
    const double cx = uniform(0.15, 0.85) * s;
    const double cy = uniform(0.15, 0.85) * s;
    const double r = uniform(0.08, 0.25) * s;
    const bool ellipse = unit(rng) < 0.5;
    cv::Mat mask = cv::Mat::zeros(s, s, CV_8UC1);
    if (ellipse) {
      cv::ellipse(mask, cv::Point(static_cast<int>(cx), static_cast<int>(cy)),
                  cv::Size(static_cast<int>(r), static_cast<int>(r)), 0, 0, 360, 255, cv::FILLED);
    } else {
      cv::rectangle(mask, cv::Point(static_cast<int>(cx - r), static_cast<int>(cy - 0.7 * r)),
                    cv::Point(static_cast<int>(cx + r), static_cast<int>(cy + 0.7 * r)), 255, cv::FILLED);
    }
    std::array<double, 3> color{};
    for (int c = 0; c < 3; ++c) color[c] = std::clamp(palette[cls][c] / 255.0 + tint(rng), 0.0, 1.0);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        if (!mask.at<uint8_t>(y, x)) continue;
        auto& px = img.at<cv::Vec3d>(y, x);
        for (int c = 0; c < 3; ++c) px[c] = 0.8 * color[c] + 0.2 * px[c];
        labels.at<uint8_t>(y, x) = static_cast<uint8_t>(cls);
      }
    }
  }

  auto input = torch::empty({3, size, size}, torch::kFloat64);
  auto target = torch::empty({3, size, size}, torch::kFloat64);
  auto in = input.accessor<double, 3>();
  auto tg = target.accessor<double, 3>();
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const auto& px = img.at<cv::Vec3d>(y, x);
      const auto& col = palette[labels.at<uint8_t>(y, x)];
      for (int c = 0; c < 3; ++c) {
        in[c][y][x] = to_u8(std::clamp(px[c], 0.0, 1.0)) / 255.0;
        tg[c][y][x] = col[c] / 255.0;
      }
    }
  }
  return {ImageTensor(input, ValueRange::Unit), ImageTensor(target, ValueRange::Unit)};
}

torch::Tensor stack(const std::vector<DatasetSample>& data, bool targets) {
  if (data.empty()) throw DataError("dataset is empty");
  std::vector<torch::Tensor> parts;
  parts.reserve(data.size());
  for (const auto& s : data) parts.push_back((targets ? s.target : s.input).data().to(torch::kFloat32));
  return torch::stack(parts);
}

std::string index_name(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.png", i);
  return buf;
}

}  // namespace

std::vector<DatasetSample> make_synthetic_dataset(int64_t n, int64_t size, uint64_t seed) {
  if (n < 1) throw InvalidArgument("dataset size must be >= 1");
  if (size < 8) throw InvalidShape("image size must be >= 8");
  std::mt19937_64 rng(seed);
  std::vector<DatasetSample> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out.push_back(render_scene(size, rng));
  return out;
}

torch::Tensor stack_inputs(const std::vector<DatasetSample>& data) { return stack(data, false); }
torch::Tensor stack_targets(const std::vector<DatasetSample>& data) { return stack(data, true); }

std::string dataset_hash(const std::vector<DatasetSample>& data) {
  Sha256 h;
  for (const auto& s : data) {
    h.update(s.input.data());
    h.update(s.target.data());
  }
  return h.hex();
}

void save_dataset(const std::vector<DatasetSample>& data, const std::filesystem::path& dir,
                  const nlohmann::json& meta) {
  if (data.empty()) throw DataError("refusing to save an empty dataset");
  std::filesystem::create_directories(dir / "input");
  std::filesystem::create_directories(dir / "target");
  for (size_t i = 0; i < data.size(); ++i) {
    save_png(data[i].input, dir / "input" / index_name(i));
    save_png(data[i].target, dir / "target" / index_name(i));
  }
  nlohmann::json m = meta;
  m["count"] = data.size();
  m["size"] = data.front().input.height();
  m["hash"] = dataset_hash(data);
  std::ofstream(dir / "dataset.json") << m.dump(2) << "\n";
}

std::vector<DatasetSample> load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "dataset.json");
  if (!is) throw DataError("no dataset.json in " + dir.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("unreadable dataset.json: " + std::string(e.what()));
  }
  const auto count = meta.value("count", size_t{0});
  if (count == 0) throw DataError("dataset manifest lists no samples");
  std::vector<DatasetSample> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    auto input = load_png(dir / "input" / index_name(i));
    auto target = load_png(dir / "target" / index_name(i));
    if (!input.data().sizes().equals(target.data().sizes())) {
      throw DataError("input/target shape mismatch at sample " + std::to_string(i));
    }
    out.push_back({std::move(input), std::move(target)});
  }
  if (meta.contains("hash") && meta["hash"].get<std::string>() != dataset_hash(out)) {
    throw DataError("dataset contents do not match the manifest hash");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::finalize() {
  generator.height = generator.width = image_size;
  extractor.height = extractor.width = image_size;
  extractor.in_channels = loss.framework == Framework::Direct ? 3 : 1;
  extractor.out_channels = 3;
  validate();
}

void TrainConfig::validate() const {
  loss.validate();
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (phase1_epochs < 0 || phase2_epochs < 0) throw ConfigError("epoch counts must be >= 0");
  if (!(sigma_max > 0.0) || sigma_max > 1.0) throw ConfigError("sigma_max must be in (0, 1]");
  if (adversarial_weight < 0.0) throw ConfigError("adversarial_weight must be >= 0");
  if (image_size % (int64_t{1} << generator.depth) != 0) {
    throw ConfigError("image_size must be divisible by 2^depth");
  }
  if (first_carrier && loss.framework == Framework::Direct) {
    throw ConfigError("a carrier override needs a single-channel framework");
  }
  generator.validate();
  extractor.validate();
  discriminator.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"loss", c.loss},
       {"lr", c.lr},
       {"batch_size", c.batch_size},
       {"phase1_epochs", c.phase1_epochs},
       {"phase2_epochs", c.phase2_epochs},
       {"robust", c.robust},
       {"sigma_max", c.sigma_max},
       {"seed", c.seed},
       {"image_size", c.image_size},
       {"generator", c.generator},
       {"extractor", c.extractor},
       {"discriminator", c.discriminator},
       {"adversarial_weight", c.adversarial_weight},
       {"first_carrier", c.first_carrier ? nlohmann::json(to_string(*c.first_carrier)) : nlohmann::json()}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("loss").get_to(c.loss);
  j.at("lr").get_to(c.lr);
  j.at("batch_size").get_to(c.batch_size);
  j.at("phase1_epochs").get_to(c.phase1_epochs);
  j.at("phase2_epochs").get_to(c.phase2_epochs);
  j.at("robust").get_to(c.robust);
  j.at("sigma_max").get_to(c.sigma_max);
  j.at("seed").get_to(c.seed);
  j.at("image_size").get_to(c.image_size);
  j.at("generator").get_to(c.generator);
  j.at("extractor").get_to(c.extractor);
  j.at("discriminator").get_to(c.discriminator);
  j.at("adversarial_weight").get_to(c.adversarial_weight);
  const auto& fc = j.at("first_carrier");
  c.first_carrier = fc.is_null() ? std::nullopt : std::optional<Channel>(channel_from_string(fc.get<std::string>()));
}

std::string config_hash(const TrainConfig& c) { return sha256_hex(nlohmann::json(c).dump()); }

bool TrainState::phase_complete() const {
  return epoch >= (phase == 1 ? cfg.phase1_epochs : cfg.phase2_epochs);
}

TrainState make_state(TrainConfig cfg) {
  cfg.finalize();
  TrainState st;
  st.cfg = cfg;
  st.g = build_generator(cfg.generator, derive_seed(cfg.seed, {kStreamInit, 0}));
  st.e = build_extractor(cfg.extractor, derive_seed(cfg.seed, {kStreamInit, 1}));
  std::vector<torch::Tensor> params = st.g->parameters();
  for (auto& p : st.e->parameters()) params.push_back(p);
  st.opt = std::make_unique<torch::optim::Adam>(params, torch::optim::AdamOptions(cfg.lr));
  if (cfg.discriminator.enabled) {
    st.d = build_discriminator(cfg.discriminator, derive_seed(cfg.seed, {kStreamInit, 2}));
    st.opt_d = std::make_unique<torch::optim::Adam>(st.d->parameters(), torch::optim::AdamOptions(cfg.lr));
  }
  return st;
}

// ---------------------------------------------------------------------------
// Stepping

std::pair<torch::Tensor, torch::Tensor> extractor_planes(const TrainConfig& cfg, const torch::Tensor& images) {
  if (cfg.loss.framework == Framework::Direct) return {images, torch::Tensor()};
  const auto carriers = carriers_for(cfg.loss.framework);
  const Channel first = cfg.first_carrier.value_or(carriers.first);
  return {imaging::channel(images, first), imaging::channel(images, carriers.second)};
}

StepResult training_step(TrainState& st, const torch::Tensor& x, const torch::Tensor& y,
                         const WatermarkSet& wm, const torch::Tensor& s0_in) {
  const auto& cfg = st.cfg;
  const bool single = cfg.loss.framework == Framework::Direct;
  const auto s0 = s0_in.defined() ? s0_in : y;
  st.g->train();
  st.e->train();

  StepResult r;
  r.generated = st.g->forward(x);
  r.task_image = r.generated;
  r.extractor_input = r.generated;
  if (cfg.robust && st.phase == 2) {
    auto gen = private_generator(derive_seed(cfg.seed, {kStreamNoise, static_cast<uint64_t>(st.global_step)}));
    const int64_t n = r.generated.size(0);
    auto sig = torch::rand({n, 1, 1, 1}, gen, r.generated.options()) * cfg.sigma_max;
    auto noise = torch::randn(r.generated.sizes(), gen, r.generated.options());
    r.extractor_input = (r.generated + noise * sig).clamp(0.0, 1.0);
    auto sd = sig.to(torch::kFloat64).flatten();
    r.sigmas.assign(sd.data_ptr<double>(), sd.data_ptr<double>() + n);
  }

  BatchContext ctx;
  ctx.generated = r.task_image;
  ctx.targets = y;
  ctx.w1 = wm.w1.data().to(torch::kFloat32);
  ctx.w2 = wm.w2.data().to(torch::kFloat32);
  ctx.wz = wm.wz.data().to(torch::kFloat32);
  ctx.first_carrier = cfg.first_carrier;

  auto [p1, p2] = extractor_planes(cfg, r.extractor_input);
  if (st.phase == 1) {
    ctx.extracted_first = st.e->forward(p1);
    r.loss = phase1_loss(ctx, cfg.loss);
  } else {
    auto [q1, q2] = extractor_planes(cfg, s0);
    std::vector<torch::Tensor> marked{p1};
    std::vector<torch::Tensor> unmarked{q1};
    if (!single) {
      marked.push_back(p2);
      unmarked.push_back(q2);
    }
    const int64_t n = p1.size(0);
    std::vector<torch::Tensor> outs;
    if (cfg.loss.beta > 0.0) {
      std::vector<torch::Tensor> all = marked;
      all.insert(all.end(), unmarked.begin(), unmarked.end());
      outs = st.e->forward(torch::cat(all)).split(n);
    } else {
      outs = st.e->forward(torch::cat(marked)).split(n);
      torch::NoGradGuard no_grad;
      auto rest = st.e->forward(torch::cat(unmarked)).split(n);
      outs.insert(outs.end(), rest.begin(), rest.end());
    }
    ctx.extracted_first = outs[0];
    if (single) {
      ctx.s0_first = outs[1];
    } else {
      ctx.extracted_second = outs[1];
      ctx.s0_first = outs[2];
      ctx.s0_second = outs[3];
    }
    r.loss = combined_loss(ctx, cfg.loss);
  }

  if (st.d) {
    auto logits = st.d->forward(r.task_image);
    auto adv = torch::binary_cross_entropy_with_logits(logits, torch::ones_like(logits));
    r.loss.terms["adv"] = adv;
    r.loss.total = r.loss.total + cfg.adversarial_weight * adv;
  }

  if (!std::isfinite(r.loss.total.item<double>())) {
    throw DivergenceError("non-finite training loss at step " + std::to_string(st.global_step));
  }
  st.opt->zero_grad();
  r.loss.total.backward();
  st.opt->step();

  if (st.d) {
    st.opt_d->zero_grad();
    auto real = st.d->forward(y);
    auto fake = st.d->forward(r.task_image.detach());
    auto d_loss = 0.5 * (torch::binary_cross_entropy_with_logits(real, torch::ones_like(real)) +
                         torch::binary_cross_entropy_with_logits(fake, torch::zeros_like(fake)));
    if (!std::isfinite(d_loss.item<double>())) {
      throw DivergenceError("non-finite discriminator loss at step " + std::to_string(st.global_step));
    }
    d_loss.backward();
    st.opt_d->step();
  }
  ++st.global_step;
  return r;
}

std::vector<int64_t> epoch_order(const TrainConfig& cfg, int phase, int64_t epoch, int64_t n) {
  auto gen = private_generator(
      derive_seed(cfg.seed, {kStreamShuffle, static_cast<uint64_t>(phase), static_cast<uint64_t>(epoch)}));
  auto perm = torch::randperm(n, gen, torch::TensorOptions().dtype(torch::kInt64));
  return {perm.data_ptr<int64_t>(), perm.data_ptr<int64_t>() + n};
}

std::vector<StepRecord> run_phase(TrainState& st, const std::vector<DatasetSample>& data,
                                  const WatermarkSet& wm, const RunOptions& opts) {
  if (data.empty()) throw DataError("training set is empty");
  const auto xs = stack_inputs(data);
  const auto ys = stack_targets(data);
  const int64_t n = xs.size(0);
  if (xs.size(2) != st.cfg.image_size || xs.size(3) != st.cfg.image_size) {
    throw DataError("training images are " + std::to_string(xs.size(2)) + "x" + std::to_string(xs.size(3)) +
                    ", configuration expects " + std::to_string(st.cfg.image_size));
  }
  const int64_t bs = st.cfg.batch_size;
  const int64_t batches = (n + bs - 1) / bs;
  const int64_t epochs = st.phase == 1 ? st.cfg.phase1_epochs : st.cfg.phase2_epochs;

  std::vector<StepRecord> records;
  int64_t taken = 0;
  while (st.epoch < epochs) {
    const auto order = epoch_order(st.cfg, st.phase, st.epoch, n);
    while (st.batch < batches) {
      if (opts.stop_after_steps > 0 && taken >= opts.stop_after_steps) return records;
      const int64_t lo = st.batch * bs;
      const int64_t hi = std::min(n, lo + bs);
      auto idx = torch::tensor(std::vector<int64_t>(order.begin() + lo, order.begin() + hi));
      StepRecord rec{st.phase, st.epoch, st.batch, st.global_step, {}};
      auto res = training_step(st, xs.index_select(0, idx), ys.index_select(0, idx), wm);
      rec.loss = res.loss.breakdown();
      records.push_back(rec);
      if (opts.on_step) opts.on_step(rec);
      ++st.batch;
      ++taken;
    }
    ++st.epoch;
    st.batch = 0;
  }
  return records;
}

std::vector<StepRecord> train_phase1(TrainState& st, const std::vector<DatasetSample>& data,
                                     const WatermarkSet& wm, const RunOptions& opts) {
  if (st.phase != 1) throw ConfigError("phase 1 already completed for this state");
  auto records = run_phase(st, data, wm, opts);
  if (st.phase_complete()) {
    st.phase = 2;
    st.epoch = 0;
    st.batch = 0;
  }
  return records;
}

std::vector<StepRecord> train_phase2(TrainState& st, const std::vector<DatasetSample>& data,
                                     const WatermarkSet& wm, const TrainConfig& cfg_in,
                                     const RunOptions& opts) {
  TrainConfig cfg = cfg_in;
  cfg.finalize();
  if (cfg.loss.framework != st.cfg.loss.framework) {
    throw ConfigError("state was trained under " + std::string(to_string(st.cfg.loss.framework)) +
                      ", phase 2 requested " + std::string(to_string(cfg.loss.framework)));
  }
  if (nlohmann::json(cfg.generator) != nlohmann::json(st.cfg.generator) ||
      nlohmann::json(cfg.extractor) != nlohmann::json(st.cfg.extractor) ||
      nlohmann::json(cfg.discriminator) != nlohmann::json(st.cfg.discriminator)) {
    throw ConfigError("phase 2 configuration changes the network architecture");
  }
  if (st.phase != 2) throw ConfigError("phase 2 needs a state that completed phase 1");
  st.cfg = cfg;
  for (auto& group : st.opt->param_groups()) group.options().set_lr(cfg.lr);
  if (st.opt_d) {
    for (auto& group : st.opt_d->param_groups()) group.options().set_lr(cfg.lr);
  }
  return run_phase(st, data, wm, opts);
}

namespace {

std::vector<std::string> csv_terms(const TrainConfig& cfg) {
  auto names = objective_terms(cfg.loss.framework);
  if (cfg.discriminator.enabled) names.push_back("adv");
  return names;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string step_csv_header(const TrainConfig& cfg) {
  std::string out = "phase,epoch,batch,step";
  for (const auto& t : csv_terms(cfg)) out += "," + t;
  return out + ",total";
}

std::string step_csv_row(const TrainConfig& cfg, const StepRecord& r) {
  std::string out = std::to_string(r.phase) + "," + std::to_string(r.epoch) + "," + std::to_string(r.batch) +
                    "," + std::to_string(r.global_step);
  for (const auto& t : csv_terms(cfg)) {
    out += ",";
    auto it = r.loss.terms.find(t);
    if (it != r.loss.terms.end()) out += fmt(it->second);
  }
  return out + "," + fmt(r.loss.total);
}

// ---------------------------------------------------------------------------
// Inference

torch::Tensor generate(TrainState& st, const torch::Tensor& x) {
  torch::NoGradGuard no_grad;
  st.g->eval();
  return st.g->forward(x.to(torch::kFloat32));
}

std::pair<torch::Tensor, torch::Tensor> extract(TrainState& st, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  st.e->eval();
  auto [p1, p2] = extractor_planes(st.cfg, images.to(torch::kFloat32));
  auto first = st.e->forward(p1);
  auto second = p2.defined() ? st.e->forward(p2) : first;
  return {first, second};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'H', 'V', 'S', 'M', 'C', 'K', 'P', 'T'};
constexpr size_t kDigestLen = 64;

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(const std::string& in, size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof v);
  pos += sizeof v;
  return v;
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "Float") return torch::kFloat32;
  if (s == "Double") return torch::kFloat64;
  if (s == "Long") return torch::kInt64;
  throw CheckpointError("unsupported tensor dtype '" + s + "' in checkpoint");
}

struct TensorTable {
  std::vector<std::pair<std::string, torch::Tensor>> entries;
  void add(std::string name, const torch::Tensor& t) {
    entries.emplace_back(std::move(name), t.detach().contiguous().cpu());
  }
};

void add_module(TensorTable& table, const std::string& prefix, const torch::nn::Module& m) {
  for (const auto& p : m.named_parameters()) table.add(prefix + p.key(), p.value());
  for (const auto& b : m.named_buffers()) table.add(prefix + b.key(), b.value());
}

void add_adam(TensorTable& table, nlohmann::json& steps, const std::string& prefix, torch::optim::Adam& opt) {
  const auto& params = opt.param_groups().at(0).params();
  auto& state = opt.state();
  for (size_t i = 0; i < params.size(); ++i) {
    auto it = state.find(params[i].unsafeGetTensorImpl());
    if (it == state.end()) continue;
    auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
    const auto key = prefix + std::to_string(i);
    steps[key] = s.step();
    table.add(key + "/exp_avg", s.exp_avg());
    table.add(key + "/exp_avg_sq", s.exp_avg_sq());
  }
}

void restore_adam(const std::map<std::string, torch::Tensor>& tensors, const nlohmann::json& steps,
                  const std::string& prefix, torch::optim::Adam& opt) {
  const auto& params = opt.param_groups().at(0).params();
  auto& state = opt.state();
  state.clear();
  for (size_t i = 0; i < params.size(); ++i) {
    const auto key = prefix + std::to_string(i);
    if (!steps.contains(key)) continue;
    auto avg = tensors.find(key + "/exp_avg");
    auto sq = tensors.find(key + "/exp_avg_sq");
    if (avg == tensors.end() || sq == tensors.end()) throw CheckpointError("optimizer moments missing for " + key);
    if (!avg->second.sizes().equals(params[i].sizes())) throw CheckpointError("optimizer moment shape mismatch");
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(steps[key].get<int64_t>());
    s->exp_avg(avg->second.clone());
    s->exp_avg_sq(sq->second.clone());
    state[params[i].unsafeGetTensorImpl()] = std::move(s);
  }
}

void restore_module(const std::map<std::string, torch::Tensor>& tensors, const std::string& prefix,
                    torch::nn::Module& m) {
  torch::NoGradGuard no_grad;
  auto copy = [&](const std::string& name, torch::Tensor& dst) {
    auto it = tensors.find(prefix + name);
    if (it == tensors.end()) throw CheckpointError("checkpoint lacks tensor " + prefix + name);
    if (!it->second.sizes().equals(dst.sizes())) throw CheckpointError("shape mismatch for " + prefix + name);
    dst.copy_(it->second);
  };
  for (auto& p : m.named_parameters()) copy(p.key(), p.value());
  for (auto& b : m.named_buffers()) copy(b.key(), b.value());
}

}  // namespace

std::string serialize_checkpoint(const TrainState& st, const WatermarkSet& wm) {
  TensorTable table;
  nlohmann::json steps = nlohmann::json::object();
  add_module(table, "g/", *st.g);
  add_module(table, "e/", *st.e);
  if (st.d) add_module(table, "d/", *st.d);
  table.add("wm/w1", wm.w1.data());
  table.add("wm/w2", wm.w2.data());
  table.add("wm/wz", wm.wz.data());
  add_adam(table, steps, "opt/", *st.opt);
  if (st.opt_d) add_adam(table, steps, "opt_d/", *st.opt_d);

  nlohmann::json header = {{"config", st.cfg},
                           {"phase", st.phase},
                           {"epoch", st.epoch},
                           {"batch", st.batch},
                           {"global_step", st.global_step},
                           {"wz_seed", wm.wz_seed},
                           {"adam_steps", steps}};
  std::string payload;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, t] : table.entries) {
    const auto nbytes = static_cast<size_t>(t.numel()) * t.element_size();
    index.push_back({{"name", name}, {"dtype", std::string(c10::toString(t.scalar_type()))},
                     {"shape", t.sizes().vec()}, {"offset", payload.size()}, {"nbytes", nbytes}});
    payload.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  header["tensors"] = index;
  const auto header_text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put<uint32_t>(out, kCheckpointVersion);
  put<uint64_t>(out, header_text.size());
  out += header_text;
  put<uint64_t>(out, payload.size());
  out += payload;
  out += sha256_hex(out);
  return out;
}

void save_checkpoint(const TrainState& st, const WatermarkSet& wm, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(st, wm);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + path.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("short write on checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Restored deserialize_checkpoint(const std::string& bytes, std::optional<Framework> expected) {
  if (bytes.size() < sizeof kMagic + 4 + kDigestLen || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("not a checkpoint archive");
  }
  size_t pos = sizeof kMagic;
  const auto version = get<uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::string body = bytes.substr(0, bytes.size() - kDigestLen);
  if (sha256_hex(body) != bytes.substr(bytes.size() - kDigestLen)) {
    throw CheckpointError("checkpoint digest mismatch (corrupt archive)");
  }

  const auto header_len = get<uint64_t>(body, pos);
  if (pos + header_len > body.size()) throw CheckpointError("checkpoint header truncated");
  nlohmann::json header;
  TrainConfig cfg;
  try {
    header = nlohmann::json::parse(body.substr(pos, header_len));
    cfg = header.at("config").get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint header unreadable: " + std::string(e.what()));
  }
  pos += header_len;
  const auto payload_len = get<uint64_t>(body, pos);
  if (pos + payload_len != body.size()) throw CheckpointError("checkpoint payload length mismatch");
  const size_t base = pos;

  if (expected && *expected != cfg.loss.framework) {
    throw ConfigError("checkpoint holds a " + std::string(to_string(cfg.loss.framework)) +
                      " model, expected " + std::string(to_string(*expected)));
  }

  std::map<std::string, torch::Tensor> tensors;
  for (const auto& entry : header.at("tensors")) {
    const auto offset = entry.at("offset").get<size_t>();
    const auto nbytes = entry.at("nbytes").get<size_t>();
    if (offset + nbytes > payload_len) throw CheckpointError("tensor extends past payload");
    auto t = torch::empty(entry.at("shape").get<std::vector<int64_t>>(),
                          torch::TensorOptions().dtype(dtype_from(entry.at("dtype").get<std::string>())));
    if (static_cast<size_t>(t.numel()) * t.element_size() != nbytes) throw CheckpointError("tensor size mismatch");
    std::memcpy(t.data_ptr(), body.data() + base + offset, nbytes);
    tensors.emplace(entry.at("name").get<std::string>(), t);
  }

  TrainState st = make_state(cfg);
  restore_module(tensors, "g/", *st.g);
  restore_module(tensors, "e/", *st.e);
  if (st.d) restore_module(tensors, "d/", *st.d);
  restore_adam(tensors, header.at("adam_steps"), "opt/", *st.opt);
  if (st.opt_d) restore_adam(tensors, header.at("adam_steps"), "opt_d/", *st.opt_d);
  st.phase = header.at("phase").get<int>();
  st.epoch = header.at("epoch").get<int64_t>();
  st.batch = header.at("batch").get<int64_t>();
  st.global_step = header.at("global_step").get<int64_t>();

  auto wm_tensor = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint lacks watermark " + name);
    return ImageTensor(it->second, ValueRange::Signed);
  };
  WatermarkSet wm{wm_tensor("wm/w1"), wm_tensor("wm/w2"), wm_tensor("wm/wz"),
                  header.at("wz_seed").get<uint64_t>(), {}, {}, {}};
  refresh_hashes(wm);
  return Restored{std::move(st), std::move(wm)};
}

Restored load_checkpoint(const std::filesystem::path& path, std::optional<Framework> expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize_checkpoint(ss.str(), expected);
}

Restored clone_state(const TrainState& st, const WatermarkSet& wm) {
  return deserialize_checkpoint(serialize_checkpoint(st, wm));
}

}  // namespace hvsmark
