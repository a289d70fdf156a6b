#include "mmalign/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mmalign::models {

namespace {

using ag::Var;
using nlohmann::json;

Tensor randn(std::vector<int> shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = std * rng.normal();
  return t;
}

void normalize_vec(Tensor& v) {
  double n = 0.0;
  for (std::int64_t i = 0; i < v.numel(); ++i) n += v[i] * v[i];
  n = std::sqrt(n);
  if (n < 1e-12) n = 1e-12;
  v.scale(1.0 / n);
}

constexpr double kLeakySlope = 0.1;
constexpr double kDiscLeakySlope = 0.2;

}  // namespace

std::int64_t count_parameters(const ParamList& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.var->value.numel();
  return n;
}

// ------------------------------------------------------------------ layers

Conv2d Conv2d::make(int cin, int cout, int k, int stride, int pad, Rng& rng, double init_std) {
  Conv2d c;
  const double std = init_std >= 0.0 ? init_std : std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
  c.w = ag::leaf(randn({cout, cin, k, k}, std, rng), true);
  c.b = ag::leaf(Tensor({cout}), true);
  c.stride = stride;
  c.pad = pad;
  return c;
}

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", w});
  out.push_back({prefix + ".b", b});
}

InstanceNorm InstanceNorm::make(int c) {
  InstanceNorm n;
  n.gain = ag::leaf(Tensor::full({c}, 1.0), true);
  n.bias = ag::leaf(Tensor({c}), true);
  return n;
}

void InstanceNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

SpectralConv2d SpectralConv2d::make(int cin, int cout, int k, int stride, int pad, Rng& rng) {
  SpectralConv2d c;
  c.w = ag::leaf(randn({cout, cin, k, k}, std::sqrt(2.0 / (static_cast<double>(cin) * k * k)), rng),
                 true);
  c.b = ag::leaf(Tensor({cout}), true);
  c.stride = stride;
  c.pad = pad;
  c.u = randn({cout}, 1.0, rng);
  normalize_vec(c.u);
  c.v = Tensor({cin * k * k});
  // Warm-up iterations so sigma estimates are accurate from the first
  // update on; afterwards one step per update tracks the slow weight drift.
  for (int i = 0; i < 15; ++i) c.power_iteration_step();
  return c;
}

namespace {

void power_iteration(const Tensor& wmat, int rows, int cols, Tensor& u, Tensor& v) {
  // v = normalize(W^T u); u = normalize(W v)
  for (int c = 0; c < cols; ++c) v[c] = 0.0;
  for (int r = 0; r < rows; ++r) {
    const double ur = u[r];
    const double* wr = wmat.data() + static_cast<std::int64_t>(r) * cols;
    for (int c = 0; c < cols; ++c) v[c] += wr[c] * ur;
  }
  normalize_vec(v);
  for (int r = 0; r < rows; ++r) {
    const double* wr = wmat.data() + static_cast<std::int64_t>(r) * cols;
    double acc = 0.0;
    for (int c = 0; c < cols; ++c) acc += wr[c] * v[c];
    u[r] = acc;
  }
  normalize_vec(u);
}

double sigma_of(const Tensor& wmat, int rows, int cols, const Tensor& u, const Tensor& v) {
  double sigma = 0.0;
  for (int r = 0; r < rows; ++r) {
    const double* wr = wmat.data() + static_cast<std::int64_t>(r) * cols;
    double acc = 0.0;
    for (int c = 0; c < cols; ++c) acc += wr[c] * v[c];
    sigma += u[r] * acc;
  }
  return sigma;
}

double fresh_sigma(const Tensor& wmat, int rows, int cols, int iters, Rng& rng) {
  Tensor u = randn({rows}, 1.0, rng);
  normalize_vec(u);
  Tensor v({cols});
  for (int i = 0; i < iters; ++i) power_iteration(wmat, rows, cols, u, v);
  return sigma_of(wmat, rows, cols, u, v);
}

}  // namespace

void SpectralConv2d::power_iteration_step() {
  const int rows = w->value.dim(0);
  const int cols = static_cast<int>(w->value.numel() / rows);
  power_iteration(w->value, rows, cols, u, v);
}

double SpectralConv2d::estimated_sigma() const {
  const int rows = w->value.dim(0);
  const int cols = static_cast<int>(w->value.numel() / rows);
  return sigma_of(w->value, rows, cols, u, v);
}

Var SpectralConv2d::normalized_weight() const {
  const int rows = w->value.dim(0);
  const int cols = static_cast<int>(w->value.numel() / rows);
  return ag::div_scalarvar(w, ag::rank1_sigma(w, u, v, rows, cols));
}

void SpectralConv2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", w});
  out.push_back({prefix + ".b", b});
}

void SpectralConv2d::collect_buffers(const std::string& prefix,
                                     std::vector<std::pair<std::string, Tensor*>>& out) {
  out.push_back({prefix + ".u", &u});
  out.push_back({prefix + ".v", &v});
}

SpectralLinear SpectralLinear::make(int in, int out, Rng& rng) {
  SpectralLinear l;
  l.w = ag::leaf(randn({out, in}, std::sqrt(2.0 / in), rng), true);
  l.b = ag::leaf(Tensor({out}), true);
  l.u = randn({out}, 1.0, rng);
  normalize_vec(l.u);
  l.v = Tensor({in});
  for (int i = 0; i < 15; ++i) l.power_iteration_step();
  return l;
}

void SpectralLinear::power_iteration_step() {
  power_iteration(w->value, w->value.dim(0), w->value.dim(1), u, v);
}

double SpectralLinear::estimated_sigma() const {
  return sigma_of(w->value, w->value.dim(0), w->value.dim(1), u, v);
}

Var SpectralLinear::normalized_weight() const {
  return ag::div_scalarvar(w, ag::rank1_sigma(w, u, v, w->value.dim(0), w->value.dim(1)));
}

void SpectralLinear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", w});
  out.push_back({prefix + ".b", b});
}

void SpectralLinear::collect_buffers(const std::string& prefix,
                                     std::vector<std::pair<std::string, Tensor*>>& out) {
  out.push_back({prefix + ".u", &u});
  out.push_back({prefix + ".v", &v});
}

// ------------------------------------------------------------------ U-Net

ConvBlock ConvBlock::make(int cin, int cout, bool norm, Rng& rng) {
  ConvBlock b;
  b.c1 = Conv2d::make(cin, cout, 3, 1, 1, rng);
  b.c2 = Conv2d::make(cout, cout, 3, 1, 1, rng);
  b.use_norm = norm;
  if (norm) {
    b.n1 = InstanceNorm::make(cout);
    b.n2 = InstanceNorm::make(cout);
  }
  return b;
}

Var ConvBlock::forward(const Var& x) const {
  Var h = c1.forward(x);
  if (use_norm) h = n1.forward(h);
  h = ag::leaky_relu(h, kLeakySlope);
  h = c2.forward(h);
  if (use_norm) h = n2.forward(h);
  return ag::leaky_relu(h, kLeakySlope);
}

void ConvBlock::collect(const std::string& prefix, ParamList& out) const {
  c1.collect(prefix + ".c1", out);
  c2.collect(prefix + ".c2", out);
  if (use_norm) {
    n1.collect(prefix + ".n1", out);
    n2.collect(prefix + ".n2", out);
  }
}

UNet UNet::make(const UNetConfig& cfg, Rng& rng) {
  if (cfg.levels < 1) throw std::invalid_argument("UNet: levels must be >= 1");
  UNet net;
  net.cfg = cfg;
  int ch = cfg.base_channels;
  net.enc.push_back(ConvBlock::make(cfg.in_channels, ch, cfg.instance_norm, rng));
  for (int l = 1; l < cfg.levels; ++l) {
    net.enc.push_back(ConvBlock::make(ch, 2 * ch, cfg.instance_norm, rng));
    ch *= 2;
  }
  for (int l = cfg.levels - 1; l >= 1; --l) {
    const int hi = cfg.base_channels << l;
    const int lo = cfg.base_channels << (l - 1);
    net.dec.push_back(ConvBlock::make(hi + lo, lo, cfg.instance_norm, rng));
  }
  net.head = Conv2d::make(cfg.base_channels, cfg.out_channels, 3, 1, 1, rng, cfg.final_init_std);
  return net;
}

Var UNet::forward(const Var& x) const {
  std::vector<Var> skips;
  Var h = enc[0].forward(x);
  skips.push_back(h);
  for (size_t l = 1; l < enc.size(); ++l) {
    h = enc[l].forward(ag::avg_pool2(h));
    skips.push_back(h);
  }
  for (size_t i = 0; i < dec.size(); ++i) {
    const Var up = ag::upsample_nearest2(h);
    const Var& skip = skips[skips.size() - 2 - i];
    h = dec[i].forward(ag::concat_channels({up, skip}));
  }
  return head.forward(h);
}

void UNet::collect(const std::string& prefix, ParamList& out) const {
  for (size_t i = 0; i < enc.size(); ++i) enc[i].collect(prefix + ".enc" + std::to_string(i), out);
  for (size_t i = 0; i < dec.size(); ++i) dec[i].collect(prefix + ".dec" + std::to_string(i), out);
  head.collect(prefix + ".head", out);
}

// ------------------------------------------------------------------ models

AlignmentModel AlignmentModel::make(int base, int levels, Rng& rng) {
  AlignmentModel m;
  UNetConfig cfg;
  cfg.in_channels = 2;
  cfg.out_channels = 2;
  cfg.base_channels = base;
  cfg.levels = levels;
  cfg.instance_norm = true;
  // The head starts near zero so training begins at the identity warp.
  cfg.final_init_std = 1e-3;
  m.net = UNet::make(cfg, rng);
  return m;
}

Var AlignmentModel::forward(const Var& zf_target_mag, const Var& reference_mag) const {
  if (!zf_target_mag->value.same_shape(reference_mag->value))
    throw std::invalid_argument("align: input shape mismatch");
  const Var x = ag::concat_channels({zf_target_mag, reference_mag});
  return ag::mul_scalar(net.forward(x), output_scale);
}

ParamList AlignmentModel::params() const {
  ParamList out;
  net.collect("align", out);
  return out;
}

SynthesisModel SynthesisModel::make(int base, int levels, Rng& rng) {
  SynthesisModel m;
  UNetConfig cfg;
  cfg.in_channels = 1;
  cfg.out_channels = 1;
  cfg.base_channels = base;
  cfg.levels = levels;
  cfg.instance_norm = true;
  m.net = UNet::make(cfg, rng);
  return m;
}

Var SynthesisModel::forward(const Var& reference_mag) const { return net.forward(reference_mag); }

ParamList SynthesisModel::params() const {
  ParamList out;
  net.collect("synth", out);
  return out;
}

ReconstructionModel ReconstructionModel::make(const ReconstructionConfig& cfg, Rng& rng) {
  ReconstructionModel m;
  m.cfg = cfg;
  for (int i = 0; i < cfg.cascades; ++i) {
    UNetConfig ucfg;
    ucfg.in_channels = cfg.multimodal ? 3 : 2;
    ucfg.out_channels = 2;
    ucfg.base_channels = cfg.base_channels;
    ucfg.levels = cfg.levels;
    ucfg.instance_norm = true;
    Cascade c;
    c.refiner = UNet::make(ucfg, rng);
    c.dc_weight = ag::leaf(Tensor::scalar(1.0), true);
    m.cascades.push_back(std::move(c));
  }
  return m;
}

ReconstructionModel::Output ReconstructionModel::forward(const kspace::KSpaceData& y,
                                                         const kspace::CoilSensitivities& sens,
                                                         const Var& ref_aligned) const {
  if (cfg.multimodal && !ref_aligned)
    throw std::invalid_argument("reconstruct: multi-modal model needs an aligned reference");
  if (!cfg.multimodal && ref_aligned)
    throw std::invalid_argument("reconstruct: reference supplied in single-modal mode");
  const int coils = y.coil_count, h = y.height(), w = y.width();
  if (sens.coil_count() != coils)
    throw std::invalid_argument("reconstruct: sensitivity/coil mismatch");

  const Tensor y_flat = y.samples.reshaped({1, 2 * coils, h, w});
  const std::vector<char>& mask = y.mask.lines;
  Var k = ag::constant(y_flat);

  for (const auto& cascade : cascades) {
    const Var imgs = ag::ifft2c(k);
    const Var combined = ag::coil_reduce(imgs, sens.maps);
    Var net_in = combined;
    if (cfg.multimodal) net_in = ag::concat_channels({combined, ref_aligned});
    const Var delta = cascade.refiner.forward(net_in);
    const Var refined = ag::add(combined, delta);
    const Var expanded = ag::coil_expand(refined, sens.maps);
    const Var k_ref = ag::fft2c(expanded);
    k = ag::data_consistency(k_ref, y_flat, mask, cascade.dc_weight);
  }

  Output out;
  out.kspace = k;
  out.image_complex = ag::coil_reduce(ag::ifft2c(k), sens.maps);
  out.magnitude = ag::complex_magnitude(out.image_complex, 1e-12);
  return out;
}

ParamList ReconstructionModel::params() const {
  ParamList out;
  for (size_t i = 0; i < cascades.size(); ++i) {
    const std::string prefix = "recon.cascade" + std::to_string(i);
    cascades[i].refiner.collect(prefix, out);
    out.push_back({prefix + ".dc_weight", cascades[i].dc_weight});
  }
  return out;
}

void ReconstructionModel::clamp_dc_weights() {
  for (auto& c : cascades)
    if (c.dc_weight->value[0] < 0.0) c.dc_weight->value[0] = 0.0;
}

Discriminator Discriminator::make(int base, int depth, Rng& rng) {
  Discriminator d;
  d.entry = SpectralConv2d::make(1, base, 3, 1, 1, rng);
  int ch = base;
  for (int i = 0; i < depth; ++i) {
    const int next = std::min(4 * base, 2 * ch);
    Block b;
    b.norm = InstanceNorm::make(ch);
    b.conv = SpectralConv2d::make(ch, next, 3, 2, 1, rng);
    d.blocks.push_back(std::move(b));
    ch = next;
  }
  d.fc = SpectralLinear::make(ch, 1, rng);
  return d;
}

Var Discriminator::forward(const Var& image) const {
  Var h = ag::leaky_relu(entry.forward(image), kDiscLeakySlope);
  for (const auto& b : blocks)
    h = b.conv.forward(ag::leaky_relu(b.norm.forward(h), kDiscLeakySlope));
  h = ag::global_avg_pool(ag::leaky_relu(h, kDiscLeakySlope));
  return fc.forward(h);
}

void Discriminator::update_spectral_norm() {
  entry.power_iteration_step();
  for (auto& b : blocks) b.conv.power_iteration_step();
  fc.power_iteration_step();
}

ParamList Discriminator::params() const {
  ParamList out;
  entry.collect("disc.entry", out);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string prefix = "disc.block" + std::to_string(i);
    blocks[i].norm.collect(prefix + ".norm", out);
    blocks[i].conv.collect(prefix + ".conv", out);
  }
  fc.collect("disc.fc", out);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Discriminator::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  entry.collect_buffers("disc.entry", out);
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].conv.collect_buffers("disc.block" + std::to_string(i) + ".conv", out);
  fc.collect_buffers("disc.fc", out);
  return out;
}

std::vector<double> Discriminator::layer_sigmas(int power_iters) const {
  std::vector<double> out;
  Rng rng(7);
  auto norm_of = [&](const Var& wnorm, int rows) {
    const int cols = static_cast<int>(wnorm->value.numel() / rows);
    out.push_back(fresh_sigma(wnorm->value, rows, cols, power_iters, rng));
  };
  norm_of(entry.normalized_weight(), entry.w->value.dim(0));
  for (const auto& b : blocks) norm_of(b.conv.normalized_weight(), b.conv.w->value.dim(0));
  norm_of(fc.normalized_weight(), fc.w->value.dim(0));
  return out;
}

// ------------------------------------------------------------------ bundle

std::string to_string(TrainingMode m) {
  switch (m) {
    case TrainingMode::kSingleModal: return "single_modal";
    case TrainingMode::kMultiModal: return "multi_modal";
    case TrainingMode::kProposed: return "proposed";
    case TrainingMode::kRecOnly: return "rec_only";
    case TrainingMode::kRegOnly: return "reg_only";
  }
  throw std::invalid_argument("bad mode");
}

TrainingMode training_mode_from_string(const std::string& s) {
  if (s == "single_modal") return TrainingMode::kSingleModal;
  if (s == "multi_modal") return TrainingMode::kMultiModal;
  if (s == "proposed") return TrainingMode::kProposed;
  if (s == "rec_only") return TrainingMode::kRecOnly;
  if (s == "reg_only") return TrainingMode::kRegOnly;
  throw std::invalid_argument("unknown training mode: " + s);
}

ModelBundle ModelBundle::make(TrainingMode mode, const ModelSizes& sizes, std::uint64_t seed) {
  ModelBundle b;
  b.mode = mode;
  b.sizes = sizes;
  b.seed = seed;

  ReconstructionConfig rcfg;
  rcfg.cascades = sizes.recon_cascades;
  rcfg.base_channels = sizes.recon_base;
  rcfg.levels = sizes.recon_levels;
  rcfg.multimodal = mode != TrainingMode::kSingleModal;
  Rng r_rng(mix_seed(seed, 101));
  b.recon = ReconstructionModel::make(rcfg, r_rng);

  if (mode != TrainingMode::kSingleModal) {
    Rng t_rng(mix_seed(seed, 202));
    b.align = AlignmentModel::make(sizes.align_base, sizes.align_levels, t_rng);
    Rng g_rng(mix_seed(seed, 303));
    b.synth = SynthesisModel::make(sizes.synth_base, sizes.synth_levels, g_rng);
    Rng d_rng(mix_seed(seed, 404));
    b.disc = Discriminator::make(sizes.disc_base, sizes.disc_depth, d_rng);
  }
  return b;
}

ParamList ModelBundle::all_params() const {
  ParamList out = recon.params();
  if (align) {
    ParamList t = align->params();
    out.insert(out.end(), t.begin(), t.end());
  }
  if (synth) {
    ParamList t = synth->params();
    out.insert(out.end(), t.begin(), t.end());
  }
  if (disc) {
    ParamList t = disc->params();
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

// ------------------------------------------------------------------ checkpoint

namespace {

constexpr char kMagic[8] = {'M', 'M', 'C', 'K', '0', '0', '0', '1'};

json sizes_to_json(const ModelSizes& s) {
  return json{{"recon_cascades", s.recon_cascades}, {"recon_base", s.recon_base},
              {"recon_levels", s.recon_levels},     {"align_base", s.align_base},
              {"align_levels", s.align_levels},     {"synth_base", s.synth_base},
              {"synth_levels", s.synth_levels},     {"disc_base", s.disc_base},
              {"disc_depth", s.disc_depth}};
}

ModelSizes sizes_from_json(const json& j) {
  ModelSizes s;
  s.recon_cascades = j.at("recon_cascades").get<int>();
  s.recon_base = j.at("recon_base").get<int>();
  s.recon_levels = j.at("recon_levels").get<int>();
  s.align_base = j.at("align_base").get<int>();
  s.align_levels = j.at("align_levels").get<int>();
  s.synth_base = j.at("synth_base").get<int>();
  s.synth_levels = j.at("synth_levels").get<int>();
  s.disc_base = j.at("disc_base").get<int>();
  s.disc_depth = j.at("disc_depth").get<int>();
  return s;
}

void write_f32(std::ofstream& f, const Tensor& t) {
  std::vector<float> buf(static_cast<size_t>(t.numel()));
  for (std::int64_t i = 0; i < t.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void read_f32(std::ifstream& f, Tensor& t) {
  std::vector<float> buf(static_cast<size_t>(t.numel()));
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("checkpoint: truncated tensor data");
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = buf[static_cast<size_t>(i)];
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelBundle& bundle,
                     const std::string& config_json) {
  ModelBundle& mutable_bundle = const_cast<ModelBundle&>(bundle);
  const ParamList params = bundle.all_params();
  std::vector<std::pair<std::string, Tensor*>> buffers;
  if (mutable_bundle.disc) buffers = mutable_bundle.disc->buffers();

  json manifest;
  manifest["mode"] = to_string(bundle.mode);
  manifest["iteration"] = bundle.iteration;
  manifest["seed"] = bundle.seed;
  manifest["sizes"] = sizes_to_json(bundle.sizes);
  manifest["config"] = config_json;
  json tensors = json::array();
  for (const auto& p : params)
    tensors.push_back(json{{"name", p.name}, {"shape", p.var->value.shape()}});
  manifest["tensors"] = tensors;
  json bufs = json::array();
  for (const auto& [name, t] : buffers) bufs.push_back(json{{"name", name}, {"shape", t->shape()}});
  manifest["buffers"] = bufs;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
    f.write(kMagic, sizeof(kMagic));
    const std::string m = manifest.dump();
    const std::uint64_t len = m.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(m.data(), static_cast<std::streamsize>(m.size()));
    for (const auto& p : params) write_f32(f, p.var->value);
    for (const auto& [name, t] : buffers) write_f32(f, *t);
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("save_checkpoint: rename failed for " + path);
}

ModelBundle load_checkpoint(const std::string& path, std::string* config_json) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string m(len, '\0');
  f.read(m.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error("load_checkpoint: truncated manifest in " + path);
  const json manifest = json::parse(m);

  ModelBundle bundle = ModelBundle::make(training_mode_from_string(manifest.at("mode")),
                                         sizes_from_json(manifest.at("sizes")),
                                         manifest.at("seed").get<std::uint64_t>());
  bundle.iteration = manifest.at("iteration").get<std::int64_t>();
  if (config_json) *config_json = manifest.at("config").get<std::string>();

  const ParamList params = bundle.all_params();
  const json& tensors = manifest.at("tensors");
  if (tensors.size() != params.size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (tensors[i].at("name").get<std::string>() != params[i].name)
      throw std::runtime_error("load_checkpoint: parameter name mismatch at " + params[i].name);
    read_f32(f, params[i].var->value);
  }
  std::vector<std::pair<std::string, Tensor*>> buffers;
  if (bundle.disc) buffers = bundle.disc->buffers();
  const json& bufs = manifest.at("buffers");
  if (bufs.size() != buffers.size())
    throw std::runtime_error("load_checkpoint: buffer count mismatch");
  for (size_t i = 0; i < buffers.size(); ++i) read_f32(f, *buffers[i].second);
  return bundle;
}

PaperScaleConfigs paper_scale_configs() {
  // Sized to line up with the published parameter counts
  // (R 20.12M, T 0.72M, G 22.88M, D 3.51M).
  PaperScaleConfigs c;
  c.recon.cascades = 8;
  c.recon.base_channels = 33;
  c.recon.levels = 4;
  c.recon.multimodal = true;
  c.align_base = 16;
  c.align_levels = 4;
  c.synth_base = 62;
  c.synth_levels = 5;
  c.disc_base = 80;
  c.disc_depth = 3;
  return c;
}

}  // namespace mmalign::models
