#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mmalign/autodiff.hpp"
#include "mmalign/kspace.hpp"
#include "mmalign/rng.hpp"
#include "mmalign/tensor.hpp"

namespace mmalign::models {

struct Param {
  std::string name;
  ag::Var var;
};

using ParamList = std::vector<Param>;

std::int64_t count_parameters(const ParamList& params);

// ------------------------------------------------------------------ layers

struct Conv2d {
  ag::Var w, b;
  int stride = 1, pad = 1;

  static Conv2d make(int cin, int cout, int k, int stride, int pad, Rng& rng, double init_std = -1.0);
  ag::Var forward(const ag::Var& x) const { return ag::conv2d(x, w, b, stride, pad); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct InstanceNorm {
  ag::Var gain, bias;

  static InstanceNorm make(int c);
  ag::Var forward(const ag::Var& x) const { return ag::instance_norm(x, gain, bias, 1e-5); }
  void collect(const std::string& prefix, ParamList& out) const;
};

// Convolution with spectral weight normalization (one power iteration per
// explicit update; u/v are persistent buffers).
struct SpectralConv2d {
  ag::Var w, b;
  Tensor u, v;  // power-iteration vectors for mat(w) = [cout, cin*kh*kw]
  int stride = 1, pad = 1;

  static SpectralConv2d make(int cin, int cout, int k, int stride, int pad, Rng& rng);
  void power_iteration_step();
  double estimated_sigma() const;
  ag::Var normalized_weight() const;
  ag::Var forward(const ag::Var& x) const { return ag::conv2d(x, normalized_weight(), b, stride, pad); }
  void collect(const std::string& prefix, ParamList& out) const;
  // u/v travel with checkpoints so evaluation is reproducible after load.
  void collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, Tensor*>>& out);
};

struct SpectralLinear {
  ag::Var w, b;  // w: [out, in]
  Tensor u, v;

  static SpectralLinear make(int in, int out, Rng& rng);
  void power_iteration_step();
  double estimated_sigma() const;
  ag::Var normalized_weight() const;
  ag::Var forward(const ag::Var& x) const { return ag::linear(x, normalized_weight(), b); }
  void collect(const std::string& prefix, ParamList& out) const;
  void collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, Tensor*>>& out);
};

// ------------------------------------------------------------------ U-Net

struct UNetConfig {
  int in_channels = 1;
  int out_channels = 1;
  int base_channels = 16;
  int levels = 3;           // resolution scales; input h,w divisible by 2^(levels-1)
  bool instance_norm = true;
  double final_init_std = -1.0;  // <0: default Kaiming init for the head conv
};

struct ConvBlock {
  Conv2d c1, c2;
  InstanceNorm n1, n2;
  bool use_norm = true;

  static ConvBlock make(int cin, int cout, bool norm, Rng& rng);
  ag::Var forward(const ag::Var& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct UNet {
  UNetConfig cfg;
  std::vector<ConvBlock> enc;   // one per level
  std::vector<ConvBlock> dec;   // levels-1 entries
  Conv2d head;                  // 3x3 to out_channels, linear

  static UNet make(const UNetConfig& cfg, Rng& rng);
  ag::Var forward(const ag::Var& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// ------------------------------------------------------------------ models

// Spatial alignment network: (|zero-filled target|, |reference|) -> field.
struct AlignmentModel {
  UNet net;
  double output_scale = 10.0;

  static AlignmentModel make(int base, int levels, Rng& rng);
  // inputs [1,1,h,w] each; returns [1,2,h,w]
  ag::Var forward(const ag::Var& zf_target_mag, const ag::Var& reference_mag) const;
  ParamList params() const;
};

// Cross-modality synthesis network: reference contrast -> target contrast.
struct SynthesisModel {
  UNet net;

  static SynthesisModel make(int base, int levels, Rng& rng);
  ag::Var forward(const ag::Var& reference_mag) const;
  ParamList params() const;
};

// Unrolled reconstruction: image-space refiners with a soft data-consistency
// step closing every cascade. Works for any coil count; the refiner sees the
// sensitivity-combined image (plus the aligned reference when multi-modal).
struct ReconstructionConfig {
  int cascades = 3;
  int base_channels = 10;
  int levels = 2;
  bool multimodal = true;  // expects an aligned reference channel
};

struct ReconstructionModel {
  ReconstructionConfig cfg;
  struct Cascade {
    UNet refiner;
    ag::Var dc_weight;  // learnable nonnegative scalar, init 1
  };
  std::vector<Cascade> cascades;

  static ReconstructionModel make(const ReconstructionConfig& cfg, Rng& rng);

  struct Output {
    ag::Var kspace;         // [1, 2*coils, h, w]; equals the last DC output
    ag::Var image_complex;  // [1, 2, h, w] combined image
    ag::Var magnitude;      // [1, 1, h, w]
  };
  // ref_aligned may be null only in single-modal configs (and vice versa).
  Output forward(const kspace::KSpaceData& y, const kspace::CoilSensitivities& sens,
                 const ag::Var& ref_aligned) const;
  ParamList params() const;
  void clamp_dc_weights();
};

// Hinge discriminator: norm-activation-convolution stack with spectral
// weight normalization, scalar score per image.
struct Discriminator {
  SpectralConv2d entry;
  struct Block {
    InstanceNorm norm;
    SpectralConv2d conv;
  };
  std::vector<Block> blocks;
  SpectralLinear fc;

  static Discriminator make(int base, int depth, Rng& rng);
  ag::Var forward(const ag::Var& image) const;  // [n,1,h,w] -> [n,1]
  void update_spectral_norm();                  // one power iteration per layer
  ParamList params() const;
  std::vector<std::pair<std::string, Tensor*>> buffers();
  std::vector<double> layer_sigmas(int power_iters) const;  // post-normalization norms
};

// ------------------------------------------------------------------ bundle

enum class TrainingMode { kSingleModal, kMultiModal, kProposed, kRecOnly, kRegOnly };

std::string to_string(TrainingMode m);
TrainingMode training_mode_from_string(const std::string& s);

struct ModelSizes {
  int recon_cascades = 3;
  int recon_base = 10;
  int recon_levels = 2;
  int align_base = 12;
  int align_levels = 3;
  int synth_base = 12;
  int synth_levels = 3;
  int disc_base = 12;
  int disc_depth = 3;
};

// The four parameterized operators plus bookkeeping. Single-modal bundles
// hold no alignment/synthesis/discriminator networks at all.
struct ModelBundle {
  TrainingMode mode = TrainingMode::kProposed;
  std::int64_t iteration = 0;
  ModelSizes sizes;
  std::uint64_t seed = 0;

  ReconstructionModel recon;
  std::optional<AlignmentModel> align;
  std::optional<SynthesisModel> synth;
  std::optional<Discriminator> disc;

  static ModelBundle make(TrainingMode mode, const ModelSizes& sizes, std::uint64_t seed);

  bool has_aux() const { return align.has_value(); }
  ParamList all_params() const;
};

// Checkpoint container: JSON manifest plus named float32 tensors in one file.
void save_checkpoint(const std::string& path, const ModelBundle& bundle,
                     const std::string& config_json);
ModelBundle load_checkpoint(const std::string& path, std::string* config_json = nullptr);

// Paper-scale configurations; parameter counts line up with the published
// model sizes. Not used by training at desk scale.
struct PaperScaleConfigs {
  ReconstructionConfig recon;
  int align_base, align_levels;
  int synth_base, synth_levels;
  int disc_base, disc_depth;
};
PaperScaleConfigs paper_scale_configs();

}  // namespace mmalign::models
