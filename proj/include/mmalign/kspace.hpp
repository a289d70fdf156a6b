#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmalign/tensor.hpp"

namespace mmalign::kspace {

enum class MaskPattern { kRandom, kEquispaced };

std::string to_string(MaskPattern p);
MaskPattern mask_pattern_from_string(const std::string& s);

// Cartesian line-selection pattern over k-space columns. The mask lives in
// the centered k-space convention (DC at column width/2) and is constant
// along the frequency-encoding (row) axis.
struct SamplingMask {
  std::vector<char> lines;  // length = width, 1 = sampled column
  MaskPattern pattern = MaskPattern::kEquispaced;
  int acceleration = 4;
  int low_freq_count = 0;
  std::uint64_t seed = 0;

  int width() const { return static_cast<int>(lines.size()); }
  int sampled_count() const;
  // First column of the contiguous low-frequency block.
  int center_start() const;

  std::string to_json() const;
  static SamplingMask from_json(const std::string& json_text);
};

// Under-sampled k-space, stored zero-filled at full grid size.
// samples is [coils, 2, h, w] (re/im planes per coil).
struct KSpaceData {
  Tensor samples;
  int coil_count = 1;
  SamplingMask mask;

  int height() const { return samples.dim(2); }
  int width() const { return samples.dim(3); }
};

// Per-coil complex sensitivity maps, [coils, 2, h, w]; root-sum-of-squares
// equals 1 wherever any map is nonzero.
struct CoilSensitivities {
  Tensor maps;
  int coil_count() const { return maps.dim(0); }
};

SamplingMask make_mask(int width, int acceleration, MaskPattern pattern, double low_freq_fraction,
                       std::uint64_t seed);

// x: complex image(s), [2,h,w] for single coil or [coils,2,h,w].
KSpaceData undersample(const Tensor& x, const SamplingMask& mask);

// Zero-filled reconstruction; sens required when coil_count > 1.
Tensor zero_fill_reconstruct(const KSpaceData& y, const CoilSensitivities* sens = nullptr);

// Simplified auto-calibration estimate from the central mask columns.
CoilSensitivities estimate_sensitivities(const KSpaceData& y);

// Soft data consistency on one complex k-space [2,h,w] (or [coils,2,h,w]):
// sampled columns get (1-weight)*k_pred + weight*y, others pass through.
Tensor data_consistency(const Tensor& k_pred, const KSpaceData& y, double weight);

// Root-sum-of-squares combine of coil images [coils,2,h,w] -> [h,w].
Tensor rss_combine(const Tensor& coil_images);

}  // namespace mmalign::kspace
