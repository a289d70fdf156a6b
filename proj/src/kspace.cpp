#include "mmalign/kspace.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmalign/fft.hpp"
#include "mmalign/rng.hpp"

namespace mmalign::kspace {

namespace {

using nlohmann::json;

// Round-half-to-even at .5, nearest otherwise.
int round_half_even(double x) {
  const double f = std::floor(x);
  const double frac = x - f;
  if (frac > 0.5) return static_cast<int>(f) + 1;
  if (frac < 0.5) return static_cast<int>(f);
  const int lo = static_cast<int>(f);
  return (lo % 2 == 0) ? lo : lo + 1;
}

void check_complex_coils(const Tensor& x, const char* op) {
  if (x.ndim() == 3) {
    if (x.dim(0) != 2) throw std::invalid_argument(std::string(op) + ": expected [2,h,w]");
  } else if (x.ndim() == 4) {
    if (x.dim(1) != 2) throw std::invalid_argument(std::string(op) + ": expected [coils,2,h,w]");
  } else {
    throw std::invalid_argument(std::string(op) + ": expected complex image tensor");
  }
}

}  // namespace

std::string to_string(MaskPattern p) {
  return p == MaskPattern::kRandom ? "random" : "equispaced";
}

MaskPattern mask_pattern_from_string(const std::string& s) {
  if (s == "random") return MaskPattern::kRandom;
  if (s == "equispaced") return MaskPattern::kEquispaced;
  throw std::invalid_argument("unknown mask pattern: " + s);
}

int SamplingMask::sampled_count() const {
  int n = 0;
  for (char c : lines) n += c ? 1 : 0;
  return n;
}

int SamplingMask::center_start() const { return width() / 2 - low_freq_count / 2; }

std::string SamplingMask::to_json() const {
  json j;
  j["pattern"] = to_string(pattern);
  j["acceleration"] = acceleration;
  j["width"] = width();
  j["low_freq_count"] = low_freq_count;
  j["seed"] = seed;
  std::vector<int> bits(lines.size());
  for (size_t i = 0; i < lines.size(); ++i) bits[i] = lines[i] ? 1 : 0;
  j["lines"] = bits;
  return j.dump();
}

SamplingMask SamplingMask::from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  SamplingMask m;
  m.pattern = mask_pattern_from_string(j.at("pattern").get<std::string>());
  m.acceleration = j.at("acceleration").get<int>();
  m.low_freq_count = j.at("low_freq_count").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  const auto bits = j.at("lines").get<std::vector<int>>();
  if (static_cast<int>(bits.size()) != j.at("width").get<int>())
    throw std::invalid_argument("mask json: width/lines mismatch");
  m.lines.resize(bits.size());
  for (size_t i = 0; i < bits.size(); ++i) m.lines[i] = bits[i] ? 1 : 0;
  return m;
}

SamplingMask make_mask(int width, int acceleration, MaskPattern pattern, double low_freq_fraction,
                       std::uint64_t seed) {
  if (width < 8) throw std::invalid_argument("make_mask: width must be >= 8");
  if (acceleration != 2 && acceleration != 4 && acceleration != 8)
    throw std::invalid_argument("make_mask: acceleration must be one of {2,4,8}");
  if (!(low_freq_fraction > 0.0 && low_freq_fraction < 1.0))
    throw std::invalid_argument("make_mask: low_freq_fraction must be in (0,1)");

  const int total = static_cast<int>(std::llround(static_cast<double>(width) / acceleration));
  const int low = round_half_even(low_freq_fraction * total);
  if (low >= total)
    throw std::invalid_argument("make_mask: low-frequency block would consume all samples");
  if (low < 1) throw std::invalid_argument("make_mask: low-frequency block is empty");

  SamplingMask m;
  m.lines.assign(static_cast<size_t>(width), 0);
  m.pattern = pattern;
  m.acceleration = acceleration;
  m.low_freq_count = low;
  m.seed = seed;

  const int start = width / 2 - low / 2;
  for (int c = start; c < start + low; ++c) m.lines[static_cast<size_t>(c)] = 1;

  // Non-center columns in circular order starting at the column adjacent to
  // the right edge of the center block and wrapping through the image edges.
  std::vector<int> ring;
  ring.reserve(static_cast<size_t>(width - low));
  for (int c = start + low; c < width; ++c) ring.push_back(c);
  for (int c = 0; c < start; ++c) ring.push_back(c);

  const int outer = total - low;
  const int len = static_cast<int>(ring.size());
  if (pattern == MaskPattern::kEquispaced) {
    const int stride = std::max(1, len / std::max(1, outer));
    for (int i = 0; i < outer; ++i) m.lines[static_cast<size_t>(ring[static_cast<size_t>(i * stride)])] = 1;
  } else {
    Rng rng(seed);
    // Partial Fisher-Yates: the first `outer` slots end up a uniform sample.
    for (int i = 0; i < outer; ++i) {
      const int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(len - i)));
      std::swap(ring[static_cast<size_t>(i)], ring[static_cast<size_t>(j)]);
      m.lines[static_cast<size_t>(ring[static_cast<size_t>(i)])] = 1;
    }
  }
  return m;
}

KSpaceData undersample(const Tensor& x, const SamplingMask& mask) {
  check_complex_coils(x, "undersample");
  const Tensor coils = x.ndim() == 3 ? x.reshaped({1, 2, x.dim(1), x.dim(2)}) : x;
  const int nc = coils.dim(0), h = coils.dim(2), w = coils.dim(3);
  if (w != mask.width()) throw std::invalid_argument("undersample: mask width mismatch");

  KSpaceData out;
  out.coil_count = nc;
  out.mask = mask;
  out.samples = Tensor({nc, 2, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int c = 0; c < nc; ++c) {
    Tensor img({2, h, w});
    std::copy(coils.data() + static_cast<std::int64_t>(c) * 2 * plane,
              coils.data() + static_cast<std::int64_t>(c + 1) * 2 * plane, img.data());
    Tensor k = fft::fft2c(img);
    for (int p = 0; p < 2; ++p)
      for (int r = 0; r < h; ++r) {
        double* row = k.data() + (static_cast<std::int64_t>(p) * h + r) * w;
        for (int col = 0; col < w; ++col)
          if (!mask.lines[static_cast<size_t>(col)]) row[col] = 0.0;
      }
    std::copy(k.data(), k.data() + 2 * plane,
              out.samples.data() + static_cast<std::int64_t>(c) * 2 * plane);
  }
  return out;
}

Tensor zero_fill_reconstruct(const KSpaceData& y, const CoilSensitivities* sens) {
  const int nc = y.coil_count, h = y.height(), w = y.width();
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  if (nc > 1 && (!sens || sens->coil_count() != nc))
    throw std::invalid_argument("zero_fill_reconstruct: sensitivities required for multi-coil");

  Tensor combined({2, h, w});
  for (int c = 0; c < nc; ++c) {
    Tensor k({2, h, w});
    std::copy(y.samples.data() + static_cast<std::int64_t>(c) * 2 * plane,
              y.samples.data() + static_cast<std::int64_t>(c + 1) * 2 * plane, k.data());
    const Tensor img = fft::ifft2c(k);
    if (nc == 1) return img;
    const double* sr = sens->maps.data() + static_cast<std::int64_t>(c) * 2 * plane;
    const double* si = sr + plane;
    const double* xr = img.data();
    const double* xi = xr + plane;
    double* or_ = combined.data();
    double* oi = or_ + plane;
    // conj(S) * x accumulate
    for (std::int64_t i = 0; i < plane; ++i) {
      or_[i] += sr[i] * xr[i] + si[i] * xi[i];
      oi[i] += sr[i] * xi[i] - si[i] * xr[i];
    }
  }
  return combined;
}

CoilSensitivities estimate_sensitivities(const KSpaceData& y) {
  const int nc = y.coil_count, h = y.height(), w = y.width();
  if (y.mask.low_freq_count < 2)
    throw std::invalid_argument("estimate_sensitivities: need low_freq_count >= 2");
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;

  CoilSensitivities out;
  out.maps = Tensor({nc, 2, h, w});
  if (nc == 1) {
    // Identity combine for single-coil data.
    for (std::int64_t i = 0; i < plane; ++i) out.maps[i] = 1.0;
    return out;
  }

  const int start = y.mask.center_start();
  const int stop = start + y.mask.low_freq_count;
  std::vector<Tensor> lowres;
  lowres.reserve(static_cast<size_t>(nc));
  double center_energy = 0.0;
  for (int c = 0; c < nc; ++c) {
    Tensor k({2, h, w});
    for (int p = 0; p < 2; ++p)
      for (int r = 0; r < h; ++r) {
        const double* src =
            y.samples.data() + ((static_cast<std::int64_t>(c) * 2 + p) * h + r) * w;
        double* dst = k.data() + (static_cast<std::int64_t>(p) * h + r) * w;
        for (int col = start; col < stop; ++col) {
          dst[col] = src[col];
          center_energy += src[col] * src[col];
        }
      }
    lowres.push_back(fft::ifft2c(k));
  }
  if (center_energy == 0.0)
    throw std::invalid_argument("estimate_sensitivities: all-zero calibration region");

  for (std::int64_t i = 0; i < plane; ++i) {
    double rss = 0.0;
    for (int c = 0; c < nc; ++c) {
      const double re = lowres[static_cast<size_t>(c)][i];
      const double im = lowres[static_cast<size_t>(c)][plane + i];
      rss += re * re + im * im;
    }
    rss = std::sqrt(rss);
    if (rss <= 0.0) continue;  // leave the map zero there
    for (int c = 0; c < nc; ++c) {
      out.maps[(static_cast<std::int64_t>(c) * 2) * plane + i] =
          lowres[static_cast<size_t>(c)][i] / rss;
      out.maps[(static_cast<std::int64_t>(c) * 2 + 1) * plane + i] =
          lowres[static_cast<size_t>(c)][plane + i] / rss;
    }
  }
  return out;
}

Tensor data_consistency(const Tensor& k_pred, const KSpaceData& y, double weight) {
  if (!k_pred.same_shape(y.samples) &&
      !(k_pred.ndim() == 3 && y.coil_count == 1 && k_pred.dim(0) == 2 &&
        k_pred.dim(1) == y.height() && k_pred.dim(2) == y.width()))
    throw std::invalid_argument("data_consistency: shape mismatch");
  const int w = y.width();
  Tensor out = k_pred;
  const std::int64_t rows = out.numel() / w;
  for (std::int64_t r = 0; r < rows; ++r) {
    double* dst = out.data() + r * w;
    const double* ysrc = y.samples.data() + r * w;
    for (int col = 0; col < w; ++col)
      if (y.mask.lines[static_cast<size_t>(col)])
        dst[col] = (1.0 - weight) * dst[col] + weight * ysrc[col];
  }
  return out;
}

Tensor rss_combine(const Tensor& coil_images) {
  check_complex_coils(coil_images, "rss_combine");
  const Tensor coils =
      coil_images.ndim() == 3
          ? coil_images.reshaped({1, 2, coil_images.dim(1), coil_images.dim(2)})
          : coil_images;
  const int nc = coils.dim(0), h = coils.dim(2), w = coils.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out({h, w});
  for (std::int64_t i = 0; i < plane; ++i) {
    double acc = 0.0;
    for (int c = 0; c < nc; ++c) {
      const double re = coils[(static_cast<std::int64_t>(c) * 2) * plane + i];
      const double im = coils[(static_cast<std::int64_t>(c) * 2 + 1) * plane + i];
      acc += re * re + im * im;
    }
    out[i] = std::sqrt(acc);
  }
  return out;
}

}  // namespace mmalign::kspace
