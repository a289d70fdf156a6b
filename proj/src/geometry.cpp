#include "mmalign/geometry.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmalign/kernels.hpp"
#include "mmalign/rng.hpp"

namespace mmalign::geometry {

namespace {

void check_field(const Tensor& field, const char* op) {
  if (field.ndim() != 3 || field.dim(0) != 2)
    throw std::invalid_argument(std::string(op) + ": field must be [2,h,w]");
}

// Uniform cubic B-spline basis; nonnegative, partition of unity, so the
// interpolated displacement never exceeds the control-point range.
inline void bspline_weights(double t, double w[4]) {
  const double t2 = t * t, t3 = t2 * t;
  w[0] = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0;
  w[1] = (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0;
  w[2] = (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0;
  w[3] = t3 / 6.0;
}

}  // namespace

DeformationSpec DeformationSpec::defaults_for_size(int image_size, double sigma,
                                                   std::uint64_t seed) {
  DeformationSpec s;
  s.rotation_range = 0.01 * M_PI;
  s.translation_range = 0.05 * image_size;
  s.grid_size = 9;
  s.control_displacement_range = 0.02 * image_size;
  s.sigma = sigma;
  s.seed = seed;
  return s;
}

void DeformationSpec::validate() const {
  if (rotation_range < 0.0 || translation_range < 0.0 || control_displacement_range < 0.0 ||
      sigma < 0.0)
    throw std::invalid_argument("DeformationSpec: ranges and sigma must be nonnegative");
  if (grid_size < 2) throw std::invalid_argument("DeformationSpec: grid_size must be >= 2");
}

Tensor warp(const Tensor& image, const Tensor& field) {
  check_field(field, "warp");
  const int h = field.dim(1), w = field.dim(2);
  const bool plain = image.ndim() == 2;
  const Tensor img = plain ? image.reshaped({1, image.dim(0), image.dim(1)}) : image;
  if (img.ndim() != 3 || img.dim(1) != h || img.dim(2) != w)
    throw std::invalid_argument("warp: image/field shape mismatch");
  Tensor out({img.dim(0), h, w});
  kernels::warp_forward(img.data(), field.data(), out.data(), img.dim(0), h, w);
  return plain ? out.reshaped({h, w}) : out;
}

double smoothness_loss(const Tensor& field) {
  check_field(field, "smoothness_loss");
  const int h = field.dim(1), w = field.dim(2);
  if (h < 2 || w < 2) throw std::invalid_argument("smoothness_loss: field too small");
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  double total = 0.0;
  for (int comp = 0; comp < 2; ++comp) {
    const double* f = field.data() + comp * plane;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const double v = f[static_cast<std::int64_t>(i) * w + j];
        if (j + 1 < w) {
          const double dx = f[static_cast<std::int64_t>(i) * w + j + 1] - v;
          total += dx * dx;
        }
        if (i + 1 < h) {
          const double dy = f[static_cast<std::int64_t>(i + 1) * w + j] - v;
          total += dy * dy;
        }
      }
  }
  return total / static_cast<double>(plane);
}

Tensor random_deformation(const DeformationSpec& spec, int height, int width) {
  spec.validate();
  if (height < 2 || width < 2) throw std::invalid_argument("random_deformation: image too small");
  Rng rng(spec.seed);

  const double angle = rng.uniform(-1.0, 1.0) * spec.rotation_range * spec.sigma;
  const double tx = rng.uniform(-1.0, 1.0) * spec.translation_range * spec.sigma;
  const double ty = rng.uniform(-1.0, 1.0) * spec.translation_range * spec.sigma;

  const int g = spec.grid_size;
  // ctrl[comp][gy][gx]
  std::vector<double> ctrl(static_cast<size_t>(2) * g * g);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      ctrl[(0 * static_cast<size_t>(g) + gy) * g + gx] =
          rng.uniform(-1.0, 1.0) * spec.control_displacement_range * spec.sigma;
      ctrl[(1 * static_cast<size_t>(g) + gy) * g + gx] =
          rng.uniform(-1.0, 1.0) * spec.control_displacement_range * spec.sigma;
    }

  Tensor field({2, height, width});
  const std::int64_t plane = static_cast<std::int64_t>(height) * width;
  const double cx = 0.5 * (width - 1);
  const double cy = 0.5 * (height - 1);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double sy_scale = static_cast<double>(g - 1) / (height - 1);
  const double sx_scale = static_cast<double>(g - 1) / (width - 1);

  for (int y = 0; y < height; ++y) {
    const double gy = y * sy_scale;
    int iy = static_cast<int>(std::floor(gy));
    if (iy > g - 2) iy = g - 2;
    const double uy = gy - iy;
    double wy[4];
    bspline_weights(uy, wy);
    for (int x = 0; x < width; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      // Rigid part: rotate about the image center, then translate.
      double fx = (ca * dx - sa * dy) - dx + tx;
      double fy = (sa * dx + ca * dy) - dy + ty;

      const double gx = x * sx_scale;
      int ix = static_cast<int>(std::floor(gx));
      if (ix > g - 2) ix = g - 2;
      const double ux = gx - ix;
      double wx[4];
      bspline_weights(ux, wx);
      double bx = 0.0, by = 0.0;
      for (int k = 0; k < 4; ++k) {
        const int cyi = std::clamp(iy - 1 + k, 0, g - 1);
        double rowx = 0.0, rowy = 0.0;
        for (int l = 0; l < 4; ++l) {
          const int cxi = std::clamp(ix - 1 + l, 0, g - 1);
          rowx += wx[l] * ctrl[(0 * static_cast<size_t>(g) + cyi) * g + cxi];
          rowy += wx[l] * ctrl[(1 * static_cast<size_t>(g) + cyi) * g + cxi];
        }
        bx += wy[k] * rowx;
        by += wy[k] * rowy;
      }
      field[static_cast<std::int64_t>(y) * width + x] = fx + bx;
      field[plane + static_cast<std::int64_t>(y) * width + x] = fy + by;
    }
  }
  return field;
}

double endpoint_error(const Tensor& estimated, const Tensor& truth) {
  check_field(estimated, "endpoint_error");
  if (!estimated.same_shape(truth))
    throw std::invalid_argument("endpoint_error: shape mismatch");
  const std::int64_t plane = static_cast<std::int64_t>(estimated.dim(1)) * estimated.dim(2);
  double total = 0.0;
  for (std::int64_t i = 0; i < plane; ++i)
    total += std::hypot(estimated[i] - truth[i], estimated[plane + i] - truth[plane + i]);
  return total / static_cast<double>(plane);
}

Tensor compose_fields(const Tensor& first, const Tensor& second) {
  check_field(first, "compose_fields");
  if (!first.same_shape(second)) throw std::invalid_argument("compose_fields: shape mismatch");
  // first sampled at p + second[p], plus second.
  Tensor sampled = warp(first, second);
  Tensor out = second;
  out.add_scaled(sampled, 1.0);
  return out;
}

void write_field(const std::string& path, const Tensor& field) {
  check_field(field, "write_field");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_field: cannot open " + path);
  std::vector<float> buf(static_cast<size_t>(field.numel()));
  for (std::int64_t i = 0; i < field.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(field[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  nlohmann::json j;
  j["height"] = field.dim(1);
  j["width"] = field.dim(2);
  std::ofstream side(path + ".json");
  side << j.dump() << "\n";
}

Tensor read_field(const std::string& path) {
  std::ifstream side(path + ".json");
  if (!side) throw std::runtime_error("read_field: missing sidecar for " + path);
  nlohmann::json j;
  side >> j;
  const int h = j.at("height").get<int>();
  const int w = j.at("width").get<int>();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_field: cannot open " + path);
  std::vector<float> buf(static_cast<size_t>(2) * h * w);
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("read_field: truncated file " + path);
  Tensor field({2, h, w});
  for (size_t i = 0; i < buf.size(); ++i) field[static_cast<std::int64_t>(i)] = buf[i];
  return field;
}

}  // namespace mmalign::geometry
