#pragma once

#include <cstdint>
#include <string>

#include "mmalign/tensor.hpp"

namespace mmalign::geometry {

// Displacement fields are [2,h,w] tensors in pixels; channel 0 is the
// x (column) displacement, channel 1 the y (row) displacement. Warping is
// backward: out[p] = img[p + field[p]].

// Parameters of a random rigid + free-form deformation. All ranges scale
// linearly with sigma; sigma = 0 produces the zero field.
struct DeformationSpec {
  double rotation_range = 0.01 * 3.14159265358979323846;  // radians
  double translation_range = 0.0;                         // pixels, set per image size
  int grid_size = 9;                                      // control points per axis
  double control_displacement_range = 0.0;                // pixels
  double sigma = 1.0;
  std::uint64_t seed = 0;

  // The ranges the misalignment simulation uses: rotation in
  // [-0.01*pi, 0.01*pi], translation in [-0.05*N, 0.05*N], 9x9 control
  // points with displacements in [-0.02*N, 0.02*N], all scaled by sigma.
  static DeformationSpec defaults_for_size(int image_size, double sigma, std::uint64_t seed);

  void validate() const;
};

// Warps a [c,h,w] (or [h,w]) image by a [2,h,w] field; bilinear sampling
// with border clamping.
Tensor warp(const Tensor& image, const Tensor& field);

// (1/N) * sum of squared forward-difference partials of both components,
// N = h*w; the trailing row/column contribute zero.
double smoothness_loss(const Tensor& field);

Tensor random_deformation(const DeformationSpec& spec, int height, int width);

// Mean per-pixel Euclidean distance between two fields, in pixels.
double endpoint_error(const Tensor& estimated, const Tensor& truth);

// Backward-warp composition: applying `first` then `second` equals applying
// the returned field (up to interpolation): c[p] = second[p] + first[p + second[p]].
Tensor compose_fields(const Tensor& first, const Tensor& second);

// Raw little-endian float32 in (component, row, column) order plus a JSON
// sidecar {height, width} at path + ".json".
void write_field(const std::string& path, const Tensor& field);
Tensor read_field(const std::string& path);

}  // namespace mmalign::geometry
