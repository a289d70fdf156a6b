#pragma once

#include <cstdint>

namespace mmalign::kernels {

// Shape bundle for 2D convolution. Input x is [n, cin, h, w], weights are
// [cout, cin, kh, kw], output y is [n, cout, hout, wout].
struct ConvShape {
  int n = 1;
  int cin = 1, h = 0, w = 0;
  int cout = 1, kh = 3, kw = 3;
  int stride = 1, pad = 1;

  int hout() const { return (h + 2 * pad - kh) / stride + 1; }
  int wout() const { return (w + 2 * pad - kw) / stride + 1; }
};

// OpenMP kernels. Gradient kernels accumulate (+=) into their outputs.
void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    const ConvShape& s);
void conv2d_dinput(const double* dy, const double* w, double* dx, const ConvShape& s);
void conv2d_dweight(const double* x, const double* dy, double* dw, double* db,
                    const ConvShape& s);

// Backward bilinear warp of a [c,h,w] image by a [2,h,w] displacement field
// (channel 0 = x/column displacement, channel 1 = y/row displacement):
// out[ch, r, c] = img[ch, r + fy[r,c], c + fx[r,c]], sample positions clamped
// to the image border.
void warp_forward(const double* img, const double* field, double* out, int c, int h, int w);
void warp_backward(const double* img, const double* field, const double* dout, double* dimg,
                   double* dfield, int c, int h, int w);

// Serial reference implementations, kept for correctness tests and the
// benchmark target. Naive loops, no pragmas.
namespace serial {
void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    const ConvShape& s);
void conv2d_dinput(const double* dy, const double* w, double* dx, const ConvShape& s);
void conv2d_dweight(const double* x, const double* dy, double* dw, double* db,
                    const ConvShape& s);
void warp_forward(const double* img, const double* field, double* out, int c, int h, int w);
void warp_backward(const double* img, const double* field, const double* dout, double* dimg,
                   double* dfield, int c, int h, int w);
}  // namespace serial

}  // namespace mmalign::kernels
