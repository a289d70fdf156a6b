#include "mmalign/kernels.hpp"

#include <algorithm>
#include <cmath>

// Naive reference kernels. No pragmas, no tiling; the accumulation order for
// the forward and input-gradient kernels matches the OpenMP versions so the
// tests can compare bitwise.

namespace mmalign::kernels::serial {

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    const ConvShape& s) {
  const int hout = s.hout(), wout = s.wout();
  for (int n = 0; n < s.n; ++n) {
    for (int oc = 0; oc < s.cout; ++oc) {
      for (int oh = 0; oh < hout; ++oh) {
        for (int ow = 0; ow < wout; ++ow) {
          double acc = b ? b[oc] : 0.0;
          for (int ic = 0; ic < s.cin; ++ic) {
            for (int kh = 0; kh < s.kh; ++kh) {
              const int ih = oh * s.stride + kh - s.pad;
              if (ih < 0 || ih >= s.h) continue;
              for (int kw = 0; kw < s.kw; ++kw) {
                const int iw = ow * s.stride + kw - s.pad;
                if (iw < 0 || iw >= s.w) continue;
                acc += w[((static_cast<std::int64_t>(oc) * s.cin + ic) * s.kh + kh) * s.kw + kw] *
                       x[((static_cast<std::int64_t>(n) * s.cin + ic) * s.h + ih) * s.w + iw];
              }
            }
          }
          y[((static_cast<std::int64_t>(n) * s.cout + oc) * hout + oh) * wout + ow] = acc;
        }
      }
    }
  }
}

void conv2d_dinput(const double* dy, const double* w, double* dx, const ConvShape& s) {
  const int hout = s.hout(), wout = s.wout();
  for (int n = 0; n < s.n; ++n) {
    for (int ic = 0; ic < s.cin; ++ic) {
      for (int ih = 0; ih < s.h; ++ih) {
        for (int iw = 0; iw < s.w; ++iw) {
          double acc = 0.0;
          for (int oc = 0; oc < s.cout; ++oc) {
            for (int kh = 0; kh < s.kh; ++kh) {
              const int t = ih + s.pad - kh;
              if (t < 0 || t % s.stride != 0) continue;
              const int oh = t / s.stride;
              if (oh >= hout) continue;
              for (int kw = 0; kw < s.kw; ++kw) {
                const int u = iw + s.pad - kw;
                if (u < 0 || u % s.stride != 0) continue;
                const int ow = u / s.stride;
                if (ow >= wout) continue;
                acc += w[((static_cast<std::int64_t>(oc) * s.cin + ic) * s.kh + kh) * s.kw + kw] *
                       dy[((static_cast<std::int64_t>(n) * s.cout + oc) * hout + oh) * wout + ow];
              }
            }
          }
          dx[((static_cast<std::int64_t>(n) * s.cin + ic) * s.h + ih) * s.w + iw] += acc;
        }
      }
    }
  }
}

void conv2d_dweight(const double* x, const double* dy, double* dw, double* db,
                    const ConvShape& s) {
  const int hout = s.hout(), wout = s.wout();
  for (int oc = 0; oc < s.cout; ++oc) {
    if (db) {
      double acc = 0.0;
      for (int n = 0; n < s.n; ++n)
        for (int oh = 0; oh < hout; ++oh)
          for (int ow = 0; ow < wout; ++ow)
            acc += dy[((static_cast<std::int64_t>(n) * s.cout + oc) * hout + oh) * wout + ow];
      db[oc] += acc;
    }
    for (int ic = 0; ic < s.cin; ++ic) {
      for (int kh = 0; kh < s.kh; ++kh) {
        for (int kw = 0; kw < s.kw; ++kw) {
          double acc = 0.0;
          for (int n = 0; n < s.n; ++n) {
            for (int oh = 0; oh < hout; ++oh) {
              const int ih = oh * s.stride + kh - s.pad;
              if (ih < 0 || ih >= s.h) continue;
              for (int ow = 0; ow < wout; ++ow) {
                const int iw = ow * s.stride + kw - s.pad;
                if (iw < 0 || iw >= s.w) continue;
                acc += dy[((static_cast<std::int64_t>(n) * s.cout + oc) * hout + oh) * wout + ow] *
                       x[((static_cast<std::int64_t>(n) * s.cin + ic) * s.h + ih) * s.w + iw];
              }
            }
          }
          dw[((static_cast<std::int64_t>(oc) * s.cin + ic) * s.kh + kh) * s.kw + kw] += acc;
        }
      }
    }
  }
}

void warp_forward(const double* img, const double* field, double* out, int c, int h, int w) {
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      const std::int64_t p = static_cast<std::int64_t>(r) * w + col;
      double sx = col + field[p];
      double sy = r + field[plane + p];
      sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      int x0 = std::min(static_cast<int>(sx), w - 2);
      int y0 = std::min(static_cast<int>(sy), h - 2);
      if (w == 1) x0 = 0;
      if (h == 1) y0 = 0;
      const double ax = sx - x0;
      const double ay = sy - y0;
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      for (int ch = 0; ch < c; ++ch) {
        const double* src = img + ch * plane;
        out[ch * plane + p] = (1.0 - ay) * (1.0 - ax) * src[y0 * w + x0] +
                              (1.0 - ay) * ax * src[y0 * w + x1] +
                              ay * (1.0 - ax) * src[y1 * w + x0] + ay * ax * src[y1 * w + x1];
      }
    }
  }
}

void warp_backward(const double* img, const double* field, const double* dout, double* dimg,
                   double* dfield, int c, int h, int w) {
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      const std::int64_t p = static_cast<std::int64_t>(r) * w + col;
      const double sxr = col + field[p];
      const double syr = r + field[plane + p];
      const bool in_x = sxr > 0.0 && sxr < static_cast<double>(w - 1);
      const bool in_y = syr > 0.0 && syr < static_cast<double>(h - 1);
      const double sx = std::clamp(sxr, 0.0, static_cast<double>(w - 1));
      const double sy = std::clamp(syr, 0.0, static_cast<double>(h - 1));
      int x0 = std::min(static_cast<int>(sx), w - 2);
      int y0 = std::min(static_cast<int>(sy), h - 2);
      if (w == 1) x0 = 0;
      if (h == 1) y0 = 0;
      const double ax = sx - x0;
      const double ay = sy - y0;
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      double gx = 0.0, gy = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double* src = img + ch * plane;
        const double g = dout[ch * plane + p];
        if (dimg) {
          double* dst = dimg + ch * plane;
          dst[y0 * w + x0] += g * (1.0 - ay) * (1.0 - ax);
          dst[y0 * w + x1] += g * (1.0 - ay) * ax;
          dst[y1 * w + x0] += g * ay * (1.0 - ax);
          dst[y1 * w + x1] += g * ay * ax;
        }
        if (dfield) {
          const double v00 = src[y0 * w + x0], v01 = src[y0 * w + x1];
          const double v10 = src[y1 * w + x0], v11 = src[y1 * w + x1];
          gx += g * ((1.0 - ay) * (v01 - v00) + ay * (v11 - v10));
          gy += g * ((1.0 - ax) * (v10 - v00) + ax * (v11 - v01));
        }
      }
      if (dfield) {
        if (in_x) dfield[p] += gx;
        if (in_y) dfield[plane + p] += gy;
      }
    }
  }
}

}  // namespace mmalign::kernels::serial
